"""
增量学习器：特征提取器 F(θ) + 分类器 H(φ)

logits布局 o = {o_old, o_new}，旧类下标 [0, old_class_count) 在扩展分类器后不移动。
"""
import copy
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from django.conf import settings

from gradcore.arrays import as_matrix, check_shape, check_finite, readonly
from gradcore.functions import Affine, get_activation
from utils.exceptions import ConfigurationError, DimensionMismatch


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: Tuple[int, ...] = (64, 64)
    embedding_dim: int = 32
    init_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, 'hidden_dims', tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1 or self.embedding_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ConfigurationError(
                f'layer sizes must be positive, got input_dim={self.input_dim}, '
                f'hidden_dims={self.hidden_dims}, embedding_dim={self.embedding_dim}', module='model')
        if self.init_scale < 0:
            raise ConfigurationError(f'init_scale must be >= 0, got {self.init_scale}', module='model')

    @classmethod
    def from_settings(cls, input_dim: int, **overrides):
        conf = settings.CIL_MODEL
        kwargs = {
            'hidden_dims': conf['HIDDEN_DIMS'],
            'embedding_dim': conf['EMBEDDING_DIM'],
            'init_scale': conf['INIT_SCALE'],
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(input_dim=input_dim, **kwargs)


@dataclass
class ExtractorLayer:
    weight: np.ndarray      # (out, in)
    bias: np.ndarray        # (out,)
    activation: str = 'relu'

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass
class ExtractorParams:
    layers: List[ExtractorLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError('extractor needs at least one layer', module='model')

        for i, layer in enumerate(self.layers):
            get_activation(layer.activation)
            check_shape(layer.bias, (layer.out_dim,), f'extractor layer {i} bias')
            if i > 0 and layer.in_dim != self.layers[i - 1].out_dim:
                raise DimensionMismatch(
                    f'extractor layer {i} expects {layer.in_dim} inputs, '
                    f'previous layer gives {self.layers[i - 1].out_dim}', module='model')

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class ClassifierParams:
    weight: np.ndarray          # (class_count, embedding_dim)
    bias: np.ndarray            # (class_count,)
    frozen_mask: np.ndarray = None

    def __post_init__(self):
        check_shape(self.weight, (None, None), 'classifier weight')
        check_shape(self.bias, (self.weight.shape[0],), 'classifier bias')
        if self.frozen_mask is None:
            self.frozen_mask = np.zeros(self.weight.shape[0], dtype=bool)
        else:
            self.frozen_mask = np.asarray(self.frozen_mask, dtype=bool)
            check_shape(self.frozen_mask, (self.weight.shape[0],), 'classifier frozen_mask')

    @property
    def class_count(self) -> int:
        return self.weight.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def empty(cls, embedding_dim: int):
        return cls(weight=np.zeros((0, embedding_dim)), bias=np.zeros(0))


@dataclass
class LearnerState:
    extractor: ExtractorParams
    classifier: ClassifierParams
    phase_index: int = 0
    old_class_count: int = 0
    new_class_count: int = 0

    def __post_init__(self):
        if self.classifier.embedding_dim != self.extractor.embedding_dim:
            raise DimensionMismatch(
                f'classifier takes {self.classifier.embedding_dim}-dim features, '
                f'extractor gives {self.extractor.embedding_dim}', module='model')
        if self.old_class_count + self.new_class_count != self.class_count:
            raise ConfigurationError(
                f'old_class_count({self.old_class_count}) + new_class_count({self.new_class_count}) '
                f'!= class_count({self.class_count})', module='model')

    @property
    def class_count(self) -> int:
        return self.classifier.class_count

    def named_parameters(self) -> 'OrderedDict[str, np.ndarray]':
        named = OrderedDict()
        for i, layer in enumerate(self.extractor.layers):
            named[f'extractor.{i}.weight'] = layer.weight
            named[f'extractor.{i}.bias'] = layer.bias
        named['classifier.weight'] = self.classifier.weight
        named['classifier.bias'] = self.classifier.bias
        return named

    def row_masks(self) -> dict:
        """
        优化器使用的冻结行掩码
        """
        mask = self.classifier.frozen_mask
        if not mask.any():
            return {}

        return {'classifier.weight': mask, 'classifier.bias': mask}

    def load_parameters(self, named):
        """
        用named中的数组替换同名参数，未给出的参数不变

        :raises: DimensionMismatch
        """
        current = self.named_parameters()
        for name, value in named.items():
            if name not in current:
                raise ConfigurationError(f'unknown parameter "{name}"', module='model')
            check_shape(np.asarray(value), current[name].shape, name)
            check_finite(value, name=name, module='model')

        for i, layer in enumerate(self.extractor.layers):
            layer.weight = named.get(f'extractor.{i}.weight', layer.weight)
            layer.bias = named.get(f'extractor.{i}.bias', layer.bias)
        self.classifier.weight = named.get('classifier.weight', self.classifier.weight)
        self.classifier.bias = named.get('classifier.bias', self.classifier.bias)
        return self

    def copy(self) -> 'LearnerState':
        return copy.deepcopy(self)


class FrozenTeacher:
    """
    上一阶段学习器的只读深拷贝；所有数组不可写
    """
    def __init__(self, learner: LearnerState):
        state = learner.copy()
        for arr in state.named_parameters().values():
            readonly(arr)
        readonly(state.classifier.frozen_mask)
        self._state = state

    @property
    def class_count(self) -> int:
        return self._state.class_count

    @property
    def phase_index(self) -> int:
        return self._state.phase_index

    @property
    def state(self) -> LearnerState:
        return self._state

    def forward(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """
        :return:
            (v, o)  # 特征和logits
        """
        v = extract(self._state.extractor, x)
        return v, classify(self._state.classifier, v)


def _init_layer(rng: np.random.Generator, in_dim: int, out_dim: int, activation: str) -> ExtractorLayer:
    weight = rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)
    return ExtractorLayer(weight=weight, bias=np.zeros(out_dim), activation=activation)


def build_extractor(cfg: ModelConfig, seed) -> ExtractorParams:
    """
    隐藏层ReLU，最后的嵌入层identity
    """
    rng = np.random.default_rng(seed)
    dims = (cfg.input_dim,) + cfg.hidden_dims + (cfg.embedding_dim,)
    layers = []
    for i in range(len(dims) - 1):
        activation = 'relu' if i < len(dims) - 2 else 'identity'
        layers.append(_init_layer(rng, dims[i], dims[i + 1], activation))

    return ExtractorParams(layers=layers)


def build_learner(cfg: ModelConfig, n_classes: int, seed) -> LearnerState:
    """
    phase 0 的新学习器，n_classes个分类单元全部视为新类
    """
    seed = np.atleast_1d(seed).tolist()
    extractor = build_extractor(cfg, seed + [0])
    classifier = expand_classifier(ClassifierParams.empty(cfg.embedding_dim), n_classes,
                                   init_scale=cfg.init_scale, seed=seed + [1])
    return LearnerState(extractor=extractor, classifier=classifier, phase_index=0,
                        old_class_count=0, new_class_count=n_classes)


def extract(extractor: ExtractorParams, x) -> np.ndarray:
    """
    v = F(x)；一维输入返回一维特征

    :raises: DimensionMismatch
    """
    single = np.ndim(x) == 1
    h = as_matrix(x, 'x')
    if h.shape[1] != extractor.input_dim:
        raise DimensionMismatch(f'input has {h.shape[1]} features, extractor expects {extractor.input_dim}',
                                module='model')

    for layer in extractor.layers:
        h = get_activation(layer.activation).forward(None, Affine.apply(layer.weight, layer.bias, h))

    return h[0] if single else h


def classify(classifier: ClassifierParams, v) -> np.ndarray:
    """
    o_k = w_k·v + b_k

    逐类独立求和，增加分类单元不改变已有类的logits

    :raises: DimensionMismatch
    """
    single = np.ndim(v) == 1
    v = as_matrix(v, 'v')
    if v.shape[1] != classifier.embedding_dim:
        raise DimensionMismatch(f'feature has {v.shape[1]} dims, classifier expects {classifier.embedding_dim}',
                                module='model')

    o = (v[:, None, :] * classifier.weight[None, :, :]).sum(axis=-1) + classifier.bias
    return o[0] if single else o


def expand_classifier(classifier: ClassifierParams, n_new: int, init_scale: float, seed) -> ClassifierParams:
    """
    追加n_new个分类单元，权重均匀分布于[-init_scale, init_scale]，偏置为0；旧单元逐位不变

    :raises: ConfigurationError
    """
    if n_new < 1:
        raise ConfigurationError(f'n_new must be >= 1, got {n_new}', module='model')
    if init_scale < 0:
        raise ConfigurationError(f'init_scale must be >= 0, got {init_scale}', module='model')

    rng = np.random.default_rng(seed)
    new_weight = init_scale * rng.uniform(-1.0, 1.0, size=(n_new, classifier.embedding_dim))
    return ClassifierParams(
        weight=np.vstack([classifier.weight, new_weight]),
        bias=np.concatenate([classifier.bias, np.zeros(n_new)]),
        frozen_mask=np.concatenate([classifier.frozen_mask, np.zeros(n_new, dtype=bool)]),
    )


def freeze(learner: LearnerState) -> FrozenTeacher:
    return FrozenTeacher(learner)


def weight_norms(classifier: ClassifierParams) -> List[float]:
    """
    每个类权重向量的L2范数，不含偏置
    """
    return [float(n) for n in np.sqrt(np.sum(classifier.weight * classifier.weight, axis=1))]


@dataclass
class ForwardCache:
    x: np.ndarray
    layer_inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    v: np.ndarray = None
    o: np.ndarray = None


def forward(learner: LearnerState, x) -> ForwardCache:
    """
    前向计算并保存反向传播需要的中间值
    """
    h = as_matrix(x, 'x')
    if h.shape[1] != learner.extractor.input_dim:
        raise DimensionMismatch(f'input has {h.shape[1]} features, extractor expects '
                                f'{learner.extractor.input_dim}', module='model')

    cache = ForwardCache(x=h)
    for layer in learner.extractor.layers:
        cache.layer_inputs.append(h)
        z = Affine.apply(layer.weight, layer.bias, h)
        cache.pre_activations.append(z)
        h = get_activation(layer.activation).forward(None, z)

    cache.v = h
    cache.o = classify(learner.classifier, h)
    return cache


def backward(learner: LearnerState, cache: ForwardCache, grad_o: np.ndarray, grad_v: np.ndarray = None,
             train_extractor: bool = True) -> 'OrderedDict[str, np.ndarray]':
    """
    :param grad_o: 损失对logits的梯度 (n, class_count)
    :param grad_v: 损失直接对特征的梯度 (n, embedding_dim)，如特征蒸馏项
    :param train_extractor: False时不返回提取器参数的梯度
    :return:
        OrderedDict 参数名 -> 梯度；frozen_mask的行梯度为0
    """
    classifier = learner.classifier
    check_shape(grad_o, cache.o.shape, 'grad_o')
    grads = OrderedDict()

    grad_w, grad_b, grad_h = Affine.gradients(classifier.weight, cache.v, grad_o, need_input=train_extractor)
    if classifier.frozen_mask.any():
        grad_w[classifier.frozen_mask] = 0.0
        grad_b[classifier.frozen_mask] = 0.0

    if train_extractor:
        if grad_v is not None:
            check_shape(grad_v, cache.v.shape, 'grad_v')
            grad_h = grad_h + grad_v

        layers = learner.extractor.layers
        for i in reversed(range(len(layers))):
            layer = layers[i]
            _, grad_z = get_activation(layer.activation).backward(None, cache.pre_activations[i], grad_h)
            d_w, d_b, grad_h = Affine.gradients(layer.weight, cache.layer_inputs[i], grad_z, need_input=i > 0)
            grads[f'extractor.{i}.weight'] = d_w
            grads[f'extractor.{i}.bias'] = d_b

    grads['classifier.weight'] = grad_w
    grads['classifier.bias'] = grad_b
    return grads
