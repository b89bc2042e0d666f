"""
增量阶段的损失函数

L = L_bce + L_fd + λ·L_od，λ = Ω·sqrt(|C| / |C_new|)

所有损失按batch取均值；教师模型的输出视为常量，不回传梯度。
"""
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from django.conf import settings

from gradcore.arrays import as_matrix, check_same_shape, check_finite
from gradcore.functions import sigmoid, softplus
from utils.exceptions import ConfigurationError, DegenerateInputError, RangeError
from .network import FrozenTeacher, LearnerState, backward, forward


class StrategyFlags(NamedTuple):
    indl_mask: bool = False
    use_od: bool = False
    use_fd: bool = False
    freeze_extractor: bool = False
    freeze_old_classifier: bool = False
    retrain_from_scratch: bool = False

    @property
    def distills(self) -> bool:
        return self.use_od or self.use_fd


@dataclass(frozen=True)
class DistillConfig:
    delta: float = 2.0      # π的指数分母Δ
    omega: float = 2.0      # λ的系数Ω
    eps: float = 1e-8

    def __post_init__(self):
        if not self.delta >= 1:
            raise RangeError(f'delta must be >= 1, got {self.delta}', module='losses')
        if not self.omega > 0:
            raise RangeError(f'omega must be positive, got {self.omega}', module='losses')
        if not self.eps > 0:
            raise RangeError(f'eps must be positive, got {self.eps}', module='losses')

    @classmethod
    def from_settings(cls):
        conf = settings.CIL_TRAIN
        return cls(delta=conf['DELTA'], omega=conf['OMEGA'], eps=conf['EPS'])


@dataclass(frozen=True)
class LossBreakdown:
    bce: float
    od: float
    fd: float
    lam: float
    total: float

    @classmethod
    def compose(cls, bce: float, od: float = 0.0, fd: float = 0.0, lam: float = 0.0):
        return cls(bce=float(bce), od=float(od), fd=float(fd), lam=float(lam), total=float(bce + fd + lam * od))

    def as_dict(self) -> dict:
        return {'bce': self.bce, 'od': self.od, 'fd': self.fd, 'lambda': self.lam, 'total': self.total}

    def non_finite_component(self) -> str:
        """
        :return:
            第一个非有限值的分量名，全部有限时返回''
        """
        for name, value in self.as_dict().items():
            if not math.isfinite(value):
                return name
        return ''


def _check_targets(o: np.ndarray, y: np.ndarray):
    check_same_shape(o, y, 'logits/targets')
    if not np.all((y == 0) | (y == 1)):
        raise ConfigurationError('targets must be binary', module='losses')


def _check_old_count(old_count: int, n_classes: int):
    if not 0 <= old_count < n_classes:
        raise ConfigurationError(f'old_count must be in [0, {n_classes}), got {old_count}', module='losses')


def bce_indl(o, y, old_count: int = 0) -> float:
    """
    只对新类logits [old_count, |C|) 计算的二值交叉熵，各类求和、batch取均值

    -[y·log σ(o) + (1-y)·log(1-σ(o))] = softplus(o) - y·o

    :raises: ConfigurationError
    """
    o, y = as_matrix(o, 'logits'), as_matrix(y, 'targets')
    _check_targets(o, y)
    _check_old_count(old_count, o.shape[1])

    o_new, y_new = o[:, old_count:], y[:, old_count:]
    per_example = np.sum(softplus(o_new) - y_new * o_new, axis=1)
    return float(np.mean(per_example))


def bce_indl_grad(o, y, old_count: int = 0) -> np.ndarray:
    """
    bce_indl对logits的梯度，被屏蔽的旧类列为0
    """
    o, y = as_matrix(o, 'logits'), as_matrix(y, 'targets')
    _check_targets(o, y)
    _check_old_count(old_count, o.shape[1])

    grad = np.zeros_like(o)
    grad[:, old_count:] = (sigmoid(o[:, old_count:]) - y[:, old_count:]) / o.shape[0]
    return grad


def rescale_pi(u, delta: float, eps: float = 1e-8) -> np.ndarray:
    """
    π(u)_i = (u_i + eps)^(1/Δ) / Σ_j (u_j + eps)^(1/Δ)，按最后一维归一化

    Δ > 1 时较小的值权重变大

    :raises: RangeError, DegenerateInputError
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise RangeError('rescale_pi needs non-negative values', module='losses')
    if u.shape[-1] == 0 or np.any(np.max(u, axis=-1) <= eps):
        raise DegenerateInputError('rescale_pi got an all-zero vector', module='losses')
    if not delta >= 1:
        raise RangeError(f'delta must be >= 1, got {delta}', module='losses')

    w = (u + eps) ** (1.0 / delta)
    return w / np.sum(w, axis=-1, keepdims=True)


def rescale_pi_backward(u, delta: float, grad_out, eps: float = 1e-8) -> np.ndarray:
    """
    rescale_pi对u的向量-雅可比积
    """
    u = np.asarray(u, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    w = (u + eps) ** (1.0 / delta)
    total = np.sum(w, axis=-1, keepdims=True)
    pi = w / total
    grad_w = (grad_out - np.sum(grad_out * pi, axis=-1, keepdims=True)) / total
    return grad_w * w / (delta * (u + eps))


def _od_distributions(teacher_old, student_old, cfg: DistillConfig):
    teacher_old = as_matrix(teacher_old, 'teacher logits')
    student_old = as_matrix(student_old, 'student logits')
    check_same_shape(teacher_old, student_old, 'teacher/student old logits')
    s = sigmoid(student_old)
    p = rescale_pi(sigmoid(teacher_old), cfg.delta, cfg.eps)
    q = rescale_pi(s, cfg.delta, cfg.eps)
    return p, q, s


def od_loss(teacher_old, student_old, cfg: DistillConfig) -> float:
    """
    KL(π(σ(teacher_old)) || π(σ(student_old)))，旧类求和、batch取均值；没有旧类时为0

    :raises: DimensionMismatch
    """
    if np.shape(student_old)[-1] == 0:
        return 0.0

    p, q, _ = _od_distributions(teacher_old, student_old, cfg)
    per_example = np.sum(p * (np.log(p) - np.log(q)), axis=1)
    return float(np.mean(per_example))


def od_loss_grad(teacher_old, student_old, cfg: DistillConfig) -> np.ndarray:
    """
    od_loss对学生旧类logits的梯度：(q - p)·σ(1-σ) / (Δ·(σ + eps)) / n
    """
    if np.shape(student_old)[-1] == 0:
        return np.zeros(np.shape(as_matrix(student_old)))

    p, q, s = _od_distributions(teacher_old, student_old, cfg)
    return (q - p) * s * (1.0 - s) / (cfg.delta * (s + cfg.eps)) / p.shape[0]


def _feature_norms(v_teacher, v_student, eps: float):
    v_teacher = as_matrix(v_teacher, 'teacher features')
    v_student = as_matrix(v_student, 'student features')
    check_same_shape(v_teacher, v_student, 'teacher/student features')
    norm_t = np.linalg.norm(v_teacher, axis=1)
    norm_s = np.linalg.norm(v_student, axis=1)
    if np.any(norm_t <= eps) or np.any(norm_s <= eps):
        raise DegenerateInputError('feature vector with zero norm', module='losses')

    return v_teacher, v_student, norm_t, norm_s


def fd_loss(v_teacher, v_student, eps: float = 1e-8) -> float:
    """
    1 - cos(v_teacher, v_student)，batch取均值，取值 [0, 2]

    :raises: DegenerateInputError
    """
    v_teacher, v_student, norm_t, norm_s = _feature_norms(v_teacher, v_student, eps)
    cos = np.sum(v_teacher * v_student, axis=1) / (norm_t * norm_s)
    return float(np.mean(1.0 - cos))


def fd_loss_grad(v_teacher, v_student, eps: float = 1e-8) -> np.ndarray:
    """
    fd_loss对学生特征的梯度：-(û/‖v‖ - (û·v)·v/‖v‖³) / n，û为归一化的教师特征
    """
    v_teacher, v_student, norm_t, norm_s = _feature_norms(v_teacher, v_student, eps)
    u_hat = v_teacher / norm_t[:, None]
    dot = np.sum(u_hat * v_student, axis=1, keepdims=True)
    norm_s = norm_s[:, None]
    grad_cos = u_hat / norm_s - dot * v_student / norm_s ** 3
    return -grad_cos / v_student.shape[0]


def adaptive_lambda(total_classes: int, new_classes: int, omega: float) -> float:
    """
    λ = Ω·sqrt(|C| / |C_new|)

    :raises: ConfigurationError
    """
    if new_classes < 1:
        raise ConfigurationError(f'new_classes must be >= 1, got {new_classes}', module='losses')
    if total_classes < new_classes:
        raise ConfigurationError(f'total_classes({total_classes}) < new_classes({new_classes})', module='losses')

    return omega * math.sqrt(total_classes / new_classes)


def total_loss(learner: LearnerState, teacher: FrozenTeacher, x, y, cfg: DistillConfig, flags: StrategyFlags):
    """
    按策略组合各项损失并计算梯度

    :param learner: 当前学习器，分类器已扩展到本阶段的类
    :param teacher: 上一阶段冻结的学习器，策略不做蒸馏或phase 0时可为None
    :param x: 输入 (n, D)
    :param y: 多热目标 (n, |C|)，非本阶段类的列为0
    :return:
        (LossBreakdown, OrderedDict 参数名 -> 梯度)    # 冻结的参数不在梯度中
    :raises: ConfigurationError  # 需要蒸馏但没有教师
    """
    old = learner.old_class_count
    incremental = learner.phase_index >= 1 and old > 0
    distill = incremental and flags.distills
    if distill and teacher is None:
        raise ConfigurationError('distillation is enabled but no teacher was given', module='losses',
                                 phase=learner.phase_index)
    if distill and teacher.class_count != old:
        raise ConfigurationError(f'teacher has {teacher.class_count} classes, learner has {old} old classes',
                                 module='losses', phase=learner.phase_index)

    cache = forward(learner, x)
    y = as_matrix(y, 'targets')
    start = old if (flags.indl_mask and incremental) else 0
    bce = bce_indl(cache.o, y, start)
    grad_o = bce_indl_grad(cache.o, y, start)

    od = fd = lam = 0.0
    grad_v = None
    if distill:
        t_v, t_o = teacher.forward(cache.x)
        if flags.use_od:
            lam = adaptive_lambda(learner.class_count, learner.new_class_count, cfg.omega)
            od = od_loss(t_o, cache.o[:, :old], cfg)
            grad_o[:, :old] += lam * od_loss_grad(t_o, cache.o[:, :old], cfg)
        if flags.use_fd:
            fd = fd_loss(t_v, cache.v, cfg.eps)
            grad_v = fd_loss_grad(t_v, cache.v, cfg.eps)

    breakdown = LossBreakdown.compose(bce=bce, od=od, fd=fd, lam=lam)
    train_extractor = not (flags.freeze_extractor and learner.phase_index >= 1)
    grads = backward(learner, cache, grad_o, grad_v, train_extractor=train_extractor)
    return breakdown, grads


def parameter_gradients(learner: LearnerState, grads: 'OrderedDict[str, np.ndarray]'):
    """
    梯度按named_parameters顺序排列，不训练的参数补0
    """
    full = OrderedDict()
    for name, value in learner.named_parameters().items():
        grad = grads.get(name)
        full[name] = np.zeros_like(value) if grad is None else grad
        check_finite(full[name], name=f'gradient of {name}', module='losses')
    return full
