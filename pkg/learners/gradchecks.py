"""
梯度检查套件：对每个可微函数和每个损失在随机点上做中心差分检查
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from gradcore.arrays import flatten_parameters, unflatten_parameters
from gradcore.functions import Affine, Dot, L2Normalize, Log, ReLU, Sigmoid
from gradcore.gradcheck import CallableScalarFn, OpProbe, ScalarFn, grad_check
from utils.exceptions import CILError, DegenerateInputError
from .losses import (
    DistillConfig, StrategyFlags, bce_indl, bce_indl_grad, fd_loss, fd_loss_grad, od_loss, od_loss_grad,
    parameter_gradients, rescale_pi, rescale_pi_backward, total_loss
)
from .network import ModelConfig, build_learner, expand_classifier, forward, freeze


logger = logging.getLogger('cil.gradcheck')

IODFD_FLAGS = StrategyFlags(indl_mask=True, use_od=True, use_fd=True)
OD_ONLY_FLAGS = StrategyFlags(use_od=True)


@dataclass(frozen=True)
class GradCheckItem:
    name: str
    build: Callable     # build(rng) -> (ScalarFn, point)


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool
    message: str = ''

    def as_dict(self):
        return {'name': self.name, 'max_rel_error': self.max_rel_error, 'passed': self.passed,
                'message': self.message}


class ScaledGradient(ScalarFn):
    """
    把梯度乘以factor，用于确认检查器能发现错误的梯度
    """
    def __init__(self, fn: ScalarFn, factor: float):
        self.fn = fn
        self.factor = factor
        self.name = fn.name

    def value(self, point):
        return self.fn.value(point)

    def gradient(self, point):
        return self.factor * self.fn.gradient(point)


class LearnerLossProbe(ScalarFn):
    """
    total_loss看作全部参数展平后的标量函数
    """
    def __init__(self, learner, teacher, x, y, cfg: DistillConfig, flags: StrategyFlags, name: str):
        self.learner = learner
        self.teacher = teacher
        self.x = x
        self.y = y
        self.cfg = cfg
        self.flags = flags
        self.name = name
        self.like = learner.named_parameters()
        self.point = flatten_parameters(self.like)

    def _learner_at(self, point):
        learner = self.learner.copy()
        return learner.load_parameters(unflatten_parameters(np.asarray(point), self.like))

    def value(self, point):
        breakdown, _ = total_loss(self._learner_at(point), self.teacher, self.x, self.y, self.cfg, self.flags)
        return breakdown.total

    def gradient(self, point):
        learner = self._learner_at(point)
        _, grads = total_loss(learner, self.teacher, self.x, self.y, self.cfg, self.flags)
        return flatten_parameters(parameter_gradients(learner, grads))


def _op_item(op) -> GradCheckItem:
    def build(rng):
        probe = OpProbe.sample(op, rng)
        return probe, probe.point
    return GradCheckItem(op.name, build)


def _random_targets(rng, shape):
    y = (rng.random(shape) < 0.5).astype(np.float64)
    y[:, -1] = 1.0
    return y


def _bce_item() -> GradCheckItem:
    def build(rng):
        shape = (3, 4)
        y = _random_targets(rng, shape)

        def value(p):
            return bce_indl(p.reshape(shape), y, old_count=1)

        def gradient(p):
            return bce_indl_grad(p.reshape(shape), y, old_count=1).ravel()

        return CallableScalarFn(value, gradient, name='bce_indl'), rng.standard_normal(shape).ravel()
    return GradCheckItem('bce_indl', build)


def _rescale_pi_item() -> GradCheckItem:
    def build(rng):
        shape = (3, 4)
        weights = rng.standard_normal(shape)

        def value(p):
            return np.sum(weights * rescale_pi(p.reshape(shape), 2.0))

        def gradient(p):
            return rescale_pi_backward(p.reshape(shape), 2.0, weights).ravel()

        point = rng.uniform(0.1, 1.0, size=shape).ravel()
        return CallableScalarFn(value, gradient, name='rescale_pi'), point
    return GradCheckItem('rescale_pi', build)


def _od_item() -> GradCheckItem:
    def build(rng):
        shape = (3, 4)
        cfg = DistillConfig(delta=2.0)
        teacher = rng.standard_normal(shape) * 2.0

        def value(p):
            return od_loss(teacher, p.reshape(shape), cfg)

        def gradient(p):
            return od_loss_grad(teacher, p.reshape(shape), cfg).ravel()

        return CallableScalarFn(value, gradient, name='od_loss'), (rng.standard_normal(shape) * 2.0).ravel()
    return GradCheckItem('od_loss', build)


def _fd_item() -> GradCheckItem:
    def build(rng):
        shape = (3, 5)
        teacher = rng.standard_normal(shape)

        def value(p):
            return fd_loss(teacher, p.reshape(shape))

        def gradient(p):
            return fd_loss_grad(teacher, p.reshape(shape)).ravel()

        return CallableScalarFn(value, gradient, name='fd_loss'), rng.standard_normal(shape).ravel()
    return GradCheckItem('fd_loss', build)


TOY_MARGIN = 1e-3
TOY_MIN_FEATURE_NORM = 0.1


def _randomize_biases(learner, rng):
    for layer in learner.extractor.layers:
        layer.bias = rng.uniform(0.1, 0.5, size=layer.out_dim) * rng.choice([-1.0, 1.0], size=layer.out_dim)
    return learner


def _well_conditioned(learner, x) -> bool:
    """
    ReLU前激活离折点至少TOY_MARGIN，特征范数不小于TOY_MIN_FEATURE_NORM
    """
    cache = forward(learner, x)
    hidden = cache.pre_activations[:-1]
    if any(np.any(np.abs(z) < TOY_MARGIN) for z in hidden):
        return False
    return bool(np.all(np.linalg.norm(cache.v, axis=1) >= TOY_MIN_FEATURE_NORM))


def toy_incremental_problem(rng, n_old: int = 2, n_new: int = 1, batch: int = 4, max_draws: int = 100):
    """
    phase 1的小型问题：教师与学生参数不同，使三项损失都不为0

    偏置非0；x逐行重抽，直到教师和学生的每一行都满足_well_conditioned

    :return:
        (learner, teacher, x, y)
    :raises: DegenerateInputError   # max_draws次内抽不到合格的行
    """
    cfg = ModelConfig(input_dim=4, hidden_dims=(8,), embedding_dim=3, init_scale=0.5)
    seed = [int(s) for s in rng.integers(0, 2 ** 31, size=2)]
    teacher_learner = _randomize_biases(build_learner(cfg, n_old, seed=[seed[0]]), rng)
    learner = _randomize_biases(build_learner(cfg, n_old, seed=[seed[1]]), rng)
    learner.classifier = expand_classifier(learner.classifier, n_new, init_scale=cfg.init_scale, seed=seed)
    learner.phase_index = 1
    learner.old_class_count = n_old
    learner.new_class_count = n_new

    rows = []
    for _ in range(max_draws * batch):
        row = rng.standard_normal((1, cfg.input_dim))
        if _well_conditioned(teacher_learner, row) and _well_conditioned(learner, row):
            rows.append(row)
            if len(rows) == batch:
                break
    else:
        raise DegenerateInputError(f'no well-conditioned toy batch after {max_draws * batch} draws',
                                   module='gradcheck')

    x = np.vstack(rows)
    y = np.zeros((batch, n_old + n_new))
    y[:, n_old:] = _random_targets(rng, (batch, n_new))
    return learner, freeze(teacher_learner), x, y


def _total_loss_item(flags: StrategyFlags, label: str) -> GradCheckItem:
    name = f'total_loss[{label}]'

    def build(rng):
        learner, teacher, x, y = toy_incremental_problem(rng)
        probe = LearnerLossProbe(learner, teacher, x, y, DistillConfig(), flags, name=name)
        return probe, probe.point
    return GradCheckItem(name, build)


def default_items() -> List[GradCheckItem]:
    ops = [Affine(4, 3), ReLU(5), Sigmoid(3), Log(4), L2Normalize(3), Dot(4)]
    return [_op_item(op) for op in ops] + [
        _bce_item(),
        _rescale_pi_item(),
        _od_item(),
        _fd_item(),
        _total_loss_item(IODFD_FLAGS, 'IODFD'),
        _total_loss_item(OD_ONLY_FLAGS, 'OD_ONLY'),
    ]


def corrupt_item(item: GradCheckItem, factor: float = 1.5) -> GradCheckItem:
    """
    同名的检查项，解析梯度被乘以factor
    """
    def build(rng):
        fn, point = item.build(rng)
        return ScaledGradient(fn, factor), point
    return GradCheckItem(item.name, build)


def check_item(item: GradCheckItem, rng: np.random.Generator, points: int, epsilon: float,
               tolerance: float) -> GradCheckResult:
    worst = 0.0
    for _ in range(points):
        try:
            fn, point = item.build(rng)
            err = grad_check(fn, point, epsilon=epsilon)
        except CILError as exc:
            logger.warning(f'{item.name}: {exc}')
            return GradCheckResult(item.name, float('inf'), False, str(exc))
        worst = max(worst, err)

    passed = worst < tolerance
    message = '' if passed else f'max relative error {worst:.3e} >= {tolerance:.1e}'
    return GradCheckResult(item.name, worst, passed, message)


def run_gradcheck_suite(items: Sequence[GradCheckItem] = None, points: int = 10, epsilon: float = 1e-5,
                        tolerance: float = 1e-4, seed: int = 0) -> List[GradCheckResult]:
    """
    每个检查项使用独立的随机流 [seed, 序号]
    """
    items = default_items() if items is None else list(items)
    results = []
    for index, item in enumerate(items):
        rng = np.random.default_rng([seed, index])
        result = check_item(item, rng, points=points, epsilon=epsilon, tolerance=tolerance)
        logger.debug(f'gradcheck {result.name}: worst={result.max_rel_error:.3e} passed={result.passed}')
        results.append(result)

    return results
