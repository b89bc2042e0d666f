import math

import numpy as np

from utils.exceptions import ConfigurationError, DimensionMismatch, GradCheckError
from .functions import DifferentiableFn


REL_ERROR_FLOOR = 1e-8


class ScalarFn:
    """
    梯度检查的对象：标量函数 f(point) 及其解析梯度
    """
    name = ''

    def value(self, point: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, point: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class CallableScalarFn(ScalarFn):
    """
    用两个函数构造ScalarFn
    """
    def __init__(self, value, gradient, name: str = ''):
        self._value = value
        self._gradient = gradient
        self.name = name

    def value(self, point):
        return float(self._value(point))

    def gradient(self, point):
        return np.asarray(self._gradient(point), dtype=np.float64)


class OpProbe(ScalarFn):
    """
    把向量值的可微函数投影为标量：f(p, x) = sum(r * op(p, x))

    检查点为参数和输入拼接的向量 [p, x.ravel()]，同时覆盖对参数和对输入的梯度。
    """
    def __init__(self, op: DifferentiableFn, params: np.ndarray, x: np.ndarray, weights: np.ndarray):
        self.op = op
        self.name = op.name
        self.n_params = int(np.size(params))
        self.x_shape = np.shape(x)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.point = np.concatenate([np.ravel(params), np.ravel(x)]).astype(np.float64)

    def unpack(self, point):
        return point[:self.n_params], point[self.n_params:].reshape(self.x_shape)

    def value(self, point):
        params, x = self.unpack(point)
        return float(np.sum(self.weights * self.op.forward(params, x)))

    def gradient(self, point):
        params, x = self.unpack(point)
        grad_p, grad_x = self.op.backward(params, x, self.weights)
        return np.concatenate([np.ravel(grad_p), np.ravel(grad_x)])

    @classmethod
    def sample(cls, op: DifferentiableFn, rng: np.random.Generator, batch: int = 3):
        params, x = op.sample(rng, batch=batch)
        out = op.forward(params, x)
        weights = rng.standard_normal(out.shape)
        return cls(op, params, x, weights)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(REL_ERROR_FLOOR, abs(analytic) + abs(numeric))


def grad_check(fn: ScalarFn, point, epsilon: float = 1e-5) -> float:
    """
    中心差分检查解析梯度

    :param fn: ScalarFn
    :param point: 检查点（参数向量）
    :param epsilon: 差分步长
    :return:
        最大相对误差 max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|)
    :raises: GradCheckError   # 函数值或梯度非有限数，coordinate为出错的坐标
    :raises: ConfigurationError
    """
    if epsilon <= 0:
        raise ConfigurationError(f'epsilon must be positive, got {epsilon}')

    point = np.array(point, dtype=np.float64).ravel()
    f0 = fn.value(point.copy())
    if not math.isfinite(f0):
        raise GradCheckError(f'{fn.name or "function"} is not finite at the check point')

    analytic = np.asarray(fn.gradient(point.copy()), dtype=np.float64).ravel()
    if analytic.shape != point.shape:
        raise DimensionMismatch(f'gradient has {analytic.size} entries, point has {point.size}')

    bad = np.flatnonzero(~np.isfinite(analytic))
    if bad.size:
        raise GradCheckError(f'{fn.name or "function"} analytic gradient is not finite', coordinate=int(bad[0]))

    worst = 0.0
    for i in range(point.size):
        orig = point[i]
        point[i] = orig + epsilon
        f_plus = fn.value(point)
        point[i] = orig - epsilon
        f_minus = fn.value(point)
        point[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise GradCheckError(f'{fn.name or "function"} is not finite near the check point', coordinate=i)

        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        worst = max(worst, relative_error(float(analytic[i]), numeric))

    return worst
