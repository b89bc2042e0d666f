"""
可微函数约定：forward给出取值，backward给出对参数和输入的解析梯度

所有函数按batch处理，输入x形状为(n, d)；参数统一展平为一维向量，便于梯度检查。
"""
import numpy as np

from utils.exceptions import ConfigurationError, DimensionMismatch
from .arrays import as_matrix, check_shape


def sigmoid(z):
    # tanh形式在|z|很大时不会溢出
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softplus(z):
    """
    log(1 + e^z)，数值稳定
    """
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))


class DifferentiableFn:
    """
    可微函数基类

    forward(params, x) -> 输出 (n, out_dim)
    backward(params, x, grad_out) -> (对params的梯度, 对x的梯度)
    """
    name = ''

    def __init__(self, in_dim: int = 0):
        # 逐元素函数的in_dim只用于sample
        self.in_dim = in_dim

    def param_size(self) -> int:
        return 0

    def forward(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, params: np.ndarray, x: np.ndarray, grad_out: np.ndarray):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, batch: int = 3):
        """
        生成一个适合梯度检查的(params, x)

        :raises: ConfigurationError   # 没有给出输入维度
        """
        self._check_in_dim()
        params = rng.standard_normal(self.param_size())
        x = rng.standard_normal((batch, self.in_dim))
        return params, x

    def _check_in_dim(self):
        if self.in_dim < 1:
            raise ConfigurationError(f'{self.name} needs in_dim >= 1 to sample, got {self.in_dim}')

    def __repr__(self):
        return f'{type(self).__name__}({self.name}, in_dim={self.in_dim})'


class Affine(DifferentiableFn):
    """
    y = x @ W.T + b，参数向量布局 [W(out, in) 按行展平, b(out)]
    """
    name = 'affine'

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__(in_dim)
        self.out_dim = out_dim

    def param_size(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim

    def split(self, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.size != self.param_size():
            raise DimensionMismatch(f'affine expects {self.param_size()} parameters, got {params.size}')

        n_w = self.out_dim * self.in_dim
        return params[:n_w].reshape(self.out_dim, self.in_dim), params[n_w:]

    @staticmethod
    def apply(weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != weight.shape[1]:
            raise DimensionMismatch(f'input dim {x.shape[-1]} != layer input dim {weight.shape[1]}')

        return x @ weight.T + bias

    @staticmethod
    def gradients(weight: np.ndarray, x: np.ndarray, grad_out: np.ndarray, need_input: bool = True):
        """
        :return:
            (dW, db, dx)    # need_input为False时dx为None
        """
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
        grad_x = grad_out @ weight if need_input else None
        return grad_w, grad_b, grad_x

    def forward(self, params, x):
        weight, bias = self.split(params)
        return self.apply(weight, bias, as_matrix(x, 'x'))

    def backward(self, params, x, grad_out):
        weight, _ = self.split(params)
        grad_w, grad_b, grad_x = self.gradients(weight, as_matrix(x, 'x'), np.asarray(grad_out))
        return np.concatenate([grad_w.ravel(), grad_b]), grad_x


class ReLU(DifferentiableFn):
    name = 'relu'

    def forward(self, params, x):
        return np.maximum(as_matrix(x, 'x'), 0.0)

    def backward(self, params, x, grad_out):
        x = as_matrix(x, 'x')
        return np.zeros(0), np.asarray(grad_out) * (x > 0.0)

    def sample(self, rng, batch=3):
        self._check_in_dim()
        # 远离0处的折点
        x = rng.standard_normal((batch, self.in_dim))
        x += np.sign(x) * 0.1
        return np.zeros(0), x


class Identity(DifferentiableFn):
    name = 'identity'

    def forward(self, params, x):
        return as_matrix(x, 'x')

    def backward(self, params, x, grad_out):
        return np.zeros(0), np.asarray(grad_out, dtype=np.float64)


class Sigmoid(DifferentiableFn):
    name = 'sigmoid'

    def forward(self, params, x):
        return sigmoid(as_matrix(x, 'x'))

    def backward(self, params, x, grad_out):
        s = sigmoid(as_matrix(x, 'x'))
        return np.zeros(0), np.asarray(grad_out) * s * (1.0 - s)


class Log(DifferentiableFn):
    """
    定义域 x > 0
    """
    name = 'log'

    def forward(self, params, x):
        return np.log(as_matrix(x, 'x'))

    def backward(self, params, x, grad_out):
        return np.zeros(0), np.asarray(grad_out) / as_matrix(x, 'x')

    def sample(self, rng, batch=3):
        self._check_in_dim()
        return np.zeros(0), rng.uniform(0.5, 2.0, size=(batch, self.in_dim))


class L2Normalize(DifferentiableFn):
    """
    按行L2归一化；零向量没有定义
    """
    name = 'l2_normalize'

    def forward(self, params, x):
        x = as_matrix(x, 'x')
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def backward(self, params, x, grad_out):
        x = as_matrix(x, 'x')
        norm = np.linalg.norm(x, axis=1, keepdims=True)
        y = x / norm
        grad_out = np.asarray(grad_out)
        proj = np.sum(y * grad_out, axis=1, keepdims=True)
        return np.zeros(0), (grad_out - y * proj) / norm


class Dot(DifferentiableFn):
    """
    y = x @ w，参数为长度in_dim的向量w，输出形状(n, 1)
    """
    name = 'dot'

    def __init__(self, in_dim: int):
        super().__init__(in_dim)

    def param_size(self) -> int:
        return self.in_dim

    def forward(self, params, x):
        x = as_matrix(x, 'x')
        w = np.asarray(params, dtype=np.float64)
        check_shape(w, (x.shape[1],), 'dot weight')
        return (x @ w).reshape(-1, 1)

    def backward(self, params, x, grad_out):
        x = as_matrix(x, 'x')
        w = np.asarray(params, dtype=np.float64)
        g = np.asarray(grad_out).reshape(-1)
        return x.T @ g, np.outer(g, w)


ACTIVATIONS = {
    'relu': ReLU(),
    'identity': Identity(),
}


def get_activation(tag: str) -> DifferentiableFn:
    """
    :raises: ConfigurationError 不支持的激活函数标签
    """
    try:
        return ACTIVATIONS[tag]
    except KeyError:
        raise ConfigurationError(f'unknown activation tag "{tag}", choices: {sorted(ACTIVATIONS)}')
