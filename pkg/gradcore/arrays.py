"""
Vector / Matrix 约定：float64 numpy数组，维度创建后不变
"""
from collections import OrderedDict
from typing import Mapping

import numpy as np

from utils.exceptions import DimensionMismatch, NumericError


def as_vector(values, name: str = 'vector') -> np.ndarray:
    """
    转为一维float64数组（拷贝）

    :raises: DimensionMismatch
    """
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f'{name} must be 1-dimensional, got shape {arr.shape}')

    return arr


def as_matrix(values, name: str = 'matrix') -> np.ndarray:
    """
    转为二维float64数组（拷贝）；一维输入视为只有一行的batch

    :raises: DimensionMismatch
    """
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f'{name} must be 2-dimensional, got shape {arr.shape}')

    return arr


def check_shape(arr: np.ndarray, shape: tuple, name: str = 'array'):
    """
    shape中为None的维度不检查

    :raises: DimensionMismatch
    """
    if arr.ndim != len(shape) or any(s is not None and s != a for a, s in zip(arr.shape, shape)):
        raise DimensionMismatch(f'{name} has shape {arr.shape}, expected {shape}')


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = 'operands'):
    if a.shape != b.shape:
        raise DimensionMismatch(f'{what} shapes differ: {a.shape} != {b.shape}')


def check_finite(arr, name: str = 'array', **kwargs):
    """
    :raises: NumericError
    """
    if not np.all(np.isfinite(arr)):
        raise NumericError(f'{name} contains NaN or Inf', **kwargs)


def readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def flatten_parameters(named: Mapping[str, np.ndarray]) -> np.ndarray:
    """
    按名称顺序把参数拼接为一个向量
    """
    if not named:
        return np.zeros(0, dtype=np.float64)

    return np.concatenate([np.ravel(v) for v in named.values()]).astype(np.float64)


def unflatten_parameters(vector: np.ndarray, like: Mapping[str, np.ndarray]) -> 'OrderedDict[str, np.ndarray]':
    """
    flatten_parameters的逆操作，形状取自like

    :raises: DimensionMismatch
    """
    total = sum(int(np.size(v)) for v in like.values())
    if vector.size != total:
        raise DimensionMismatch(f'parameter vector has {vector.size} entries, expected {total}')

    out = OrderedDict()
    offset = 0
    for name, ref in like.items():
        size = int(np.size(ref))
        out[name] = np.array(vector[offset:offset + size], dtype=np.float64).reshape(np.shape(ref))
        offset += size

    return out
