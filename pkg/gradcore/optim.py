import math
from collections import OrderedDict
from typing import Mapping

import numpy as np

from utils.exceptions import ConfigurationError, RangeError
from .arrays import check_finite, check_same_shape


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float):
    """
    velocity' = momentum * velocity + grads
    params' = params - lr * velocity'

    :return:
        (params', velocity')
    :raises: ConfigurationError
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    try:
        check_same_shape(params, grads, 'params/grads')
        check_same_shape(params, velocity, 'params/velocity')
    except ConfigurationError as exc:
        raise exc.at(module='gradcore')

    if not lr > 0:
        raise ConfigurationError(f'lr must be positive, got {lr}', module='gradcore')
    if not 0 <= momentum < 1:
        raise ConfigurationError(f'momentum must be in [0, 1), got {momentum}', module='gradcore')

    new_velocity = momentum * velocity + grads
    new_params = params - lr * new_velocity
    return new_params, new_velocity


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """
    余弦退火，最小学习率为0，每个epoch更新一次

    :raises: RangeError
    """
    if not 0 <= epoch < total_epochs:
        raise RangeError(f'epoch {epoch} out of range [0, {total_epochs})', module='gradcore')
    if not lr0 > 0:
        raise RangeError(f'lr0 must be positive, got {lr0}', module='gradcore')

    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


class SGDMomentum:
    """
    按参数名保存动量的SGD优化器

    冻结的参数不更新，部分冻结用与参数同形状首维的bool掩码表示（如分类器的旧类行）。
    """
    def __init__(self, momentum: float = 0.9):
        if not 0 <= momentum < 1:
            raise ConfigurationError(f'momentum must be in [0, 1), got {momentum}', module='gradcore')

        self.momentum = momentum
        self.velocity = OrderedDict()

    def reset(self):
        """
        每个阶段开始时动量清零
        """
        self.velocity = OrderedDict()

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float,
             row_masks: Mapping[str, np.ndarray] = None):
        """
        :param params: 参数名 -> 数组
        :param grads: 参数名 -> 梯度，不在grads中的参数视为冻结
        :param lr: 学习率
        :param row_masks: 参数名 -> 首维bool掩码，True的行保持不变
        :return:
            OrderedDict 更新后的参数
        :raises: NumericError  # 更新后出现NaN/Inf
        """
        row_masks = row_masks or {}
        updated = OrderedDict()
        for name, value in params.items():
            if name not in grads:
                updated[name] = value
                continue

            velocity = self.velocity.get(name)
            if velocity is None:
                velocity = np.zeros_like(value)

            new_value, new_velocity = sgd_momentum_step(value, grads[name], velocity, lr, self.momentum)
            mask = row_masks.get(name)
            if mask is not None and np.any(mask):
                new_value[mask] = value[mask]
                new_velocity[mask] = 0.0

            check_finite(new_value, name=name)
            updated[name] = new_value
            self.velocity[name] = new_velocity

        return updated
