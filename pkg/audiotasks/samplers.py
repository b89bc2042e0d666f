import math
from typing import Iterator, List, Tuple

import numpy as np

from utils.exceptions import ConfigurationError
from .phases import PhaseDataset


class BalancedBatchSampler:
    """
    类均衡的mini-batch采样

    每个目标类一个打乱的clip下标队列；batch中的位置按类轮流分配，从该类队列取一个clip，
    队列取完后重新打乱。任意前缀中各类被抽中的次数最多相差1。
    """
    def __init__(self, pd: PhaseDataset, batch_size: int, seed=0):
        if batch_size < 1:
            raise ConfigurationError(f'batch_size must be >= 1, got {batch_size}', module='data')

        pd.check_non_empty()
        self.batch_size = batch_size
        self.n_examples = len(pd)
        self.classes = list(pd.target_classes)
        self._pools = [np.asarray(idx, dtype=np.int64) for idx in pd.target_indices().values()]
        self._rng = np.random.default_rng(seed)
        self._queues = [self._shuffled(pool) for pool in self._pools]
        self._class_cursor = 0

    def _shuffled(self, pool: np.ndarray) -> List[int]:
        return [int(i) for i in self._rng.permutation(pool)]

    def next_slot(self) -> Tuple[int, int]:
        """
        :return:
            (类, 样本下标)
        """
        pos = self._class_cursor
        self._class_cursor = (pos + 1) % len(self.classes)
        queue = self._queues[pos]
        if not queue:
            queue = self._queues[pos] = self._shuffled(self._pools[pos])

        return self.classes[pos], queue.pop(0)

    def next_batch(self) -> List[int]:
        return [self.next_slot()[1] for _ in range(self.batch_size)]

    def __iter__(self) -> Iterator[List[int]]:
        while True:
            yield self.next_batch()

    def __len__(self):
        """
        每个epoch的batch数
        """
        return self.batches_per_epoch

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.n_examples / self.batch_size)

    def epoch(self) -> List[List[int]]:
        return [self.next_batch() for _ in range(self.batches_per_epoch)]


def balanced_batches(pd: PhaseDataset, batch_size: int, seed=0, n_batches: int = None):
    """
    :param n_batches: None时返回无限的batch迭代器，否则返回n_batches个batch的列表
    """
    sampler = BalancedBatchSampler(pd, batch_size, seed=seed)
    if n_batches is None:
        return iter(sampler)

    return [sampler.next_batch() for _ in range(n_batches)]
