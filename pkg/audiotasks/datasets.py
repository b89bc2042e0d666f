"""
多标签数据集：每个clip是一个特征向量和一个非空的类标签集合
"""
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from gradcore.arrays import as_vector
from utils.exceptions import DimensionMismatch, RangeError


@dataclass(frozen=True, eq=False)
class Example:
    clip_id: str
    x: np.ndarray
    labels: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'x', as_vector(self.x, f'features of {self.clip_id}'))
        object.__setattr__(self, 'labels', tuple(sorted(set(int(c) for c in self.labels))))

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented

        return (self.clip_id == other.clip_id and self.labels == other.labels
                and np.array_equal(self.x, other.x))

    __hash__ = None

    def has_any(self, classes) -> bool:
        return not set(self.labels).isdisjoint(classes)


@dataclass(frozen=True)
class Dataset:
    dim: int
    n_classes: int
    examples: Tuple[Example, ...]

    def __post_init__(self):
        object.__setattr__(self, 'examples', tuple(self.examples))
        for ex in self.examples:
            if ex.x.shape != (self.dim,):
                raise DimensionMismatch(f'clip {ex.clip_id} has {ex.x.size} features, dataset dim is {self.dim}',
                                        module='data')
            if any(not 0 <= c < self.n_classes for c in ex.labels):
                raise RangeError(f'clip {ex.clip_id} has labels {ex.labels} outside [0, {self.n_classes})',
                                 module='data')

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def clip_ids(self):
        return [ex.clip_id for ex in self.examples]

    def subset(self, indices: Iterable[int]) -> 'Dataset':
        return Dataset(dim=self.dim, n_classes=self.n_classes, examples=tuple(self.examples[i] for i in indices))


def feature_matrix(examples: Sequence[Example], dim: int) -> np.ndarray:
    if not examples:
        return np.zeros((0, dim))

    return np.vstack([ex.x for ex in examples])


def multi_hot(examples: Sequence[Example], columns: Sequence[int], active: Iterable[int] = None) -> np.ndarray:
    """
    按columns的顺序编码多热目标，只置位active中的类（默认全部columns）
    """
    position = {c: i for i, c in enumerate(columns)}
    active = set(columns if active is None else active)
    y = np.zeros((len(examples), len(columns)))
    for row, ex in enumerate(examples):
        for c in ex.labels:
            if c in active and c in position:
                y[row, position[c]] = 1.0

    return y
