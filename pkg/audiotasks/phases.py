"""
阶段划分和每个阶段的训练/评估视图

训练视图只编码本阶段的类，其他阶段的标签被忽略；同一个clip可以出现在多个阶段的视图中。
评估视图编码到当前阶段为止学过的全部类，不评估未来阶段的类。
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from utils.exceptions import ConfigurationError, EmptyViewError, RangeError
from .datasets import Dataset, Example, feature_matrix, multi_hot


PLAN_STREAM = 3
SPLIT_STREAM = 4


@dataclass(frozen=True)
class PhasePlan:
    phases: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        phases = tuple(tuple(int(c) for c in p) for p in self.phases)
        object.__setattr__(self, 'phases', phases)
        if not phases:
            raise ConfigurationError('phase plan has no phases', module='data')

        seen = set()
        for i, classes in enumerate(phases):
            if not classes:
                raise ConfigurationError(f'phase {i} has no classes', module='data')
            if any(c < 0 for c in classes):
                raise ConfigurationError(f'phase {i} has negative class ids', module='data')
            dup = seen.intersection(classes)
            if dup or len(set(classes)) != len(classes):
                raise ConfigurationError(f'phase {i} repeats classes {sorted(dup) or list(classes)}', module='data')
            seen.update(classes)

    @classmethod
    def from_sizes(cls, n_classes: int, base_size: int, increment_size: int, increments: int, seed: int = 0,
                   shuffle: bool = True) -> 'PhasePlan':
        """
        类的顺序是按seed打乱的排列，所有策略使用同一顺序

        :raises: ConfigurationError
        """
        if base_size < 1 or increments < 0 or (increments > 0 and increment_size < 1):
            raise ConfigurationError(f'invalid plan sizes base={base_size}, increment={increment_size}, '
                                     f'increments={increments}', module='data')
        needed = base_size + increment_size * increments
        if needed > n_classes:
            raise ConfigurationError(f'plan needs {needed} classes, dataset has {n_classes}', module='data')

        order = np.arange(n_classes)
        if shuffle:
            order = np.random.default_rng([seed, PLAN_STREAM]).permutation(n_classes)

        order = [int(c) for c in order]
        phases = [order[:base_size]]
        for i in range(increments):
            start = base_size + i * increment_size
            phases.append(order[start:start + increment_size])
        return cls(phases=tuple(tuple(p) for p in phases))

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @property
    def all_classes(self) -> Tuple[int, ...]:
        return self.classes_so_far(self.n_phases - 1)

    def check_phase(self, phase: int):
        if not 0 <= phase < self.n_phases:
            raise RangeError(f'phase {phase} out of range [0, {self.n_phases})', module='data')

    def classes(self, phase: int) -> Tuple[int, ...]:
        self.check_phase(phase)
        return self.phases[phase]

    def classes_so_far(self, phase: int) -> Tuple[int, ...]:
        """
        phase 0..phase 的类按顺序拼接，旧类的位置不会改变
        """
        self.check_phase(phase)
        return tuple(c for p in self.phases[:phase + 1] for c in p)

    def check_dataset(self, dataset: Dataset):
        missing = [c for c in self.all_classes if c >= dataset.n_classes]
        if missing:
            raise ConfigurationError(f'plan classes {missing} are not in the dataset ({dataset.n_classes} classes)',
                                     module='data')


@dataclass(frozen=True, eq=False)
class PhaseDataset:
    """
    y的列按columns排列；只有target_classes的列可能为1
    """
    phase: int
    examples: Tuple[Example, ...]
    target_classes: Tuple[int, ...]
    columns: Tuple[int, ...]
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def build(cls, phase: int, examples: Sequence[Example], target_classes, columns, dim: int):
        examples = tuple(examples)
        x = feature_matrix(examples, dim)
        y = multi_hot(examples, columns, active=target_classes)
        x.setflags(write=False)
        y.setflags(write=False)
        return cls(phase=phase, examples=examples, target_classes=tuple(target_classes), columns=tuple(columns),
                   x=x, y=y)

    def __len__(self):
        return len(self.examples)

    @property
    def clip_ids(self) -> List[str]:
        return [ex.clip_id for ex in self.examples]

    def target_indices(self) -> 'OrderedDict[int, List[int]]':
        """
        目标类 -> 含有该类的样本下标
        """
        position = {c: i for i, c in enumerate(self.columns)}
        out = OrderedDict()
        for c in self.target_classes:
            out[c] = [int(i) for i in np.flatnonzero(self.y[:, position[c]])]
        return out

    def check_non_empty(self):
        """
        :raises: EmptyViewError  # 有目标类没有任何clip
        """
        empty = [c for c, idx in self.target_indices().items() if not idx]
        if empty:
            raise EmptyViewError(f'classes {empty} have no clips', module='data', phase=self.phase)


def _view(dataset: Dataset, phase: int, targets, columns, exclude_ids=frozenset()) -> PhaseDataset:
    targets = set(targets)
    examples = [ex for ex in dataset.examples if ex.has_any(targets) and ex.clip_id not in exclude_ids]
    return PhaseDataset.build(phase, examples, [c for c in columns if c in targets], columns, dataset.dim)


def phase_view(dataset: Dataset, plan: PhasePlan, phase: int, exclude_ids=frozenset()) -> PhaseDataset:
    """
    本阶段的训练视图：标签与plan[phase]有交集的clip，目标只编码plan[phase]

    :param exclude_ids: 不使用的clip id
    :raises: EmptyViewError, RangeError
    """
    plan.check_dataset(dataset)
    view = _view(dataset, phase, plan.classes(phase), plan.classes_so_far(phase), exclude_ids)
    view.check_non_empty()
    return view


def phase_views(dataset: Dataset, plan: PhasePlan, dedupe: bool = False) -> List[PhaseDataset]:
    """
    所有阶段的训练视图；dedupe为True时前面阶段用过的clip不再出现在后面的视图中
    """
    views = []
    used = set()
    for phase in range(plan.n_phases):
        view = phase_view(dataset, plan, phase, exclude_ids=frozenset(used) if dedupe else frozenset())
        used.update(view.clip_ids)
        views.append(view)
    return views


def phase_overlap(views: Sequence[PhaseDataset]) -> List[float]:
    """
    每个视图中在之前视图出现过的clip比例，phase 0为0
    """
    seen = set()
    fractions = []
    for view in views:
        ids = view.clip_ids
        repeated = sum(1 for cid in ids if cid in seen)
        fractions.append(repeated / len(ids) if ids else 0.0)
        seen.update(ids)
    return fractions


def eval_view(dataset: Dataset, plan: PhasePlan, phase: int) -> PhaseDataset:
    """
    评估视图：目标编码classes_so_far(phase)，不含这些类的clip被排除
    """
    plan.check_dataset(dataset)
    columns = plan.classes_so_far(phase)
    return _view(dataset, phase, columns, columns)


def at_view(dataset: Dataset, plan: PhasePlan, phase: int) -> PhaseDataset:
    """
    从头训练（AT）使用的视图：phase 0..phase 全部类的clip

    :raises: EmptyViewError
    """
    view = eval_view(dataset, plan, phase)
    view.check_non_empty()
    return view


def split_dataset(dataset: Dataset, eval_fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    随机划分训练集和评估集，两边保持原有顺序

    :raises: ConfigurationError
    """
    if not 0 < eval_fraction < 1:
        raise ConfigurationError(f'eval_fraction must be in (0, 1), got {eval_fraction}', module='data')

    n = len(dataset)
    n_eval = int(round(n * eval_fraction))
    if n_eval < 1 or n_eval >= n:
        raise ConfigurationError(f'cannot split {n} clips with eval_fraction={eval_fraction}', module='data')

    perm = np.random.default_rng([seed, SPLIT_STREAM]).permutation(n)
    eval_idx = sorted(int(i) for i in perm[:n_eval])
    train_idx = sorted(int(i) for i in perm[n_eval:])
    return dataset.subset(train_idx), dataset.subset(eval_idx)


def labels_histogram(examples: Sequence[Example], class_subset) -> 'OrderedDict[int, int]':
    """
    按clip在class_subset中的标签个数计数，不含0个标签的clip
    """
    subset = set(class_subset)
    counts = {}
    for ex in examples:
        n = len(subset.intersection(ex.labels))
        if n:
            counts[n] = counts.get(n, 0) + 1

    return OrderedDict(sorted(counts.items()))
