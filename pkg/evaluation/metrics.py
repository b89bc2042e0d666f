"""
多标签评估指标

F1按类计算后取无加权平均（macro），阈值默认0.5；AP不做插值，同分按样本原顺序排列。
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gradcore.arrays import as_matrix, check_same_shape
from utils.exceptions import ConfigurationError, RangeError


def _mean(values) -> float:
    values = list(values)
    if not values:
        return 0.0

    return math.fsum(values) / len(values)


def _check_inputs(scores, targets):
    scores = as_matrix(scores, 'scores')
    targets = as_matrix(targets, 'targets')
    check_same_shape(scores, targets, 'scores/targets')
    return scores, targets > 0.5


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    """
    2TP / (2TP + FP + FN)，分母为0时为0
    """
    denominator = 2 * tp + fp + fn
    return 2 * tp / denominator if denominator else 0.0


def macro_f1(scores, targets, threshold: float = 0.5) -> Tuple[List[float], float]:
    """
    :param scores: (n, K) 概率
    :param targets: (n, K) 多热目标
    :return:
        (每类F1, macro F1)
    """
    scores, positive = _check_inputs(scores, targets)
    predicted = scores >= threshold
    tp = np.sum(predicted & positive, axis=0)
    fp = np.sum(predicted & ~positive, axis=0)
    fn = np.sum(~predicted & positive, axis=0)
    per_class = [f1_from_counts(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]
    return per_class, _mean(per_class)


def average_precision(scores: np.ndarray, positive: np.ndarray) -> Optional[float]:
    """
    单个类的AP；没有正样本时返回None
    """
    n_pos = int(np.sum(positive))
    if n_pos == 0:
        return None

    order = np.argsort(-scores, kind='stable')
    hits = np.cumsum(positive[order])
    ranks = np.arange(1, scores.size + 1)
    precisions = [int(h) / int(k) for h, k, p in zip(hits, ranks, positive[order]) if p]
    return math.fsum(precisions) / n_pos


def mean_average_precision(scores, targets) -> Tuple[List[Optional[float]], float]:
    """
    :return:
        (每类AP，无正样本的类为None, 有正样本的类的AP均值)
    """
    scores, positive = _check_inputs(scores, targets)
    per_class = [average_precision(scores[:, k], positive[:, k]) for k in range(scores.shape[1])]
    return per_class, _mean(ap for ap in per_class if ap is not None)


def group_f1(classes: Sequence[int], per_class_f1: Sequence[float], group: Sequence[int]) -> float:
    """
    一组类上的macro F1

    :param classes: per_class_f1对应的类
    :raises: ConfigurationError  # group中有未评估的类
    """
    f1_of = dict(zip(classes, per_class_f1))
    missing = [c for c in group if c not in f1_of]
    if missing:
        raise ConfigurationError(f'classes {missing} were not evaluated', module='metrics')

    return _mean(f1_of[c] for c in group)


def forgetting(base_report, current, base_classes: Sequence[int]) -> float:
    """
    基础类上 phase 0 的macro F1减去当前的macro F1，单位为百分点；越低越好，可以为负

    :raises: ConfigurationError
    """
    base = group_f1(base_report.classes, base_report.per_class_f1, base_classes)
    now = group_f1(current.classes, current.per_class_f1, base_classes)
    return (base - now) * 100.0


def average_over_phases(reports) -> dict:
    """
    F1和mAP对所有阶段取平均，Fr只对增量阶段取平均

    :raises: ConfigurationError
    """
    reports = list(reports)
    if not reports:
        raise ConfigurationError('no phase reports to average', module='metrics')

    frs = [r.fr for r in reports[1:] if r.fr is not None]
    return {
        'avg_f1': _mean(r.macro_f1 for r in reports),
        'avg_map': _mean(r.map for r in reports),
        'avg_fr': _mean(frs) if frs else None,
        'phases': len(reports),
    }


def weight_norm_summary(norms: Sequence[float], n_base: int) -> Tuple[float, Optional[float], Optional[float]]:
    """
    前n_base个类是基础类

    :return:
        (基础类平均范数, 增量类平均范数, 增量/基础)    # 没有增量类时后两项为None
    """
    if not 1 <= n_base <= len(norms):
        raise RangeError(f'n_base must be in [1, {len(norms)}], got {n_base}', module='metrics')

    base = _mean(norms[:n_base])
    if n_base == len(norms):
        return base, None, None

    incremental = _mean(norms[n_base:])
    return base, incremental, (incremental / base if base > 0 else None)


def always_positive_f1(prevalence: float) -> float:
    """
    总是预测为正的分类器的F1：2p / (1 + p)
    """
    if not 0 <= prevalence <= 1:
        raise RangeError(f'prevalence must be in [0, 1], got {prevalence}', module='metrics')

    return 2 * prevalence / (1 + prevalence)
