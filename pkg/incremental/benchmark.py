"""
桌面规模的对比基准

settings.CIL_BENCHMARK给出数据、阶段划分、模型和训练配置，每个seed独立运行一次FT、FE、IODFD，
再按多数seed的结果判断各策略的相对表现。
"""
import copy
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from django.conf import settings

from audiotasks.phases import PhasePlan
from evaluation.metrics import weight_norm_summary
from evaluation.reports import RunReport
from utils.exceptions import ConfigurationError
from .config import ExperimentConfig, parse_experiment_config
from .strategies import Strategy
from .trainer import run_strategies


logger = logging.getLogger('cil.train')

REQUIRED_STRATEGIES = (Strategy.FT, Strategy.FE, Strategy.IODFD)

FORGETTING_FACTOR = 10.0        # FT的平均Fr至少是IODFD的多少倍
COLLAPSED_OLD_F1 = 0.05         # FT最后阶段旧类F1低于此值视为完全遗忘


def benchmark_config(seed: int) -> ExperimentConfig:
    """
    :raises: rest_framework.serializers.ValidationError
    """
    return parse_experiment_config(copy.deepcopy(settings.CIL_BENCHMARK['CONFIG']), seed=seed)


@dataclass
class BenchmarkOutcome:
    seed: int
    plan: PhasePlan
    reports: 'OrderedDict[Strategy, RunReport]'

    def final(self, strategy: Strategy):
        return self.reports[strategy].phases[-1]

    def avg(self, strategy: Strategy, key: str) -> Optional[float]:
        return self.reports[strategy].summary[key]

    def norm_ratio(self, strategy: Strategy) -> Optional[float]:
        """
        最后阶段增量类与基础类的平均权重范数之比
        """
        return weight_norm_summary(self.final(strategy).weight_norms, len(self.plan.classes(0)))[2]

    def checks(self) -> 'OrderedDict[str, bool]':
        """
        :raises: ConfigurationError  # 缺少FT、FE或IODFD
        """
        missing = [s.value for s in REQUIRED_STRATEGIES if s not in self.reports]
        if missing:
            raise ConfigurationError(f'benchmark checks need strategies {missing}', module='benchmark')

        ft, fe, iodfd = REQUIRED_STRATEGIES
        return OrderedDict([
            ('ft_forgets_most', self.avg(ft, 'avg_fr') >= FORGETTING_FACTOR * self.avg(iodfd, 'avg_fr')),
            ('ft_old_classes_collapse', self.final(ft).old_f1 < COLLAPSED_OLD_F1),
            ('fe_new_classes_below_ft', self.final(fe).new_f1 < self.final(ft).new_f1),
            ('iodfd_avg_f1_above_ft', self.avg(iodfd, 'avg_f1') > self.avg(ft, 'avg_f1')),
        ])


def run_benchmark_seed(seed: int, strategies: Sequence = REQUIRED_STRATEGIES, max_threads: int = 1) -> BenchmarkOutcome:
    cfg = benchmark_config(seed)
    train_set, eval_set = cfg.train_eval_datasets()
    plan = cfg.build_plan(train_set.n_classes)
    runners = run_strategies(train_set, plan, strategies, cfg.train, model_cfg=cfg.model_config(train_set.dim),
                             eval_dataset=eval_set, max_threads=max_threads)
    outcome = BenchmarkOutcome(seed=seed, plan=plan,
                               reports=OrderedDict((runner.strategy, runner.report) for runner in runners))
    for s in outcome.reports:
        logger.info(f'benchmark seed {seed} {s.value}: avg F1={outcome.avg(s, "avg_f1"):.4f} '
                    f'avg Fr={outcome.avg(s, "avg_fr"):.2f} norm ratio={outcome.norm_ratio(s):.3f}')
    return outcome


def run_benchmark(seeds: Sequence[int] = None, max_threads: int = 1) -> List[BenchmarkOutcome]:
    seeds = settings.CIL_BENCHMARK['SEEDS'] if seeds is None else seeds
    return [run_benchmark_seed(seed, max_threads=max_threads) for seed in seeds]


def majority(votes: Sequence[bool]) -> bool:
    votes = list(votes)
    return sum(1 for v in votes if v) * 2 > len(votes)


def majority_checks(outcomes: Sequence[BenchmarkOutcome]) -> Dict[str, bool]:
    """
    每项检查在超过半数的seed上成立才算通过
    """
    per_seed = [o.checks() for o in outcomes]
    if not per_seed:
        raise ConfigurationError('no benchmark outcomes', module='benchmark')

    return OrderedDict((name, majority(c[name] for c in per_seed)) for name in per_seed[0])
