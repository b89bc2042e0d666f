import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from django.conf import settings

from audiotasks.datasets import Dataset
from audiotasks.phases import PhasePlan, split_dataset
from audiotasks.storage import load_dataset
from audiotasks.synthetic import SynthConfig, gen_synthetic
from learners.network import ModelConfig
from utils.exceptions import ConfigurationError
from .serializers import ExperimentSerializer
from .strategies import Strategy
from .trainer import TrainConfig


@dataclass
class ExperimentConfig:
    """
    一次实验的完整配置；相同的配置得到相同的输出
    """
    seed: int = 0
    source: str = 'synthetic'
    dataset_path: str = ''
    eval_path: str = ''
    eval_fraction: float = 0.0
    synth: Optional[SynthConfig] = None
    plan_sizes: dict = field(default_factory=dict)
    plan_phases: Optional[List[List[int]]] = None
    model_overrides: dict = field(default_factory=dict)
    train: TrainConfig = None
    strategies: List[Strategy] = field(default_factory=lambda: [Strategy.IODFD])
    output: str = ''

    @classmethod
    def from_validated(cls, data: dict) -> 'ExperimentConfig':
        seed = data['seed']
        dataset = data['dataset']
        source = dataset['source']
        eval_fraction = dataset.get('eval_fraction', settings.CIL_SYNTH['EVAL_FRACTION'])
        if dataset.get('eval_path'):
            eval_fraction = 0.0

        synth = SynthConfig.from_settings(seed=seed, **data['synth']) if source == 'synthetic' else None

        plan = dict(data['plan'])
        plan_phases = plan.pop('phases', None)

        model = dict(data['model'])
        if 'hidden_dims' in model:
            model['hidden_dims'] = tuple(model['hidden_dims'])

        strategies = data.get('strategies') or [data.get('strategy', Strategy.IODFD.value)]
        return cls(
            seed=seed,
            source=source,
            dataset_path=dataset.get('path', ''),
            eval_path=dataset.get('eval_path', ''),
            eval_fraction=eval_fraction,
            synth=synth,
            plan_sizes=plan,
            plan_phases=plan_phases,
            model_overrides=model,
            train=TrainConfig.from_settings(seed=seed, **data['train']),
            strategies=[Strategy.parse(s) for s in strategies],
            output=data.get('output') or settings.CIL_OUTPUT_DIR,
        )

    @property
    def strategy(self) -> Strategy:
        return self.strategies[0]

    def load_dataset(self) -> Dataset:
        """
        :raises: ConfigurationError, DatasetParseError
        """
        if self.source == 'synthetic':
            return gen_synthetic(self.synth)

        return load_dataset(self.dataset_path)

    def train_eval_datasets(self) -> Tuple[Dataset, Dataset]:
        """
        (训练集, 评估集)；不划分时两者相同
        """
        dataset = self.load_dataset()
        if self.eval_path:
            return dataset, load_dataset(self.eval_path)
        if self.eval_fraction > 0:
            return split_dataset(dataset, self.eval_fraction, seed=self.seed)

        return dataset, dataset

    def build_plan(self, n_classes: int) -> PhasePlan:
        if self.plan_phases is not None:
            plan = PhasePlan(phases=tuple(tuple(p) for p in self.plan_phases))
            missing = [c for c in plan.all_classes if c >= n_classes]
            if missing:
                raise ConfigurationError(f'plan classes {missing} outside [0, {n_classes})', module='cli')
            return plan

        return PhasePlan.from_sizes(n_classes, self.plan_sizes['base_size'], self.plan_sizes['increment_size'],
                                    self.plan_sizes['increments'], seed=self.seed,
                                    shuffle=self.plan_sizes.get('shuffle', True))

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig.from_settings(input_dim, **self.model_overrides)


def parse_experiment_config(data: dict, seed: int = None, out: str = None) -> ExperimentConfig:
    """
    :param seed: 命令行--seed，覆盖配置中的seed
    :param out: 命令行--out，覆盖配置中的output
    :raises: rest_framework.serializers.ValidationError
    """
    data = dict(data or {})
    if seed is not None:
        data['seed'] = seed
    if out:
        data['output'] = out

    s = ExperimentSerializer(data=data)
    s.is_valid(raise_exception=True)
    return ExperimentConfig.from_validated(s.validated_data)


def load_experiment_config(path: str = None, seed: int = None, out: str = None) -> ExperimentConfig:
    """
    读取JSON配置文件，path为空时全部使用默认值

    :raises: ConfigurationError, rest_framework.serializers.ValidationError
    """
    data = {}
    if path:
        try:
            with open(path, encoding='utf-8') as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigurationError(f'cannot read config file "{path}": {e}', module='cli')
        except ValueError as e:
            raise ConfigurationError(f'config file "{path}" is not valid JSON: {e}', module='cli')

        if not isinstance(data, dict):
            raise ConfigurationError(f'config file "{path}" must contain a JSON object', module='cli')

    return parse_experiment_config(data, seed=seed, out=out)
