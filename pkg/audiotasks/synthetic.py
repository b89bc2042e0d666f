"""
合成的多标签数据：类原型 + 噪声，类频率服从Zipf分布，共现的类按原型相似度采样
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from utils.exceptions import ConfigurationError
from .datasets import Dataset, Example


logger = logging.getLogger('cil.data')

PROTOTYPE_STREAM = 1
CLIP_STREAM = 2


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 10
    feature_dim: int = 16
    clips_per_class: int = 200
    zipf_exponent: float = 1.0
    max_labels: int = 3
    noise_sigma: float = 0.1
    cooccurrence_temperature: float = 0.5
    orthogonal: bool = False    # 原型两两正交，需要feature_dim >= n_classes
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigurationError(f'n_classes must be >= 2, got {self.n_classes}', module='data')
        if self.feature_dim < 2:
            raise ConfigurationError(f'feature_dim must be >= 2, got {self.feature_dim}', module='data')
        if self.clips_per_class < 1:
            raise ConfigurationError(f'clips_per_class must be >= 1, got {self.clips_per_class}', module='data')
        if self.max_labels < 1:
            raise ConfigurationError(f'max_labels must be >= 1, got {self.max_labels}', module='data')
        if self.max_labels > self.n_classes:
            raise ConfigurationError(f'infeasible config: max_labels({self.max_labels}) > '
                                     f'n_classes({self.n_classes})', module='data')
        if self.noise_sigma < 0:
            raise ConfigurationError(f'noise_sigma must be >= 0, got {self.noise_sigma}', module='data')
        if self.zipf_exponent < 0:
            raise ConfigurationError(f'zipf_exponent must be >= 0, got {self.zipf_exponent}', module='data')
        if not self.cooccurrence_temperature > 0:
            raise ConfigurationError('cooccurrence_temperature must be positive', module='data')
        if self.orthogonal and self.feature_dim < self.n_classes:
            raise ConfigurationError(f'orthogonal prototypes need feature_dim({self.feature_dim}) >= '
                                     f'n_classes({self.n_classes})', module='data')
        if self.seed < 0:
            raise ConfigurationError(f'seed must be >= 0, got {self.seed}', module='data')

    @classmethod
    def from_settings(cls, **overrides):
        conf = settings.CIL_SYNTH
        kwargs = {
            'n_classes': conf['N_CLASSES'],
            'feature_dim': conf['FEATURE_DIM'],
            'clips_per_class': conf['CLIPS_PER_CLASS'],
            'zipf_exponent': conf['ZIPF_EXPONENT'],
            'max_labels': conf['MAX_LABELS'],
            'noise_sigma': conf['NOISE_SIGMA'],
            'cooccurrence_temperature': conf['COOCCURRENCE_TEMPERATURE'],
            'orthogonal': conf['ORTHOGONAL'],
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def class_quotas(self) -> np.ndarray:
        """
        类k作为标签出现的次数：max(1, round(clips_per_class / (k+1)^s))
        """
        ranks = np.arange(1, self.n_classes + 1, dtype=np.float64)
        return np.maximum(1, np.round(self.clips_per_class / ranks ** self.zipf_exponent)).astype(np.int64)


def make_prototypes(cfg: SynthConfig) -> np.ndarray:
    """
    单位长度的类原型 (n_classes, feature_dim)；orthogonal时取随机矩阵QR分解的正交列
    """
    rng = np.random.default_rng([cfg.seed, PROTOTYPE_STREAM])
    if cfg.orthogonal:
        q, _ = np.linalg.qr(rng.standard_normal((cfg.feature_dim, cfg.n_classes)))
        return q.T.copy()

    protos = rng.standard_normal((cfg.n_classes, cfg.feature_dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _draw_labels(rng, remaining: np.ndarray, similarity: np.ndarray, max_labels: int, temperature: float):
    primary = int(rng.choice(remaining.size, p=remaining / remaining.sum()))
    labels = [primary]
    remaining[primary] -= 1
    n_labels = int(rng.integers(1, max_labels + 1))
    while len(labels) < n_labels:
        weights = remaining * np.exp(similarity[primary] / temperature)
        weights[labels] = 0.0
        total = weights.sum()
        if total <= 0:
            break

        c = int(rng.choice(remaining.size, p=weights / total))
        labels.append(c)
        remaining[c] -= 1

    return labels


def gen_synthetic(cfg: SynthConfig) -> Dataset:
    """
    按类配额生成clip，直到每个类的标签次数用完

    第一个标签按剩余配额采样，其余共现标签按 剩余配额·exp(相似度/温度) 采样；
    x = Σ p_k + N(0, noise_sigma²)
    """
    protos = make_prototypes(cfg)
    similarity = protos @ protos.T
    remaining = cfg.class_quotas().astype(np.float64)
    rng = np.random.default_rng([cfg.seed, CLIP_STREAM])

    examples = []
    while remaining.sum() > 0:
        labels = _draw_labels(rng, remaining, similarity, cfg.max_labels, cfg.cooccurrence_temperature)
        x = np.sum(protos[labels], axis=0) + cfg.noise_sigma * rng.standard_normal(cfg.feature_dim)
        examples.append(Example(clip_id=f'clip{len(examples):06d}', x=x, labels=tuple(labels)))

    dataset = Dataset(dim=cfg.feature_dim, n_classes=cfg.n_classes, examples=tuple(examples))
    logger.info(f'generated {len(dataset)} clips, {cfg.n_classes} classes, dim={cfg.feature_dim}, seed={cfg.seed}')
    return dataset
