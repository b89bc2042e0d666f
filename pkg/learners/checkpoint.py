import json

import numpy as np
from rest_framework import serializers

from gradcore.arrays import check_finite
from gradcore.functions import ACTIVATIONS
from utils.exceptions import ConfigurationError
from utils.files import atomic_write_text
from .network import ClassifierParams, ExtractorLayer, ExtractorParams, LearnerState


CHECKPOINT_FORMAT = 'cil-checkpoint'
CHECKPOINT_VERSION = 1


class LayerSerializer(serializers.Serializer):
    activation = serializers.ChoiceField(choices=sorted(ACTIVATIONS))
    weight = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))
    bias = serializers.ListField(child=serializers.FloatField())


class ClassifierSerializer(serializers.Serializer):
    weight = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))
    bias = serializers.ListField(child=serializers.FloatField())
    frozen_mask = serializers.ListField(child=serializers.BooleanField())


class CheckpointSerializer(serializers.Serializer):
    """
    学习器检查点文档
    """
    format = serializers.ChoiceField(choices=[CHECKPOINT_FORMAT])
    version = serializers.IntegerField(min_value=1, max_value=CHECKPOINT_VERSION)
    input_dim = serializers.IntegerField(min_value=1)
    embedding_dim = serializers.IntegerField(min_value=1)
    class_count = serializers.IntegerField(min_value=0)
    phase_index = serializers.IntegerField(min_value=0)
    old_class_count = serializers.IntegerField(min_value=0)
    new_class_count = serializers.IntegerField(min_value=0)
    extractor = LayerSerializer(many=True)
    classifier = ClassifierSerializer()


def learner_to_dict(learner: LearnerState) -> dict:
    for name, value in learner.named_parameters().items():
        check_finite(value, name=name, module='model')

    return {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'input_dim': learner.extractor.input_dim,
        'embedding_dim': learner.extractor.embedding_dim,
        'class_count': learner.class_count,
        'phase_index': learner.phase_index,
        'old_class_count': learner.old_class_count,
        'new_class_count': learner.new_class_count,
        'extractor': [
            {'activation': layer.activation, 'weight': layer.weight.tolist(), 'bias': layer.bias.tolist()}
            for layer in learner.extractor.layers
        ],
        'classifier': {
            'weight': learner.classifier.weight.tolist(),
            'bias': learner.classifier.bias.tolist(),
            'frozen_mask': learner.classifier.frozen_mask.tolist(),
        },
    }


def _matrix(rows, n_cols: int) -> np.ndarray:
    # 0行的矩阵也要保留列数
    return np.array(rows, dtype=np.float64).reshape(len(rows), n_cols)


def learner_from_dict(data: dict) -> LearnerState:
    """
    :raises: ConfigurationError, DimensionMismatch
    """
    s = CheckpointSerializer(data=data)
    if not s.is_valid():
        raise ConfigurationError(f'invalid checkpoint: {s.errors}', module='model')

    data = s.validated_data
    layers = []
    in_dim = data['input_dim']
    for layer in data['extractor']:
        weight = _matrix(layer['weight'], in_dim)
        layers.append(ExtractorLayer(weight=weight, bias=np.array(layer['bias'], dtype=np.float64),
                                     activation=layer['activation']))
        in_dim = weight.shape[0]

    classifier = ClassifierParams(
        weight=_matrix(data['classifier']['weight'], data['embedding_dim']),
        bias=np.array(data['classifier']['bias'], dtype=np.float64),
        frozen_mask=np.array(data['classifier']['frozen_mask'], dtype=bool),
    )
    if classifier.class_count != data['class_count']:
        raise ConfigurationError(f'checkpoint declares {data["class_count"]} classes, '
                                 f'classifier has {classifier.class_count}', module='model')

    return LearnerState(
        extractor=ExtractorParams(layers=layers),
        classifier=classifier,
        phase_index=data['phase_index'],
        old_class_count=data['old_class_count'],
        new_class_count=data['new_class_count'],
    )


def save_checkpoint(learner: LearnerState, path: str, force: bool = True) -> str:
    """
    浮点数以最短往返表示写出，读回后逐位相同
    """
    text = json.dumps(learner_to_dict(learner), indent=1, allow_nan=False) + '\n'
    return atomic_write_text(path, text, force=force)


def load_checkpoint(path: str) -> LearnerState:
    """
    :raises: ConfigurationError
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigurationError(f'cannot read checkpoint "{path}"', module='model', extend_msg=str(e))

    return learner_from_dict(data)
