"""
实验配置文件的校验

配置文件是一个JSON对象，各节都可以省略，省略的字段取settings中CIL_*的默认值。
"""
from django.conf import settings
from rest_framework import serializers

from .strategies import STRATEGY_CHOICES


class DatasetSourceSerializer(serializers.Serializer):
    source = serializers.ChoiceField(choices=['synthetic', 'file'], default='synthetic')
    path = serializers.CharField(required=False, allow_blank=False)
    eval_path = serializers.CharField(required=False, allow_blank=False)
    # 0表示不划分，在训练数据上评估
    eval_fraction = serializers.FloatField(min_value=0, max_value=0.95, required=False)

    def validate(self, attrs):
        if attrs['source'] == 'file' and not attrs.get('path'):
            raise serializers.ValidationError('"path" is required when source is "file"')
        if attrs['source'] == 'synthetic' and attrs.get('path'):
            raise serializers.ValidationError('"path" only applies to source "file"')

        return attrs


class SynthSerializer(serializers.Serializer):
    n_classes = serializers.IntegerField(min_value=2, required=False)
    feature_dim = serializers.IntegerField(min_value=2, required=False)
    clips_per_class = serializers.IntegerField(min_value=1, required=False)
    zipf_exponent = serializers.FloatField(min_value=0, required=False)
    max_labels = serializers.IntegerField(min_value=1, required=False)
    noise_sigma = serializers.FloatField(min_value=0, required=False)
    cooccurrence_temperature = serializers.FloatField(min_value=1e-6, required=False)
    orthogonal = serializers.BooleanField(required=False)


class PlanSerializer(serializers.Serializer):
    """
    按大小划分（base_size, increment_size, increments），或直接给出每个阶段的类列表（phases）
    """
    base_size = serializers.IntegerField(min_value=1, required=False)
    increment_size = serializers.IntegerField(min_value=1, required=False)
    increments = serializers.IntegerField(min_value=0, required=False)
    shuffle = serializers.BooleanField(default=True)
    phases = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False),
        allow_empty=False, required=False)

    def validate(self, attrs):
        sizes = [k for k in ('base_size', 'increment_size', 'increments') if k in attrs]
        if 'phases' in attrs and sizes:
            raise serializers.ValidationError(f'"phases" cannot be combined with {sizes}')

        if 'phases' in attrs:
            seen = set()
            for i, classes in enumerate(attrs['phases']):
                dup = seen.intersection(classes)
                if dup or len(set(classes)) != len(classes):
                    raise serializers.ValidationError(f'phase {i} repeats classes')
                seen.update(classes)
            return attrs

        conf = settings.CIL_PLAN
        attrs.setdefault('base_size', conf['BASE_SIZE'])
        attrs.setdefault('increment_size', conf['INCREMENT_SIZE'])
        attrs.setdefault('increments', conf['INCREMENTS'])
        return attrs

    @staticmethod
    def classes_needed(attrs) -> int:
        if 'phases' in attrs:
            return max(max(p) for p in attrs['phases']) + 1

        return attrs['base_size'] + attrs['increment_size'] * attrs['increments']


class ModelSerializer(serializers.Serializer):
    hidden_dims = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False)
    embedding_dim = serializers.IntegerField(min_value=1, required=False)
    init_scale = serializers.FloatField(min_value=0, required=False)


class TrainSerializer(serializers.Serializer):
    epochs = serializers.IntegerField(min_value=0, required=False)
    batch_size = serializers.IntegerField(min_value=1, required=False)
    momentum = serializers.FloatField(min_value=0, max_value=0.999999, required=False)
    lr_initial = serializers.FloatField(min_value=1e-12, required=False)
    lr_incremental = serializers.FloatField(min_value=1e-12, required=False)
    omega = serializers.FloatField(min_value=1e-12, required=False)
    delta = serializers.FloatField(min_value=1, required=False)
    eps = serializers.FloatField(min_value=1e-300, required=False)
    threshold = serializers.FloatField(min_value=1e-12, max_value=1 - 1e-12, required=False)
    dedupe = serializers.BooleanField(required=False)


class ExperimentSerializer(serializers.Serializer):
    """
    实验配置
    """
    seed = serializers.IntegerField(min_value=0, default=0)
    dataset = DatasetSourceSerializer(required=False)
    synth = SynthSerializer(required=False)
    plan = PlanSerializer(required=False)
    model = ModelSerializer(required=False)
    train = TrainSerializer(required=False)
    strategy = serializers.ChoiceField(choices=STRATEGY_CHOICES, required=False)
    strategies = serializers.ListField(child=serializers.ChoiceField(choices=STRATEGY_CHOICES), required=False,
                                       allow_empty=False)
    output = serializers.CharField(required=False, allow_blank=False)

    def to_internal_value(self, data):
        # 字符串的策略名不区分大小写
        if isinstance(data, dict):
            data = dict(data)
            if isinstance(data.get('strategy'), str):
                data['strategy'] = data['strategy'].upper()
            if isinstance(data.get('strategies'), list):
                data['strategies'] = [s.upper() if isinstance(s, str) else s for s in data['strategies']]

        return super().to_internal_value(data)

    def validate(self, attrs):
        attrs.setdefault('dataset', DatasetSourceSerializer(data={}).run_validation({}))
        attrs.setdefault('plan', PlanSerializer(data={}).run_validation({}))
        attrs.setdefault('synth', {})
        attrs.setdefault('model', {})
        attrs.setdefault('train', {})

        strategies = attrs.get('strategies')
        if strategies and len(set(strategies)) != len(strategies):
            raise serializers.ValidationError({'strategies': 'strategies must not repeat'})

        if attrs['dataset']['source'] == 'synthetic':
            conf = settings.CIL_SYNTH
            n_classes = attrs['synth'].get('n_classes', conf['N_CLASSES'])
            max_labels = attrs['synth'].get('max_labels', conf['MAX_LABELS'])
            if max_labels > n_classes:
                raise serializers.ValidationError(
                    {'synth': f'infeasible config: max_labels({max_labels}) > n_classes({n_classes})'})

            needed = PlanSerializer.classes_needed(attrs['plan'])
            if needed > n_classes:
                raise serializers.ValidationError(
                    {'plan': f'plan needs {needed} classes, dataset has {n_classes}'})

        return attrs
