"""
阶段评估结果和结果文件的记录格式

结果文件每行一个JSON对象：每个阶段一条 record="phase" 的记录，最后一条 record="summary" 的记录。
"""
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from rest_framework import serializers

from utils.exceptions import ConfigurationError
from .metrics import average_over_phases


@dataclass
class PhaseReport:
    phase: int
    strategy: str
    classes: Tuple[int, ...]            # 评估的类，顺序与分类器输出一致
    per_class_f1: List[float]
    macro_f1: float
    per_class_ap: List[Optional[float]]
    map: float
    weight_norms: List[float]
    labels_histogram: Dict[int, int] = field(default_factory=dict)
    fr: Optional[float] = None          # phase 0 没有
    lam: Optional[float] = None         # 本阶段使用的λ，不蒸馏输出时为None
    old_f1: Optional[float] = None
    new_f1: Optional[float] = None
    incremental: bool = True

    def to_record(self) -> 'OrderedDict':
        return OrderedDict([
            ('record', 'phase'),
            ('strategy', self.strategy),
            ('phase', self.phase),
            ('incremental', self.incremental),
            ('classes', list(self.classes)),
            ('macro_f1', self.macro_f1),
            ('map', self.map),
            ('fr', self.fr),
            ('old_f1', self.old_f1),
            ('new_f1', self.new_f1),
            ('lambda', self.lam),
            ('per_class_f1', list(self.per_class_f1)),
            ('per_class_ap', list(self.per_class_ap)),
            ('weight_norms', list(self.weight_norms)),
            ('labels_histogram', OrderedDict((str(k), v) for k, v in sorted(self.labels_histogram.items()))),
        ])


@dataclass
class RunReport:
    strategy: str
    phases: List[PhaseReport] = field(default_factory=list)

    @property
    def summary(self) -> dict:
        return average_over_phases(self.phases)

    @property
    def incremental(self) -> bool:
        return all(p.incremental for p in self.phases)

    def summary_record(self) -> 'OrderedDict':
        summary = self.summary
        return OrderedDict([
            ('record', 'summary'),
            ('strategy', self.strategy),
            ('incremental', self.incremental),
            ('phases', summary['phases']),
            ('avg_f1', summary['avg_f1']),
            ('avg_map', summary['avg_map']),
            ('avg_fr', summary['avg_fr']),
        ])

    def to_records(self) -> List['OrderedDict']:
        return [p.to_record() for p in self.phases] + [self.summary_record()]


def dumps_records(records) -> str:
    """
    一行一条记录；不含时间戳，相同的运行得到相同的字节
    """
    return ''.join(json.dumps(r, allow_nan=False) + '\n' for r in records)


class PhaseRecordSerializer(serializers.Serializer):
    """
    阶段记录的校验
    """
    record = serializers.ChoiceField(choices=['phase'])
    strategy = serializers.CharField()
    phase = serializers.IntegerField(min_value=0)
    incremental = serializers.BooleanField()
    classes = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False)
    macro_f1 = serializers.FloatField(min_value=0, max_value=1)
    map = serializers.FloatField(min_value=0, max_value=1)
    fr = serializers.FloatField(allow_null=True)
    old_f1 = serializers.FloatField(min_value=0, max_value=1, allow_null=True)
    new_f1 = serializers.FloatField(min_value=0, max_value=1, allow_null=True)
    per_class_f1 = serializers.ListField(child=serializers.FloatField(min_value=0, max_value=1))
    per_class_ap = serializers.ListField(child=serializers.FloatField(min_value=0, max_value=1, allow_null=True))
    weight_norms = serializers.ListField(child=serializers.FloatField(min_value=0))
    labels_histogram = serializers.DictField(child=serializers.IntegerField(min_value=0))

    def get_fields(self):
        fields = super().get_fields()
        fields['lambda'] = serializers.FloatField(min_value=0, allow_null=True)
        return fields

    def validate(self, attrs):
        n = len(attrs['classes'])
        for key in ('per_class_f1', 'per_class_ap'):
            if len(attrs[key]) != n:
                raise serializers.ValidationError(f'{key} has {len(attrs[key])} entries, expected {n}')
        if len(attrs['weight_norms']) != n:
            raise serializers.ValidationError(f'weight_norms has {len(attrs["weight_norms"])} entries, expected {n}')
        if attrs['phase'] == 0 and attrs['fr'] is not None:
            raise serializers.ValidationError('fr must be null at phase 0')

        return attrs


class SummaryRecordSerializer(serializers.Serializer):
    record = serializers.ChoiceField(choices=['summary'])
    strategy = serializers.CharField()
    incremental = serializers.BooleanField()
    phases = serializers.IntegerField(min_value=1)
    avg_f1 = serializers.FloatField(min_value=0, max_value=1)
    avg_map = serializers.FloatField(min_value=0, max_value=1)
    avg_fr = serializers.FloatField(allow_null=True)


RECORD_SERIALIZERS = {
    'phase': PhaseRecordSerializer,
    'summary': SummaryRecordSerializer,
}


def validate_record(record: dict) -> dict:
    """
    :raises: ConfigurationError
    """
    serializer_class = RECORD_SERIALIZERS.get(record.get('record'))
    if serializer_class is None:
        raise ConfigurationError(f'unknown record type {record.get("record")!r}', module='cli')

    s = serializer_class(data=record)
    if not s.is_valid():
        raise ConfigurationError(f'invalid {record["record"]} record: {s.errors}', module='cli')

    return s.validated_data


def loads_records(text: str) -> List[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
