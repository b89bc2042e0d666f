"""
数据集文件格式

    #cil-dataset v1 dim=<D> classes=<K>
    <clip_id>,<f1;f2;...;fD>,<l1;l2;...>

其余以#开头的行是注释；浮点数写17位有效数字。
"""
import logging
import math
import re

from utils.exceptions import ConfigurationError, DatasetParseError
from utils.files import atomic_write_text
from .datasets import Dataset, Example


logger = logging.getLogger('cil.data')

HEADER_RE = re.compile(r'^#cil-dataset\s+v1\s+dim=(?P<dim>\d+)\s+classes=(?P<classes>\d+)\s*$')


def format_float(value: float) -> str:
    return format(float(value), '.17g')


def dumps_dataset(dataset: Dataset) -> str:
    lines = [f'#cil-dataset v1 dim={dataset.dim} classes={dataset.n_classes}']
    for ex in dataset.examples:
        if not ex.clip_id or any(ch in ex.clip_id for ch in ',#\n\r'):
            raise ConfigurationError(f'clip id "{ex.clip_id}" cannot be written to a dataset file', module='data')

        features = ';'.join(format_float(v) for v in ex.x)
        labels = ';'.join(str(c) for c in ex.labels)
        lines.append(f'{ex.clip_id},{features},{labels}')

    return '\n'.join(lines) + '\n'


def save_dataset(dataset: Dataset, path: str, force: bool = True) -> str:
    """
    :raises: ConfigurationError  # 文件已存在且force为False
    """
    atomic_write_text(path, dumps_dataset(dataset), force=force)
    logger.info(f'saved {len(dataset)} clips to {path}')
    return path


def _parse_header(line: str):
    m = HEADER_RE.match(line.strip())
    if m is None:
        raise DatasetParseError('missing or malformed header "#cil-dataset v1 dim=<D> classes=<K>"', line_number=1)

    dim, classes = int(m.group('dim')), int(m.group('classes'))
    if dim < 1 or classes < 1:
        raise DatasetParseError('dim and classes must be positive', line_number=1)

    return dim, classes


def _parse_row(line: str, line_number: int, dim: int, n_classes: int) -> Example:
    fields = line.split(',')
    if len(fields) != 3:
        raise DatasetParseError(f'expected 3 comma-separated fields, got {len(fields)}', line_number=line_number)

    clip_id, feature_field, label_field = (f.strip() for f in fields)
    if not clip_id:
        raise DatasetParseError('empty clip id', line_number=line_number)

    try:
        x = [float(v) for v in feature_field.split(';')]
    except ValueError as e:
        raise DatasetParseError(f'clip {clip_id}: bad feature value ({e})', line_number=line_number)
    if len(x) != dim:
        raise DatasetParseError(f'clip {clip_id}: expected {dim} features, got {len(x)}', line_number=line_number)
    if not all(math.isfinite(v) for v in x):
        raise DatasetParseError(f'clip {clip_id}: non-finite feature value', line_number=line_number)

    if not label_field:
        raise DatasetParseError(f'clip {clip_id}: empty label field', line_number=line_number)
    try:
        labels = [int(c) for c in label_field.split(';')]
    except ValueError as e:
        raise DatasetParseError(f'clip {clip_id}: bad class id ({e})', line_number=line_number)
    bad = [c for c in labels if not 0 <= c < n_classes]
    if bad:
        raise DatasetParseError(f'clip {clip_id}: class ids {bad} outside [0, {n_classes})', line_number=line_number)

    return Example(clip_id=clip_id, x=x, labels=tuple(labels))


def loads_dataset(text: str) -> Dataset:
    """
    :raises: DatasetParseError
    """
    lines = text.splitlines()
    if not lines:
        raise DatasetParseError('empty dataset file', line_number=1)

    dim, n_classes = _parse_header(lines[0])
    examples = []
    seen = set()
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith('#'):
            continue

        ex = _parse_row(line, line_number, dim, n_classes)
        if ex.clip_id in seen:
            raise DatasetParseError(f'duplicate clip id "{ex.clip_id}"', line_number=line_number)
        seen.add(ex.clip_id)
        examples.append(ex)

    return Dataset(dim=dim, n_classes=n_classes, examples=tuple(examples))


def decode_dataset(data: bytes) -> str:
    """
    :raises: DatasetParseError  # 不是合法的UTF-8，line_number为出错字节所在的行
    """
    try:
        return data.decode('utf-8')
    except UnicodeDecodeError as e:
        line_number = data.count(b'\n', 0, e.start) + 1
        raise DatasetParseError(f'invalid UTF-8 byte 0x{data[e.start]:02x}', line_number=line_number)


def load_dataset(path: str) -> Dataset:
    """
    :raises: DatasetParseError, ConfigurationError
    """
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise ConfigurationError(f'cannot read dataset file "{path}"', module='data', extend_msg=str(e))

    try:
        dataset = loads_dataset(decode_dataset(data))
    except DatasetParseError as exc:
        raise exc.at(module='data')

    logger.info(f'loaded {len(dataset)} clips from {path}')
    return dataset
