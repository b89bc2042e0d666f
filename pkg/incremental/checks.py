from django.conf import settings
from django.core.checks import Error


def check_train_settings(app_configs, **kwargs):
    errors = []

    conf = getattr(settings, 'CIL_TRAIN', None)
    if not conf:
        errors.append(Error('未配置训练参数，配置文件中配置“CIL_TRAIN”'))
        return errors

    if int(conf.get('EPOCHS', -1)) < 0:
        errors.append(Error('CIL_TRAIN中“EPOCHS”不能小于0'))

    if int(conf.get('BATCH_SIZE', 0)) < 1:
        errors.append(Error('CIL_TRAIN中“BATCH_SIZE”至少为1'))

    if not 0 <= conf.get('MOMENTUM', -1) < 1:
        errors.append(Error('CIL_TRAIN中“MOMENTUM”必须在[0, 1)之间'))

    for key in ('LR_INITIAL', 'LR_INCREMENTAL', 'OMEGA', 'EPS'):
        if not conf.get(key, 0) > 0:
            errors.append(Error(f'CIL_TRAIN中“{key}”必须大于0'))

    if not conf.get('DELTA', 0) >= 1:
        errors.append(Error('CIL_TRAIN中“DELTA”不能小于1'))

    if not 0 < conf.get('THRESHOLD', 0) < 1:
        errors.append(Error('CIL_TRAIN中“THRESHOLD”必须在0和1之间'))

    if not isinstance(conf.get('DEDUPE', False), bool):
        errors.append(Error('CIL_TRAIN中“DEDUPE”必须是True或False'))

    if not getattr(settings, 'CIL_OUTPUT_DIR', ''):
        errors.append(Error('未配置结果输出目录，配置文件中配置“CIL_OUTPUT_DIR”'))

    return errors
