from django.conf import settings
from django.core.checks import Error


def check_synth_settings(app_configs, **kwargs):
    errors = []

    conf = getattr(settings, 'CIL_SYNTH', None)
    if not conf:
        errors.append(Error('未配置合成数据集参数，配置文件中配置“CIL_SYNTH”'))
        return errors

    if int(conf.get('N_CLASSES', 0)) < 2:
        errors.append(Error('CIL_SYNTH中“N_CLASSES”至少为2'))

    if int(conf.get('FEATURE_DIM', 0)) < 2:
        errors.append(Error('CIL_SYNTH中“FEATURE_DIM”至少为2'))

    max_labels = int(conf.get('MAX_LABELS', 0))
    if not 1 <= max_labels <= int(conf.get('N_CLASSES', 0)):
        errors.append(Error('CIL_SYNTH中“MAX_LABELS”必须在1和“N_CLASSES”之间'))

    if conf.get('NOISE_SIGMA', -1) < 0:
        errors.append(Error('CIL_SYNTH中“NOISE_SIGMA”不能小于0'))

    if not 0 < conf.get('EVAL_FRACTION', 0) < 1:
        errors.append(Error('CIL_SYNTH中“EVAL_FRACTION”必须在0和1之间'))

    if conf.get('ORTHOGONAL') and int(conf.get('FEATURE_DIM', 0)) < int(conf.get('N_CLASSES', 0)):
        errors.append(Error('CIL_SYNTH中“ORTHOGONAL”为True时“FEATURE_DIM”不能小于“N_CLASSES”'))

    plan = getattr(settings, 'CIL_PLAN', {})
    needed = plan.get('BASE_SIZE', 0) + plan.get('INCREMENT_SIZE', 0) * plan.get('INCREMENTS', 0)
    if needed > int(conf.get('N_CLASSES', 0)):
        errors.append(Error(f'CIL_PLAN需要{needed}个类，超过CIL_SYNTH中“N_CLASSES”'))

    return errors
