from django.conf import settings
from django.core.checks import Error


def check_gradcheck_settings(app_configs, **kwargs):
    errors = []

    conf = getattr(settings, 'CIL_GRADCHECK', None)
    if not conf:
        errors.append(Error('未配置梯度检查参数，配置文件中配置“CIL_GRADCHECK”'))
        return errors

    if conf.get('EPSILON', 0) <= 0:
        errors.append(Error('CIL_GRADCHECK中“EPSILON”必须大于0'))

    if conf.get('TOLERANCE', 0) <= 0:
        errors.append(Error('CIL_GRADCHECK中“TOLERANCE”必须大于0'))

    if int(conf.get('POINTS', 0)) < 1:
        errors.append(Error('CIL_GRADCHECK中“POINTS”至少为1'))

    return errors
