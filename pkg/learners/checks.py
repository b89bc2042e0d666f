from django.conf import settings
from django.core.checks import Error


def check_model_settings(app_configs, **kwargs):
    errors = []

    conf = getattr(settings, 'CIL_MODEL', None)
    if not conf:
        errors.append(Error('未配置模型结构，配置文件中配置“CIL_MODEL”'))
        return errors

    hidden_dims = conf.get('HIDDEN_DIMS', ())
    if not isinstance(hidden_dims, (list, tuple)) or any(int(d) < 1 for d in hidden_dims):
        errors.append(Error('CIL_MODEL中“HIDDEN_DIMS”必须是正整数列表'))

    if int(conf.get('EMBEDDING_DIM', 0)) < 1:
        errors.append(Error('CIL_MODEL中“EMBEDDING_DIM”至少为1'))

    if conf.get('INIT_SCALE', -1) < 0:
        errors.append(Error('CIL_MODEL中“INIT_SCALE”不能小于0'))

    return errors
