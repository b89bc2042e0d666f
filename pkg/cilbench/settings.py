"""
Django settings for cilbench project.

类增量多标签学习实验平台的全部配置；命令行子命令（manage.py gen_data/run/compare/gradcheck）
读取这里的 CIL_* 默认值，实验配置文件中的字段会覆盖它们。

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# 本项目不提供web服务，SECRET_KEY仅为满足django启动要求
SECRET_KEY = os.environ.get('CIL_SECRET_KEY', 'cilbench-insecure-local-key')

DEBUG = os.environ.get('CIL_DEBUG', '').lower() in ('1', 'true', 'yes')

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'rest_framework',

    'gradcore',
    'learners',
    'audiotasks',
    'evaluation',
    'incremental',
]

# 没有数据库，测试使用SimpleTestCase
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'Asia/Shanghai'

USE_I18N = False

USE_TZ = True


# 合成数据集默认配置
CIL_SYNTH = {
    'N_CLASSES': 10,
    'FEATURE_DIM': 16,
    'CLIPS_PER_CLASS': 200,
    'ZIPF_EXPONENT': 1.0,
    'MAX_LABELS': 3,
    'NOISE_SIGMA': 0.1,
    'COOCCURRENCE_TEMPERATURE': 0.5,
    'ORTHOGONAL': False,        # 类原型两两正交
    'EVAL_FRACTION': 0.3,
}

# 阶段划分默认配置：4个基础类 + 3个增量阶段每阶段2类
CIL_PLAN = {
    'BASE_SIZE': 4,
    'INCREMENT_SIZE': 2,
    'INCREMENTS': 3,
}

# 特征提取器和分类器默认结构
CIL_MODEL = {
    'HIDDEN_DIMS': (64, 64),
    'EMBEDDING_DIM': 32,
    'INIT_SCALE': 0.01,     # 新增分类单元权重初始化范围 [-s, s]
}

# 训练默认配置
CIL_TRAIN = {
    'EPOCHS': 120,
    'BATCH_SIZE': 32,
    'MOMENTUM': 0.9,
    'LR_INITIAL': 0.01,         # phase 0
    'LR_INCREMENTAL': 0.001,    # phases >= 1
    'OMEGA': 2.0,
    'DELTA': 2.0,
    'EPS': 1e-8,
    'THRESHOLD': 0.5,
    'DEDUPE': False,            # 为True时增量阶段不再使用之前阶段用过的clip
}

# 桌面规模的对比基准（manage.py benchmark）
# 正交原型、类均衡、每个clip 1~4个标签，增量阶段的数据与之前的阶段大量重叠；
# CONFIG的格式与实验配置文件相同，seed由SEEDS逐个给出
CIL_BENCHMARK = {
    'SEEDS': (0, 1, 2),
    'CONFIG': {
        'dataset': {'source': 'synthetic', 'eval_fraction': 0.3},
        'synth': {
            'n_classes': 10,
            'feature_dim': 16,
            'clips_per_class': 200,
            'zipf_exponent': 0.0,
            'max_labels': 4,
            'noise_sigma': 0.1,
            'orthogonal': True,
        },
        'plan': {'base_size': 4, 'increment_size': 2, 'increments': 3},
        'model': {'hidden_dims': [32], 'embedding_dim': 8, 'init_scale': 0.01},
        'train': {'epochs': 30, 'batch_size': 32, 'lr_initial': 0.05, 'lr_incremental': 0.01},
        'strategies': ['FT', 'FE', 'IODFD'],
    },
}

# 梯度检查默认配置
CIL_GRADCHECK = {
    'POINTS': 10,
    'EPSILON': 1e-5,
    'TOLERANCE': 1e-4,
}

CIL_OUTPUT_DIR = os.environ.get('CIL_OUTPUT_DIR', str(BASE_DIR / 'output'))

# 日志配置
LOGGING_FILES_DIR = os.environ.get('CIL_LOG_DIR', str(BASE_DIR / 'logs'))
if not os.path.exists(LOGGING_FILES_DIR):
    os.makedirs(LOGGING_FILES_DIR, exist_ok=True)

LOG_LEVEL = os.environ.get('CIL_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(levelname)s %(asctime)s %(module)s %(process)d %(thread)d %(message)s'
        },
        'simple': {
            'format': '%(levelname)s %(message)s'
        },
    },
    'handlers': {
        # logging file settings
        'file': {
            'level': 'DEBUG',
            'class': 'concurrent_log_handler.ConcurrentRotatingFileHandler',
            'filename': os.path.join(LOGGING_FILES_DIR, 'cilbench.log'),
            'formatter': 'verbose',
            'maxBytes': 1024*1024*200,  # 200MB
            'backupCount': 10           # 最多10个文件
        },
        # output to console settings
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple'
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': True,
        },
        # cil.train, cil.data, cil.gradcheck 都传播到这里
        'cil': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

REST_FRAMEWORK = {
    'NON_FIELD_ERRORS_KEY': 'non_field_errors',
}
