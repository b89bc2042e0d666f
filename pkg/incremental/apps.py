from django.apps import AppConfig
from django.core.checks import register

from . import checks


class IncrementalConfig(AppConfig):
    name = 'incremental'

    def ready(self):
        register(checks.check_train_settings)
