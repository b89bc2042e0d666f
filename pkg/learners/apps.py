from django.apps import AppConfig
from django.core.checks import register

from . import checks


class LearnersConfig(AppConfig):
    name = 'learners'

    def ready(self):
        register(checks.check_model_settings)
