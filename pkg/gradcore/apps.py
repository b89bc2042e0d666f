from django.apps import AppConfig
from django.core.checks import register

from . import checks


class GradcoreConfig(AppConfig):
    name = 'gradcore'

    def ready(self):
        register(checks.check_gradcheck_settings)
