from django.apps import AppConfig
from django.core.checks import register

from . import checks


class AudiotasksConfig(AppConfig):
    name = 'audiotasks'

    def ready(self):
        register(checks.check_synth_settings)
