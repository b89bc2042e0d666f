import os

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from utils.exceptions import CILError
from utils.files import ensure_dir
from version import __version__
from ..config import load_experiment_config


class ExperimentCommand(BaseCommand):
    """
    读取实验配置的命令的基类

    handle_experiment()中抛出的CILError和配置校验错误转换为CommandError，
    退出码：1 配置/校验错误，2 运行时/数值错误
    """
    def add_arguments(self, parser):
        parser.add_argument(
            '--config', default=None, dest='config',
            help='Path of the JSON experiment config; defaults come from settings.CIL_*.',
        )
        parser.add_argument(
            '--seed', default=None, dest='seed', type=int,
            help='Override the seed in the config.',
        )
        parser.add_argument(
            '--out', default=None, dest='out',
            help='Output directory, overrides "output" in the config.',
        )
        parser.add_argument(
            # 当命令行有此参数时取值const, 否则取值default
            '--force', default=False, nargs='?', dest='force', const=True,
            help='Overwrite existing output files.',
        )

    def get_version(self):
        return __version__

    def handle(self, *args, **options):
        try:
            cfg = load_experiment_config(options.get('config'), seed=options.get('seed'), out=options.get('out'))
            return self.handle_experiment(cfg, **options)
        except ValidationError as e:
            raise CommandError(f'invalid config: {e.detail}', returncode=1)
        except CILError as e:
            raise CommandError(str(e), returncode=e.exit_code)

    def handle_experiment(self, cfg, **options):
        raise NotImplementedError('subclasses of ExperimentCommand must provide a handle_experiment() method')

    @staticmethod
    def output_path(cfg, filename: str) -> str:
        ensure_dir(cfg.output)
        return os.path.join(cfg.output, filename)
