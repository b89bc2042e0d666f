from audiotasks.storage import save_dataset
from utils.exceptions import ConfigurationError
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    """
    生成合成数据集文件
    """
    help = 'Generate a synthetic multi-label dataset file'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--path', default=None, dest='path',
            help='Dataset file to write, default "<out>/dataset-<seed>.txt".',
        )

    def handle_experiment(self, cfg, **options):
        if cfg.source != 'synthetic':
            raise ConfigurationError('gen_data needs a synthetic dataset source', module='cli')

        dataset = cfg.load_dataset()
        cfg.build_plan(dataset.n_classes).check_dataset(dataset)
        path = options.get('path') or self.output_path(cfg, f'dataset-{cfg.seed}.txt')
        save_dataset(dataset, path, force=bool(options.get('force')))
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {len(dataset)} clips ({dataset.n_classes} classes, dim={dataset.dim}) to {path}'))
