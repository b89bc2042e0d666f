import json
import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from learners.gradchecks import default_items, run_gradcheck_suite
from utils.files import atomic_write_text


class Command(BaseCommand):
    """
    对所有可微函数和损失做有限差分梯度检查
    """
    help = 'Check analytic gradients of every layer and loss against finite differences'

    def add_arguments(self, parser):
        conf = settings.CIL_GRADCHECK
        parser.add_argument(
            '--points', default=conf['POINTS'], dest='points', type=int,
            help='Random points per checked item.',
        )
        parser.add_argument(
            '--epsilon', default=conf['EPSILON'], dest='epsilon', type=float,
            help='Finite difference step.',
        )
        parser.add_argument(
            '--tolerance', default=conf['TOLERANCE'], dest='tolerance', type=float,
            help='Largest accepted relative error.',
        )
        parser.add_argument(
            '--seed', default=0, dest='seed', type=int,
            help='Seed of the random points.',
        )
        parser.add_argument(
            '--out', default=None, dest='out',
            help='Also write gradcheck.json into this directory.',
        )

    def handle(self, *args, **options):
        points, epsilon, tolerance = options['points'], options['epsilon'], options['tolerance']
        if points < 1 or not epsilon > 0 or not tolerance > 0:
            raise CommandError(f'invalid gradcheck options points={points}, epsilon={epsilon}, '
                               f'tolerance={tolerance}', returncode=1)

        items = default_items()
        results = run_gradcheck_suite(items, points=points, epsilon=epsilon, tolerance=tolerance,
                                      seed=options['seed'])
        for r in results:
            line = f'{"PASS" if r.passed else "FAIL"} {r.name:<24} max relative error {r.max_rel_error:.3e}'
            if r.passed:
                self.stdout.write(line)
            else:
                self.stdout.write(self.style.ERROR(f'{line} {r.message}'))

        if options.get('out'):
            path = os.path.join(options['out'], 'gradcheck.json')
            atomic_write_text(path, json.dumps([r.as_dict() for r in results], indent=1) + '\n')

        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError(f'{len(failed)} of {len(results)} gradient checks failed: {", ".join(failed)}',
                               returncode=2)

        self.stdout.write(self.style.SUCCESS(f'All {len(results)} gradient checks passed '
                                             f'(tolerance {tolerance:g})'))
