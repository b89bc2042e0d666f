import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from utils.exceptions import CILError
from utils.files import atomic_write_text, ensure_dir
from version import __version__
from ...benchmark import majority_checks, run_benchmark
from .compare import dumps_csv


class Command(BaseCommand):
    """
    在settings.CIL_BENCHMARK上按多个seed运行FT、FE、IODFD，输出每个seed的检查结果和多数表决
    """
    help = 'Run the desk-scale benchmark over several seeds and check the strategy orderings'

    def add_arguments(self, parser):
        parser.add_argument(
            '--seeds', default=None, dest='seeds', type=int, nargs='+',
            help='Seeds to run, defaults to CIL_BENCHMARK["SEEDS"].',
        )
        parser.add_argument(
            '--max-threads', default=1, dest='max-threads', type=int,
            help='Max strategies running at the same time.',
        )
        parser.add_argument(
            '--out', default=None, dest='out',
            help='Also write benchmark.csv into this directory.',
        )

    def get_version(self):
        return __version__

    def handle(self, *args, **options):
        seeds = options.get('seeds') or list(settings.CIL_BENCHMARK['SEEDS'])
        max_threads = options.get('max-threads')
        if not max_threads or max_threads < 1:
            raise CommandError(f"Benchmark cancelled. invalid value of 'max-threads', {max_threads}", returncode=1)

        try:
            outcomes = run_benchmark(seeds, max_threads=max_threads)
        except ValidationError as e:
            raise CommandError(f'invalid benchmark config: {e.detail}', returncode=1)
        except CILError as e:
            raise CommandError(str(e), returncode=e.exit_code)

        rows = []
        for outcome in outcomes:
            checks = outcome.checks()
            for s in outcome.reports:
                rows.append([outcome.seed, s.value, outcome.avg(s, 'avg_f1'), outcome.avg(s, 'avg_fr'),
                             outcome.final(s).old_f1, outcome.final(s).new_f1, outcome.norm_ratio(s)])
            failed = [name for name, ok in checks.items() if not ok]
            self.stdout.write(f'seed {outcome.seed}: {len(checks) - len(failed)}/{len(checks)} checks hold'
                              + (f', failed: {", ".join(failed)}' if failed else ''))

        if options.get('out'):
            ensure_dir(options['out'])
            header = ['seed', 'strategy', 'avg_f1', 'avg_fr', 'final_old_f1', 'final_new_f1', 'norm_ratio']
            atomic_write_text(os.path.join(options['out'], 'benchmark.csv'), dumps_csv(header, rows))

        verdict = majority_checks(outcomes)
        failed = [name for name, ok in verdict.items() if not ok]
        if failed:
            raise CommandError(f'{len(failed)} of {len(verdict)} orderings fail on most seeds: {", ".join(failed)}',
                               returncode=2)

        self.stdout.write(self.style.SUCCESS(f'All {len(verdict)} orderings hold on most of {len(seeds)} seeds'))
