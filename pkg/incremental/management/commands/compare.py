import csv
import io
from collections import OrderedDict

from django.core.management.base import CommandError

from audiotasks.phases import phase_overlap, phase_views
from audiotasks.storage import format_float
from evaluation.metrics import weight_norm_summary
from evaluation.reports import dumps_records, validate_record
from utils.exceptions import ConfigurationError
from utils.files import atomic_write_text, check_overwrite
from ...strategies import Strategy
from ...trainer import run_strategies
from ..base import ExperimentCommand


def _cell(value) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


class Command(ExperimentCommand):
    """
    多个策略的对比实验，增量策略从同一个phase 0学习器开始

    输出每个策略的结果文件，以及可直接画图的列数据：
    compare-series.csv, compare-summary.csv, weight-norms.csv, overlap.csv
    """
    help = 'Compare several class-incremental strategies on the same data and phase plan'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--strategies', default=None, dest='strategies', nargs='+',
            help='Strategies to compare, overrides the config.',
        )
        parser.add_argument(
            '--max-threads', default=4, dest='max-threads', type=int,
            help='Max strategies running at the same time.',
        )

    def handle_experiment(self, cfg, **options):
        max_threads = options.get('max-threads')
        if not max_threads or max_threads < 1:
            raise CommandError(f"Comparison cancelled. invalid value of 'max-threads', {max_threads}", returncode=1)

        strategies = cfg.strategies
        if options.get('strategies'):
            strategies = [Strategy.parse(s) for s in options['strategies']]
        if len(strategies) < 2 or len(set(strategies)) != len(strategies):
            raise ConfigurationError(f'compare needs at least 2 distinct strategies, got '
                                     f'{[s.value for s in strategies]}', module='cli')

        force = bool(options.get('force'))
        paths = OrderedDict((s, self.output_path(cfg, f'results-{s.value}.jsonl')) for s in strategies)
        table_paths = {name: self.output_path(cfg, f'{name}.csv')
                       for name in ('compare-series', 'compare-summary', 'weight-norms', 'overlap')}
        for path in list(paths.values()) + list(table_paths.values()):
            check_overwrite(path, force=force)

        train_set, eval_set = cfg.train_eval_datasets()
        plan = cfg.build_plan(train_set.n_classes)
        model_cfg = cfg.model_config(train_set.dim)
        self.stdout.write(self.style.NOTICE(
            f'{len(strategies)} strategies, {plan.n_phases} phases, max threads {max_threads}, seed {cfg.seed}'))

        runners = run_strategies(train_set, plan, strategies, cfg.train, model_cfg=model_cfg, eval_dataset=eval_set,
                                 max_threads=max_threads)
        reports = OrderedDict((runner.strategy, runner.report) for runner in runners)

        for s, report in reports.items():
            records = report.to_records()
            for r in records:
                validate_record(r)
            atomic_write_text(paths[s], dumps_records(records), force=force)

        atomic_write_text(table_paths['compare-series'], self.series_csv(reports), force=force)
        atomic_write_text(table_paths['compare-summary'], self.summary_csv(reports, plan), force=force)
        atomic_write_text(table_paths['weight-norms'], self.weight_norms_csv(reports, plan), force=force)
        overlaps = phase_overlap(phase_views(train_set, plan, dedupe=cfg.train.dedupe))
        atomic_write_text(table_paths['overlap'], dumps_csv(
            ['phase', 'overlap_fraction'], enumerate(overlaps)), force=force)

        for s, report in reports.items():
            summary = report.summary
            avg_fr = '-' if summary['avg_fr'] is None else f'{summary["avg_fr"]:.2f}'
            self.stdout.write(f'{s.value:<10} avg F1={summary["avg_f1"]:.4f} avg mAP={summary["avg_map"]:.4f} '
                              f'avg Fr={avg_fr}')
        self.stdout.write(self.style.SUCCESS(f'Successfully compared {len(strategies)} strategies, '
                                             f'results in {cfg.output}'))

    @staticmethod
    def series_csv(reports) -> str:
        header = ['phase']
        for s in reports:
            header += [f'f1_{s.value}', f'fr_{s.value}', f'map_{s.value}']

        n_phases = len(next(iter(reports.values())).phases)
        rows = []
        for phase in range(n_phases):
            row = [phase]
            for report in reports.values():
                p = report.phases[phase]
                row += [p.macro_f1, p.fr, p.map]
            rows.append(row)
        return dumps_csv(header, rows)

    @staticmethod
    def summary_csv(reports, plan) -> str:
        header = ['strategy', 'incremental', 'avg_f1', 'avg_map', 'avg_fr', 'final_old_f1', 'final_new_f1',
                  'norm_base', 'norm_incremental', 'norm_ratio']
        n_base = len(plan.classes(0))
        rows = []
        for s, report in reports.items():
            summary = report.summary
            final = report.phases[-1]
            rows.append([s.value, report.incremental, summary['avg_f1'], summary['avg_map'], summary['avg_fr'],
                         final.old_f1, final.new_f1, *weight_norm_summary(final.weight_norms, n_base)])
        return dumps_csv(header, rows)

    @staticmethod
    def weight_norms_csv(reports, plan) -> str:
        """
        最后阶段每个类分类单元的权重范数
        """
        base_classes = set(plan.classes(0))
        header = ['class', 'group'] + [f'norm_{s.value}' for s in reports]
        classes = plan.all_classes
        rows = []
        for i, c in enumerate(classes):
            row = [c, 'base' if c in base_classes else 'incremental']
            row += [report.phases[-1].weight_norms[i] for report in reports.values()]
            rows.append(row)
        return dumps_csv(header, rows)
