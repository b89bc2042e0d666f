from evaluation.reports import dumps_records, validate_record
from learners.checkpoint import save_checkpoint
from utils.files import atomic_write_text, check_overwrite
from ...strategies import STRATEGY_CHOICES, Strategy
from ...trainer import CILRunner
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    """
    运行一个策略的完整阶段序列，写结果文件和最后阶段的检查点
    """
    help = 'Run class-incremental training with one strategy'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--strategy', default=None, dest='strategy', type=str.upper, choices=STRATEGY_CHOICES,
            help='Strategy to run, overrides the config.',
        )

    def handle_experiment(self, cfg, **options):
        strategy = Strategy.parse(options['strategy']) if options.get('strategy') else cfg.strategy
        force = bool(options.get('force'))
        results_path = self.output_path(cfg, f'results-{strategy.value}.jsonl')
        checkpoint_path = self.output_path(cfg, f'checkpoint-{strategy.value}.json')
        check_overwrite(results_path, force=force)
        check_overwrite(checkpoint_path, force=force)

        train_set, eval_set = cfg.train_eval_datasets()
        plan = cfg.build_plan(train_set.n_classes)
        self.stdout.write(self.style.NOTICE(f'strategy {strategy.value}, {plan.n_phases} phases, '
                                            f'{len(train_set)} training clips, seed {cfg.seed}'))

        runner = CILRunner(train_set, plan, strategy, cfg.train, model_cfg=cfg.model_config(train_set.dim),
                           eval_dataset=eval_set)
        report = runner.run()

        records = report.to_records()
        for r in records:
            validate_record(r)
        atomic_write_text(results_path, dumps_records(records), force=force)
        save_checkpoint(runner.learner, checkpoint_path, force=force)

        for p in report.phases:
            fr = '-' if p.fr is None else f'{p.fr:.2f}'
            self.stdout.write(f'phase {p.phase}: F1={p.macro_f1:.4f} mAP={p.map:.4f} Fr={fr}')

        summary = report.summary
        avg_fr = '-' if summary['avg_fr'] is None else f'{summary["avg_fr"]:.2f}'
        self.stdout.write(self.style.SUCCESS(
            f'avg F1={summary["avg_f1"]:.4f} avg mAP={summary["avg_map"]:.4f} avg Fr={avg_fr}; '
            f'results written to {results_path}'))
