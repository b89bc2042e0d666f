import io
import json
import math
import os
import tempfile
from collections import OrderedDict
from unittest import mock

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from rest_framework.exceptions import ValidationError

from audiotasks.checks import check_synth_settings
from audiotasks.datasets import Dataset, Example
from audiotasks.phases import PhasePlan, eval_view, phase_overlap, phase_view, phase_views, split_dataset
from audiotasks.storage import load_dataset
from audiotasks.synthetic import SynthConfig, gen_synthetic
from evaluation.metrics import always_positive_f1
from evaluation.reports import dumps_records, loads_records, validate_record
from gradcore.checks import check_gradcheck_settings
from learners.checkpoint import load_checkpoint
from learners.checks import check_model_settings
from learners.gradchecks import corrupt_item, default_items
from learners.losses import DistillConfig, LossBreakdown
from learners.network import ModelConfig, build_learner, freeze
from utils.exceptions import CILError, ConfigurationError, DegenerateInputError, EmptyViewError, NumericError
from version import __version__
from .benchmark import BenchmarkOutcome, benchmark_config, majority, majority_checks, run_benchmark
from .checks import check_train_settings
from .config import parse_experiment_config
from .management.commands.run import Command as RunCommand
from .strategies import STRATEGY_FLAGS, Strategy
from .trainer import (
    CILRunner, PhaseTrainer, TrainConfig, evaluate_phase, measure_lambda_schedule, prepare_incremental_learner,
    run_cil, run_strategies, train_base_learner, train_phase
)


def small_problem(seed=0, n_classes=6, clips_per_class=40, max_labels=2):
    dataset = gen_synthetic(SynthConfig(n_classes=n_classes, feature_dim=6, clips_per_class=clips_per_class,
                                        zipf_exponent=0.5, max_labels=max_labels, seed=seed))
    plan = PhasePlan.from_sizes(n_classes, 2, 2, 2, seed=seed)
    model_cfg = ModelConfig(input_dim=6, hidden_dims=(8,), embedding_dim=4, init_scale=0.01)
    return dataset, plan, model_cfg


def small_train_config(**kwargs):
    kwargs.setdefault('epochs', 3)
    kwargs.setdefault('batch_size', 8)
    kwargs.setdefault('lr_initial', 0.05)
    kwargs.setdefault('lr_incremental', 0.02)
    return TrainConfig(**kwargs)


def incremental_setup(strategy, seed=0):
    """
    phase 0 训练好的学习器，扩展到phase 1
    """
    dataset, plan, model_cfg = small_problem(seed)
    cfg = small_train_config(seed=seed)
    base = train_base_learner(dataset, plan, cfg, model_cfg)
    flags = Strategy.parse(strategy).flags
    teacher = freeze(base) if flags.distills else None
    student = prepare_incremental_learner(base, len(plan.classes(1)), 1, model_cfg.init_scale, seed=[seed, 1],
                                          freeze_old=flags.freeze_old_classifier)
    return base, teacher, student, phase_view(dataset, plan, 1), cfg


def assert_params_equal(a, b, names=None):
    pa, pb = a.named_parameters(), b.named_parameters()
    for name in names or pa:
        np.testing.assert_array_equal(pa[name], pb[name], err_msg=name)


class StrategyTests(SimpleTestCase):
    def test_flag_table(self):
        table = {
            'FT': (0, 0, 0, 0, 0, 0), 'FE': (1, 0, 0, 1, 1, 0), 'AT': (0, 0, 0, 0, 0, 1),
            'INDL_ONLY': (1, 0, 0, 0, 0, 0), 'OD_ONLY': (0, 1, 0, 0, 0, 0), 'IOD': (1, 1, 0, 0, 0, 0),
            'IFD': (1, 0, 1, 0, 0, 0), 'IODFD': (1, 1, 1, 0, 0, 0),
        }
        self.assertEqual(len(STRATEGY_FLAGS), 8)
        for name, expected in table.items():
            self.assertEqual(tuple(int(f) for f in Strategy.parse(name).flags), expected, name)

    def test_parse(self):
        self.assertIs(Strategy.parse('iodfd'), Strategy.IODFD)
        self.assertIs(Strategy.parse(Strategy.FE), Strategy.FE)
        self.assertFalse(Strategy.AT.incremental)
        with self.assertRaises(ConfigurationError):
            Strategy.parse('LWF')


class LambdaScheduleTests(SimpleTestCase):
    def test_thirty_plus_four_by_five(self):
        plan = PhasePlan.from_sizes(50, 30, 5, 4, seed=0)
        expected = [2 * math.sqrt(7), 2 * math.sqrt(8), 6.0, 2 * math.sqrt(10)]
        for got, want in zip(measure_lambda_schedule(plan, 2.0), expected):
            self.assertAlmostEqual(got, want, places=12)

    def test_equal_phases_strictly_increase(self):
        lams = measure_lambda_schedule(PhasePlan.from_sizes(20, 4, 4, 4, shuffle=False), 1.0)
        self.assertEqual(len(lams), 4)
        self.assertTrue(all(a < b for a, b in zip(lams, lams[1:])))

    def test_single_increment(self):
        plan = PhasePlan(phases=((0, 1, 2), (3, 4)))
        self.assertEqual(measure_lambda_schedule(plan, 2.0), [2 * math.sqrt(5 / 2)])

    def test_needs_two_phases(self):
        with self.assertRaises(ConfigurationError):
            measure_lambda_schedule(PhasePlan(phases=((0, 1),)), 2.0)


class TrainConfigTests(SimpleTestCase):
    def test_from_settings(self):
        cfg = TrainConfig.from_settings()
        self.assertEqual((cfg.epochs, cfg.batch_size, cfg.momentum), (120, 32, 0.9))
        self.assertEqual((cfg.lr_for_phase(0), cfg.lr_for_phase(3)), (0.01, 0.001))
        self.assertEqual(cfg.distill, DistillConfig(delta=2.0, omega=2.0, eps=1e-8))

        cfg = TrainConfig.from_settings(epochs=5, omega=3.0, seed=None)
        self.assertEqual(cfg.epochs, 5)
        self.assertEqual(cfg.distill.omega, 3.0)
        self.assertEqual(cfg.seed, 0)

    def test_invalid(self):
        for kwargs in ({'epochs': -1}, {'batch_size': 0}, {'momentum': 1.0}, {'lr_incremental': 0.0},
                       {'threshold': 1.0}):
            with self.assertRaises(ConfigurationError, msg=str(kwargs)):
                TrainConfig(**kwargs)


class TrainPhaseTests(SimpleTestCase):
    def test_zero_epochs_leaves_learner_unchanged(self):
        dataset, plan, model_cfg = small_problem()
        learner = build_learner(model_cfg, len(plan.classes(0)), seed=[0, 0])
        trained = train_phase(learner, None, phase_view(dataset, plan, 0), small_train_config(epochs=0), 'FT')
        self.assertIsNot(trained, learner)
        assert_params_equal(trained, learner)

    def test_input_learner_is_not_modified(self):
        dataset, plan, model_cfg = small_problem()
        learner = build_learner(model_cfg, len(plan.classes(0)), seed=[0, 0])
        before = learner.copy()
        trained = train_phase(learner, None, phase_view(dataset, plan, 0), small_train_config(), 'FT')
        assert_params_equal(learner, before)
        self.assertFalse(np.array_equal(trained.classifier.weight, before.classifier.weight))

    def test_fe_keeps_frozen_parameters_bit_identical(self):
        base, teacher, student, pd, cfg = incremental_setup('FE')
        trained = train_phase(student, teacher, pd, cfg, 'FE')
        n_old = base.class_count
        frozen = [name for name in trained.named_parameters() if name.startswith('extractor.')]
        assert_params_equal(trained, base, frozen)
        np.testing.assert_array_equal(trained.classifier.weight[:n_old], base.classifier.weight)
        np.testing.assert_array_equal(trained.classifier.bias[:n_old], base.classifier.bias)
        self.assertFalse(np.array_equal(trained.classifier.weight[n_old:], student.classifier.weight[n_old:]))

    def test_iodfd_loss_components(self):
        _, teacher, student, pd, cfg = incremental_setup('IODFD')
        trainer = PhaseTrainer(small_train_config(epochs=15), 'IODFD')
        trainer.train(student, teacher, pd)

        self.assertTrue(trainer.history)
        for r in trainer.history:
            self.assertAlmostEqual(r.loss.total, r.loss.bce + r.loss.fd + r.loss.lam * r.loss.od, delta=1e-12)
            self.assertGreater(r.loss.bce, 0.0)
            self.assertEqual(r.loss.lam, 2.0 * math.sqrt(4 / 2))
        self.assertTrue(any(r.loss.od > 0 for r in trainer.history[1:]))
        self.assertTrue(any(r.loss.fd > 0 for r in trainer.history[1:]))
        self.assertLess(trainer.epoch_losses()[-1], trainer.history[0].loss.total)

    def test_ft_has_no_distillation_terms(self):
        _, teacher, student, pd, cfg = incremental_setup('FT')
        self.assertIsNone(teacher)
        trainer = PhaseTrainer(cfg, 'FT')
        trainer.train(student, None, pd)
        for r in trainer.history:
            self.assertEqual((r.loss.od, r.loss.fd, r.loss.lam), (0.0, 0.0, 0.0))

    def test_distilling_strategy_needs_teacher(self):
        _, _, student, pd, cfg = incremental_setup('FT')
        with self.assertRaises(ConfigurationError):
            train_phase(student, None, pd, cfg, 'IODFD')

    def test_nan_loss_reports_position(self):
        _, teacher, student, pd, cfg = incremental_setup('IODFD')
        nan_loss = (LossBreakdown.compose(bce=float('nan')), OrderedDict())
        with mock.patch('incremental.trainer.total_loss', return_value=nan_loss):
            with self.assertRaises(NumericError) as cm:
                train_phase(student, teacher, pd, cfg, 'IODFD')

        exc = cm.exception
        self.assertEqual((exc.epoch, exc.batch, exc.component, exc.phase), (0, 0, 'bce', 1))
        self.assertEqual(exc.exit_code, 2)

    def test_zero_norm_feature_reports_position(self):
        _, teacher, student, pd, cfg = incremental_setup('IFD')
        last = student.extractor.layers[-1]
        last.weight[:] = 0.0
        last.bias[:] = 0.0
        with self.assertRaises(DegenerateInputError) as cm:
            train_phase(student, teacher, pd, cfg, 'IFD')

        exc = cm.exception
        self.assertEqual((exc.module, exc.phase, exc.exit_code), ('losses', 1, 2))
        self.assertIn('epoch=0, batch=0', str(exc))


class RunCILTests(SimpleTestCase):
    def test_one_phase_plan_is_plain_training(self):
        dataset, _, model_cfg = small_problem()
        plan = PhasePlan(phases=((0, 1, 2, 3),))
        cfg = small_train_config()
        reports = [run_cil(dataset, plan, s, cfg, model_cfg) for s in ('FT', 'IODFD', 'AT')]
        for r in reports[1:]:
            self.assertEqual(r.phases[0].per_class_f1, reports[0].phases[0].per_class_f1)
            self.assertEqual(r.phases[0].per_class_ap, reports[0].phases[0].per_class_ap)
            self.assertEqual(r.phases[0].weight_norms, reports[0].phases[0].weight_norms)
        self.assertIsNone(reports[0].summary['avg_fr'])

    def test_rerun_is_bit_identical(self):
        dataset, plan, model_cfg = small_problem()
        train, held_out = split_dataset(dataset, 0.3, seed=0)
        runs = [run_cil(train, plan, 'IODFD', small_train_config(), model_cfg, eval_dataset=held_out)
                for _ in range(2)]
        self.assertEqual(dumps_records(runs[0].to_records()), dumps_records(runs[1].to_records()))

    def test_reports_score_classes_so_far(self):
        dataset, plan, model_cfg = small_problem()
        report = run_cil(dataset, plan, 'IOD', small_train_config(), model_cfg)
        self.assertEqual(len(report.phases), plan.n_phases)
        for phase, p in enumerate(report.phases):
            self.assertEqual(p.classes, plan.classes_so_far(phase))
            self.assertEqual(len(p.per_class_f1), len(plan.classes_so_far(phase)))
            self.assertEqual(len(p.weight_norms), len(plan.classes_so_far(phase)))
            self.assertEqual(p.fr is None, phase == 0)
            self.assertEqual(p.lam is None, phase == 0)
        for r in report.to_records():
            validate_record(r)

    def test_at_is_not_incremental(self):
        dataset, plan, model_cfg = small_problem()
        report = run_cil(dataset, plan, 'AT', small_train_config(), model_cfg)
        self.assertFalse(report.incremental)
        self.assertTrue(all(r['incremental'] is False for r in report.to_records()))
        self.assertTrue(all(p.lam is None for p in report.phases))

    def test_fe_extractor_is_stable_across_phases(self):
        dataset, plan, model_cfg = small_problem()
        cfg = small_train_config()
        base = train_base_learner(dataset, plan, cfg, model_cfg)
        runner = CILRunner(dataset, plan, 'FE', cfg, model_cfg)
        runner.run(base_learner=base)
        final = runner.learner
        names = [name for name in final.named_parameters() if name.startswith('extractor.')]
        assert_params_equal(final, base, names)
        n_base = base.class_count
        np.testing.assert_array_equal(final.classifier.weight[:n_base], base.classifier.weight)
        self.assertEqual(final.class_count, len(plan.all_classes))

    def test_shared_base_learner_gives_identical_phase_zero(self):
        dataset, plan, model_cfg = small_problem()
        runners = run_strategies(dataset, plan, ['FT', 'IFD', 'IODFD'], small_train_config(), model_cfg)
        self.assertEqual([r.strategy for r in runners], [Strategy.FT, Strategy.IFD, Strategy.IODFD])
        for runner in runners:
            self.assertEqual(len(runner.trainers), plan.n_phases - 1)
            self.assertEqual(runner.report.phases[0].per_class_f1, runners[0].report.phases[0].per_class_f1)

        alone = run_cil(dataset, plan, 'IODFD', small_train_config(), model_cfg)
        self.assertEqual(dumps_records(alone.to_records()), dumps_records(runners[2].report.to_records()))

    def test_threaded_strategies_match_sequential(self):
        dataset, plan, model_cfg = small_problem()
        cfg = small_train_config()
        one = run_strategies(dataset, plan, ['FT', 'IODFD', 'AT'], cfg, model_cfg)
        three = run_strategies(dataset, plan, ['FT', 'IODFD', 'AT'], cfg, model_cfg, max_threads=3)
        for a, b in zip(one, three):
            self.assertEqual(a.strategy, b.strategy)
            self.assertEqual(dumps_records(a.report.to_records()), dumps_records(b.report.to_records()))
        with self.assertRaises(ConfigurationError):
            run_strategies(dataset, plan, ['FT'], cfg, model_cfg, max_threads=0)

    def test_unexpected_error_is_logged_and_wrapped(self):
        dataset, plan, model_cfg = small_problem()
        with mock.patch.object(CILRunner, 'run', side_effect=RuntimeError('boom')):
            with self.assertLogs('cil.train', level='ERROR') as logs:
                with self.assertRaises(CILError) as cm:
                    run_strategies(dataset, plan, ['FT', 'IODFD'], small_train_config(), model_cfg, max_threads=2)

        self.assertIn('strategy FT crashed', str(cm.exception))
        self.assertIn('RuntimeError: boom', str(cm.exception))
        self.assertEqual(cm.exception.exit_code, 2)
        self.assertTrue(any('strategy IODFD crashed' in line for line in logs.output))

    def test_dedupe_drops_clips_seen_in_earlier_phases(self):
        dataset, plan, model_cfg = small_problem()
        runner = CILRunner(dataset, plan, 'IODFD', small_train_config(dedupe=True), model_cfg)
        runner.run()
        self.assertEqual([v.phase for v in runner.views], list(range(plan.n_phases)))
        seen = set()
        for view in runner.views:
            self.assertFalse(seen.intersection(view.clip_ids), f'phase {view.phase}')
            seen.update(view.clip_ids)
        self.assertEqual([v.clip_ids for v in runner.views],
                         [v.clip_ids for v in phase_views(dataset, plan, dedupe=True)])

        plain = CILRunner(dataset, plan, 'IODFD', small_train_config(), model_cfg)
        plain.run()
        self.assertGreater(sum(phase_overlap(plain.views)), 0.0)

    def test_errors_carry_phase(self):
        examples = [Example(f'c{i}', np.array([float(i % 2), float(i % 3)]), (i % 2,)) for i in range(12)]
        dataset = Dataset(dim=2, n_classes=3, examples=examples)
        plan = PhasePlan(phases=((0, 1), (2,)))
        model_cfg = ModelConfig(input_dim=2, hidden_dims=(3,), embedding_dim=2)
        with self.assertRaises(EmptyViewError) as cm:
            run_cil(dataset, plan, 'IODFD', small_train_config(batch_size=4), model_cfg)
        self.assertEqual(cm.exception.phase, 1)
        self.assertIn('phase 1', str(cm.exception))

    def test_evaluate_phase_old_new_split(self):
        dataset, plan, model_cfg = small_problem()
        report = run_cil(dataset, plan, 'IFD', small_train_config(), model_cfg)
        last = report.phases[-1]
        f1_of = dict(zip(last.classes, last.per_class_f1))
        old = plan.classes_so_far(plan.n_phases - 2)
        new = plan.classes(plan.n_phases - 1)
        self.assertAlmostEqual(last.old_f1, sum(f1_of[c] for c in old) / len(old), places=12)
        self.assertAlmostEqual(last.new_f1, sum(f1_of[c] for c in new) / len(new), places=12)
        self.assertIsNone(report.phases[0].old_f1)

        with self.assertRaises(ConfigurationError):
            evaluate_phase(build_learner(model_cfg, 1, seed=0), dataset, plan, 1)


class BenchmarkOrderingTests(SimpleTestCase):
    """
    CIL_BENCHMARK上各策略的相对表现，按多数seed判断
    """
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.outcomes = run_benchmark()
        cls.verdict = majority_checks(cls.outcomes)

    def test_benchmark_config(self):
        cfg = benchmark_config(0)
        self.assertTrue(cfg.synth.orthogonal)
        self.assertEqual(cfg.synth.zipf_exponent, 0.0)
        self.assertLess(cfg.train.lr_incremental, cfg.train.lr_initial)
        self.assertEqual(cfg.strategies, [Strategy.FT, Strategy.FE, Strategy.IODFD])
        self.assertEqual([o.seed for o in self.outcomes], list(settings.CIL_BENCHMARK['SEEDS']))

    def test_phase_zero_beats_always_positive_baseline(self):
        for outcome in self.outcomes:
            cfg = benchmark_config(outcome.seed)
            _, eval_set = cfg.train_eval_datasets()
            view = eval_view(eval_set, outcome.plan, 0)
            baseline = sum(always_positive_f1(p) for p in view.y.mean(axis=0)) / view.y.shape[1]
            with self.subTest(seed=outcome.seed):
                self.assertGreater(outcome.reports[Strategy.IODFD].phases[0].macro_f1, baseline)

    def test_shared_phase_zero(self):
        for outcome in self.outcomes:
            first = [r.phases[0].to_record() for r in outcome.reports.values()]
            for rec in first[1:]:
                self.assertEqual(rec['per_class_f1'], first[0]['per_class_f1'])

    def test_fine_tuning_forgets_ten_times_more(self):
        self.assertTrue(self.verdict['ft_forgets_most'])

    def test_fine_tuning_old_classes_collapse(self):
        self.assertTrue(self.verdict['ft_old_classes_collapse'])

    def test_frozen_extractor_learns_new_classes_worse(self):
        self.assertTrue(self.verdict['fe_new_classes_below_ft'])

    def test_distillation_keeps_average_f1(self):
        self.assertTrue(self.verdict['iodfd_avg_f1_above_ft'])

    def test_norm_ratios_reported(self):
        for outcome in self.outcomes:
            for s in outcome.reports:
                ratio = outcome.norm_ratio(s)
                self.assertTrue(math.isfinite(ratio) and ratio > 0, f'{s.value} seed {outcome.seed}')


class MajorityTests(SimpleTestCase):
    def test_majority(self):
        self.assertTrue(majority([True, False, True]))
        self.assertFalse(majority([True, False, False]))
        self.assertFalse(majority([True, False]))
        self.assertFalse(majority([]))

    def test_checks_need_all_strategies(self):
        outcome = BenchmarkOutcome(seed=0, plan=PhasePlan(phases=((0,), (1,))), reports=OrderedDict())
        with self.assertRaises(ConfigurationError):
            outcome.checks()


class ExperimentConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = parse_experiment_config({})
        self.assertEqual(cfg.source, 'synthetic')
        self.assertEqual(cfg.synth.n_classes, 10)
        self.assertEqual(cfg.plan_sizes['base_size'], 4)
        self.assertEqual(cfg.strategies, [Strategy.IODFD])
        self.assertEqual(cfg.train.epochs, 120)
        self.assertEqual(cfg.eval_fraction, 0.3)

    def test_dedupe_and_orthogonal_fields(self):
        cfg = parse_experiment_config({'synth': {'orthogonal': True}, 'train': {'dedupe': True}})
        self.assertTrue(cfg.synth.orthogonal)
        self.assertTrue(cfg.train.dedupe)
        cfg = parse_experiment_config({})
        self.assertFalse(cfg.synth.orthogonal)
        self.assertFalse(cfg.train.dedupe)

    def test_seed_and_output_overrides(self):
        cfg = parse_experiment_config({'seed': 3, 'output': '/tmp/a'}, seed=7, out='/tmp/b')
        self.assertEqual((cfg.seed, cfg.synth.seed, cfg.train.seed, cfg.output), (7, 7, 7, '/tmp/b'))

    def test_sections(self):
        cfg = parse_experiment_config({
            'synth': {'n_classes': 5, 'clips_per_class': 20},
            'plan': {'phases': [[4, 0], [1, 2]]},
            'model': {'hidden_dims': [8, 8], 'embedding_dim': 4},
            'train': {'epochs': 2, 'omega': 1.5},
            'strategies': ['ft', 'iodfd'],
        })
        self.assertEqual(cfg.build_plan(5).phases, ((4, 0), (1, 2)))
        self.assertEqual(cfg.model_config(3).hidden_dims, (8, 8))
        self.assertEqual(cfg.train.distill.omega, 1.5)
        self.assertEqual(cfg.strategies, [Strategy.FT, Strategy.IODFD])

    def test_infeasible_configs(self):
        for data in ({'synth': {'n_classes': 4}},
                     {'synth': {'n_classes': 4, 'max_labels': 5}, 'plan': {'base_size': 2, 'increments': 0}},
                     {'plan': {'phases': [[0, 1], [1]]}},
                     {'strategy': 'LWF'},
                     {'seed': -1},
                     {'dataset': {'source': 'file'}},
                     {'train': {'delta': 0.5}}):
            with self.assertRaises(ValidationError, msg=json.dumps(data)):
                parse_experiment_config(data)


TINY_CONFIG = {
    'synth': {'n_classes': 4, 'feature_dim': 4, 'clips_per_class': 40, 'max_labels': 2},
    'plan': {'base_size': 2, 'increment_size': 1, 'increments': 2},
    'model': {'hidden_dims': [6], 'embedding_dim': 3},
    'train': {'epochs': 2, 'batch_size': 8, 'lr_initial': 0.05, 'lr_incremental': 0.02},
    'strategy': 'IODFD',
}


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name
        self.config_path = self.write_config(TINY_CONFIG)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, data, name='config.json'):
        path = os.path.join(self.out, name)
        with open(path, 'w') as f:
            json.dump(data, f)
        return path

    def call(self, name, *args, **kwargs):
        stdout = io.StringIO()
        call_command(name, *args, stdout=stdout, **kwargs)
        return stdout.getvalue()

    def read(self, filename):
        with open(os.path.join(self.out, filename)) as f:
            return f.read()

    def test_gen_data(self):
        self.call('gen_data', config=self.config_path, out=self.out, seed=2)
        path = os.path.join(self.out, 'dataset-2.txt')
        dataset = load_dataset(path)
        self.assertEqual((dataset.dim, dataset.n_classes), (4, 4))
        first = self.read('dataset-2.txt')

        with self.assertRaises(CommandError) as cm:
            self.call('gen_data', config=self.config_path, out=self.out, seed=2)
        self.assertEqual(cm.exception.returncode, 1)

        self.call('gen_data', config=self.config_path, out=self.out, seed=2, force=True)
        self.assertEqual(self.read('dataset-2.txt'), first)

    def test_gen_data_rejects_infeasible_plan(self):
        path = self.write_config({'synth': {'n_classes': 4}}, 'bad.json')
        with self.assertRaises(CommandError) as cm:
            self.call('gen_data', config=path, out=self.out)
        self.assertEqual(cm.exception.returncode, 1)

    def test_bad_config_file(self):
        path = os.path.join(self.out, 'broken.json')
        with open(path, 'w') as f:
            f.write('{"seed": ')
        with self.assertRaises(CommandError) as cm:
            self.call('run', config=path, out=self.out)
        self.assertEqual(cm.exception.returncode, 1)

    def test_run_writes_valid_deterministic_results(self):
        self.call('run', config=self.config_path, out=self.out)
        text = self.read('results-IODFD.jsonl')
        records = loads_records(text)
        self.assertEqual([r['record'] for r in records], ['phase', 'phase', 'phase', 'summary'])
        for r in records:
            validate_record(r)
            self.assertEqual(r['strategy'], 'IODFD')
        for key in ('phase', 'strategy', 'macro_f1', 'map', 'fr', 'per_class_f1', 'weight_norms', 'lambda'):
            self.assertIn(key, records[0])

        phases, summary = records[:-1], records[-1]
        self.assertEqual(summary['avg_f1'], math.fsum(r['macro_f1'] for r in phases) / len(phases))
        self.assertEqual(summary['avg_fr'], math.fsum(r['fr'] for r in phases[1:]) / (len(phases) - 1))

        learner = load_checkpoint(os.path.join(self.out, 'checkpoint-IODFD.json'))
        self.assertEqual(learner.class_count, 4)
        self.assertEqual(learner.phase_index, 2)

        with self.assertRaises(CommandError) as cm:
            self.call('run', config=self.config_path, out=self.out)
        self.assertEqual(cm.exception.returncode, 1)

        self.call('run', config=self.config_path, out=self.out, force=True)
        self.assertEqual(self.read('results-IODFD.jsonl'), text)

    def test_run_at_records_are_not_incremental(self):
        self.call('run', config=self.config_path, out=self.out, strategy='AT')
        records = loads_records(self.read('results-AT.jsonl'))
        self.assertTrue(all(r['incremental'] is False for r in records))

    def test_compare(self):
        output = self.call('compare', config=self.config_path, out=self.out, strategies=['FT', 'IODFD', 'AT'],
                           max_threads=2)
        self.assertIn('Successfully compared 3 strategies', output)

        results = {s: loads_records(self.read(f'results-{s}.jsonl')) for s in ('FT', 'IODFD', 'AT')}
        self.assertEqual(results['FT'][0]['per_class_f1'], results['IODFD'][0]['per_class_f1'])

        series = self.read('compare-series.csv').splitlines()
        self.assertEqual(series[0], 'phase,f1_FT,fr_FT,map_FT,f1_IODFD,fr_IODFD,map_IODFD,f1_AT,fr_AT,map_AT')
        self.assertEqual(len(series), 1 + 3)
        row0 = series[1].split(',')
        self.assertEqual(row0[1], row0[4])
        self.assertEqual(row0[2], '')
        for phase, line in enumerate(series[1:]):
            cells = line.split(',')
            for i, s in enumerate(('FT', 'IODFD', 'AT')):
                record = results[s][phase]
                self.assertEqual(float(cells[1 + 3 * i]), record['macro_f1'])
                if phase == 0:
                    self.assertEqual(cells[2 + 3 * i], '')
                else:
                    self.assertEqual(float(cells[2 + 3 * i]), record['fr'])

        summary = self.read('compare-summary.csv').splitlines()
        self.assertEqual(summary[0], 'strategy,incremental,avg_f1,avg_map,avg_fr,final_old_f1,final_new_f1,'
                                     'norm_base,norm_incremental,norm_ratio')
        self.assertEqual(len(summary), 1 + 3)
        self.assertTrue(summary[3].startswith('AT,false,'))
        for line in summary[1:]:
            norm_base, norm_incremental, norm_ratio = (float(v) for v in line.split(',')[7:])
            self.assertGreater(norm_base, 0.0)
            self.assertAlmostEqual(norm_ratio, norm_incremental / norm_base, places=12)

        norms = self.read('weight-norms.csv').splitlines()
        self.assertEqual(norms[0], 'class,group,norm_FT,norm_IODFD,norm_AT')
        self.assertEqual(len(norms), 1 + 4)
        self.assertEqual([line.split(',')[1] for line in norms[1:]], ['base', 'base', 'incremental', 'incremental'])
        for i, line in enumerate(norms[1:]):
            cells = line.split(',')
            self.assertEqual(int(cells[0]), results['FT'][-2]['classes'][i])
            self.assertEqual([float(v) for v in cells[2:]],
                             [results[s][-2]['weight_norms'][i] for s in ('FT', 'IODFD', 'AT')])

        overlap = self.read('overlap.csv').splitlines()
        self.assertEqual(overlap[0], 'phase,overlap_fraction')
        self.assertEqual(overlap[1], '0,0')

    def test_compare_needs_two_strategies(self):
        with self.assertRaises(CommandError) as cm:
            self.call('compare', config=self.config_path, out=self.out, strategies=['IODFD'])
        self.assertEqual(cm.exception.returncode, 1)

    def test_benchmark_rejects_bad_threads(self):
        with self.assertRaises(CommandError) as cm:
            self.call('benchmark', max_threads=0)
        self.assertEqual(cm.exception.returncode, 1)

    def test_gradcheck_passes(self):
        output = self.call('gradcheck')
        self.assertIn(f'All {len(default_items())} gradient checks passed', output)
        self.assertGreaterEqual(len(default_items()), 10)
        self.assertNotIn('FAIL', output)

    def test_gradcheck_reports_corrupted_item(self):
        items = default_items()
        corrupted = [corrupt_item(items[0])] + items[1:3]
        with mock.patch('incremental.management.commands.gradcheck.default_items', return_value=corrupted):
            with self.assertRaises(CommandError) as cm:
                self.call('gradcheck', points=2)
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn(items[0].name, str(cm.exception))

    def test_version(self):
        self.assertEqual(RunCommand().get_version(), __version__)


class SettingsCheckTests(SimpleTestCase):
    def test_default_settings_pass(self):
        for check in (check_train_settings, check_synth_settings, check_model_settings, check_gradcheck_settings):
            self.assertEqual(check(None), [], check.__name__)

    def test_bad_train_settings(self):
        bad = dict(settings.CIL_TRAIN, DELTA=0.5, MOMENTUM=1.0, BATCH_SIZE=0)
        with override_settings(CIL_TRAIN=bad):
            self.assertEqual(len(check_train_settings(None)), 3)

    def test_bad_dedupe_and_orthogonal_settings(self):
        with override_settings(CIL_TRAIN=dict(settings.CIL_TRAIN, DEDUPE='yes')):
            self.assertEqual(len(check_train_settings(None)), 1)
        with override_settings(CIL_SYNTH=dict(settings.CIL_SYNTH, ORTHOGONAL=True, FEATURE_DIM=8, N_CLASSES=10)):
            self.assertEqual(len(check_synth_settings(None)), 1)
