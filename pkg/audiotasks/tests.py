import os
import tempfile
from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, DatasetParseError, EmptyViewError, RangeError
from .datasets import Dataset, Example
from .phases import (
    PhasePlan, at_view, eval_view, labels_histogram, phase_overlap, phase_view, phase_views, split_dataset
)
from .samplers import BalancedBatchSampler, balanced_batches
from .storage import dumps_dataset, load_dataset, loads_dataset, save_dataset
from .synthetic import SynthConfig, gen_synthetic, make_prototypes


def hand_dataset(label_sets, dim=2, n_classes=4):
    examples = [Example(f'c{i}', np.full(dim, float(i)), labels) for i, labels in enumerate(label_sets)]
    return Dataset(dim=dim, n_classes=n_classes, examples=examples)


class SyntheticTests(SimpleTestCase):
    def test_noise_free_single_label_clip_is_prototype(self):
        cfg = SynthConfig(n_classes=5, feature_dim=4, clips_per_class=6, max_labels=1, noise_sigma=0.0, seed=3)
        protos = make_prototypes(cfg)
        dataset = gen_synthetic(cfg)
        for ex in dataset:
            self.assertEqual(len(ex.labels), 1)
            np.testing.assert_array_equal(ex.x, protos[ex.labels[0]])

    def test_same_seed_same_dataset(self):
        cfg = SynthConfig(clips_per_class=30, seed=5)
        self.assertEqual(gen_synthetic(cfg), gen_synthetic(cfg))
        self.assertNotEqual(gen_synthetic(cfg), gen_synthetic(SynthConfig(clips_per_class=30, seed=6)))

    def test_zipf_frequencies(self):
        dataset = gen_synthetic(SynthConfig(n_classes=10, zipf_exponent=1.0, seed=1))
        counts = Counter(c for ex in dataset for c in ex.labels)
        self.assertEqual(counts[0], 200)
        self.assertEqual(counts[9], 20)
        self.assertEqual(counts[0] / counts[9], 10)
        self.assertTrue(all(counts[k] >= counts[k + 1] for k in range(9)))

    def test_orthogonal_prototypes(self):
        cfg = SynthConfig(n_classes=10, feature_dim=16, clips_per_class=20, orthogonal=True, seed=3)
        protos = make_prototypes(cfg)
        self.assertEqual(protos.shape, (10, 16))
        np.testing.assert_allclose(protos @ protos.T, np.eye(10), rtol=0, atol=1e-12)
        self.assertEqual(gen_synthetic(cfg), gen_synthetic(cfg))
        with self.assertRaises(ConfigurationError):
            SynthConfig(n_classes=10, feature_dim=8, orthogonal=True)

    def test_labels_valid(self):
        cfg = SynthConfig(n_classes=6, clips_per_class=40, max_labels=3, seed=2)
        dataset = gen_synthetic(cfg)
        for ex in dataset:
            self.assertTrue(1 <= len(ex.labels) <= 3)
            self.assertTrue(all(0 <= c < 6 for c in ex.labels))
        self.assertEqual(len(set(dataset.clip_ids)), len(dataset))

    def test_infeasible_config(self):
        with self.assertRaises(ConfigurationError):
            SynthConfig(n_classes=3, max_labels=4)
        with self.assertRaises(ConfigurationError):
            SynthConfig(noise_sigma=-1.0)


class StorageTests(SimpleTestCase):
    def test_round_trip(self):
        dataset = gen_synthetic(SynthConfig(n_classes=4, feature_dim=3, clips_per_class=10, seed=4))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'data.txt')
            save_dataset(dataset, path)
            self.assertEqual(load_dataset(path), dataset)
            with self.assertRaises(ConfigurationError):
                save_dataset(dataset, path, force=False)

    def test_same_dataset_same_bytes(self):
        cfg = SynthConfig(n_classes=4, feature_dim=3, clips_per_class=10, seed=4)
        self.assertEqual(dumps_dataset(gen_synthetic(cfg)), dumps_dataset(gen_synthetic(cfg)))

    def test_comments_are_skipped(self):
        text = '#cil-dataset v1 dim=2 classes=3\n# a comment\na,0.5;1,2\n\nb,1;-1,0;1\n'
        dataset = loads_dataset(text)
        self.assertEqual(dataset.clip_ids, ['a', 'b'])
        self.assertEqual(dataset.examples[1].labels, (0, 1))

    def test_row_dimension_mismatch_names_line(self):
        text = '#cil-dataset v1 dim=2 classes=3\na,0.5;1,2\nb,1;2;3,0\n'
        with self.assertRaises(DatasetParseError) as cm:
            loads_dataset(text)
        self.assertEqual(cm.exception.line_number, 3)
        self.assertIn('line 3', str(cm.exception))

    def test_empty_labels(self):
        with self.assertRaises(DatasetParseError) as cm:
            loads_dataset('#cil-dataset v1 dim=2 classes=3\na,0.5;1,\n')
        self.assertEqual(cm.exception.line_number, 2)

    def test_invalid_utf8_names_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'bad.txt')
            with open(path, 'wb') as f:
                f.write(b'#cil-dataset v1 dim=2 classes=2\nc\xff1,0.5;0.5,1\n')
            with self.assertRaises(DatasetParseError) as cm:
                load_dataset(path)

        self.assertEqual(cm.exception.line_number, 2)
        self.assertEqual(cm.exception.module, 'data')
        self.assertEqual(cm.exception.exit_code, 1)
        self.assertIn('0xff', str(cm.exception))

    def test_bad_header_and_labels(self):
        with self.assertRaises(DatasetParseError):
            loads_dataset('a,0.5;1,2\n')
        with self.assertRaises(DatasetParseError):
            loads_dataset('#cil-dataset v1 dim=2 classes=3\na,0.5;1,3\n')
        with self.assertRaises(DatasetParseError):
            loads_dataset('#cil-dataset v1 dim=2 classes=3\na,0.5;1,0\na,0.5;1,1\n')


class PhaseTests(SimpleTestCase):
    def setUp(self):
        self.plan = PhasePlan(phases=[[0], [1], [2], [3]])

    def test_clip_reappears_with_label_subsets(self):
        dataset = hand_dataset([{1, 3}, {0}, {1}, {2}, {3}])
        view1 = phase_view(dataset, self.plan, 1)
        self.assertEqual(view1.columns, (0, 1))
        self.assertEqual(view1.clip_ids, ['c0', 'c2'])
        np.testing.assert_array_equal(view1.y[0], [0.0, 1.0])

        view3 = phase_view(dataset, self.plan, 3)
        self.assertEqual(view3.clip_ids, ['c0', 'c4'])
        np.testing.assert_array_equal(view3.y[0], [0.0, 0.0, 0.0, 1.0])

    def test_single_phase_view_is_whole_dataset(self):
        dataset = hand_dataset([{1, 3}, {0}, {2}])
        view = phase_view(dataset, PhasePlan(phases=[[0, 1, 2, 3]]), 0)
        self.assertEqual(view.clip_ids, dataset.clip_ids)

    def test_empty_view(self):
        dataset = hand_dataset([{0}, {1}, {2}])
        with self.assertRaises(EmptyViewError):
            phase_view(dataset, self.plan, 3)
        with self.assertRaises(RangeError):
            phase_view(dataset, self.plan, 4)

    def test_plan_validation(self):
        with self.assertRaises(ConfigurationError):
            PhasePlan(phases=[[0, 1], [1, 2]])
        with self.assertRaises(ConfigurationError):
            PhasePlan(phases=[[0], []])
        with self.assertRaises(ConfigurationError):
            PhasePlan.from_sizes(n_classes=5, base_size=4, increment_size=2, increments=1)

    def test_plan_from_sizes(self):
        plan = PhasePlan.from_sizes(n_classes=10, base_size=4, increment_size=2, increments=3, seed=7)
        self.assertEqual([len(p) for p in plan.phases], [4, 2, 2, 2])
        self.assertEqual(sorted(plan.all_classes), list(range(10)))
        self.assertEqual(plan, PhasePlan.from_sizes(10, 4, 2, 3, seed=7))
        self.assertEqual(plan.classes_so_far(1), plan.phases[0] + plan.phases[1])

    def test_views_never_leak_labels(self):
        dataset = gen_synthetic(SynthConfig(clips_per_class=40, seed=2))
        plan = PhasePlan.from_sizes(10, 4, 2, 3, seed=2)
        views = phase_views(dataset, plan)
        ids = set(dataset.clip_ids)
        for phase, view in enumerate(views):
            outside = [i for i, c in enumerate(view.columns) if c not in plan.phases[phase]]
            np.testing.assert_array_equal(view.y[:, outside], 0.0)
            self.assertTrue(np.all(view.y.sum(axis=1) >= 1))
            self.assertTrue(set(view.clip_ids) <= ids)

        overlap = phase_overlap(views)
        self.assertEqual(overlap[0], 0.0)
        self.assertTrue(all(0.0 <= f <= 1.0 for f in overlap))

    def test_dedupe_removes_overlap(self):
        dataset = gen_synthetic(SynthConfig(clips_per_class=150, seed=2))
        plan = PhasePlan.from_sizes(10, 4, 2, 3, seed=2)
        self.assertGreater(max(phase_overlap(phase_views(dataset, plan))), 0.0)
        self.assertEqual(phase_overlap(phase_views(dataset, plan, dedupe=True)), [0.0] * 4)

    def test_eval_view_expands(self):
        dataset = gen_synthetic(SynthConfig(clips_per_class=40, seed=3))
        plan = PhasePlan.from_sizes(10, 4, 2, 3, seed=3)
        first = eval_view(dataset, plan, 0)
        last = eval_view(dataset, plan, 3)
        self.assertEqual(first.columns, plan.phases[0])
        self.assertEqual(sorted(last.columns), list(range(10)))
        self.assertEqual(len(last), len(dataset))
        self.assertTrue(all(ex.has_any(plan.phases[0]) for ex in first.examples))

        h0 = labels_histogram(first.examples, first.columns)
        h3 = labels_histogram(last.examples, last.columns)

        def mean(h):
            return sum(k * v for k, v in h.items()) / sum(h.values())

        self.assertGreater(mean(h3), mean(h0))
        self.assertGreaterEqual(max(h3), max(h0))

    def test_at_view(self):
        dataset = hand_dataset([{1, 3}, {0}, {1}, {2}, {3}])
        view = at_view(dataset, self.plan, 1)
        self.assertEqual(view.target_classes, (0, 1))
        self.assertEqual(view.clip_ids, ['c0', 'c1', 'c2'])

    def test_labels_histogram(self):
        single = hand_dataset([{0}, {1}, {2}])
        self.assertEqual(dict(labels_histogram(single.examples, [0, 1, 2, 3])), {1: 3})
        multi = hand_dataset([{0, 1, 2}, {3}])
        self.assertEqual(dict(labels_histogram(multi.examples, [0, 1, 2])), {3: 1})

    def test_split(self):
        dataset = gen_synthetic(SynthConfig(clips_per_class=30, seed=1))
        train, test = split_dataset(dataset, 0.3, seed=1)
        self.assertEqual(len(train) + len(test), len(dataset))
        self.assertFalse(set(train.clip_ids) & set(test.clip_ids))
        self.assertEqual(split_dataset(dataset, 0.3, seed=1), (train, test))
        with self.assertRaises(ConfigurationError):
            split_dataset(dataset, 1.0)


class SamplerTests(SimpleTestCase):
    def test_round_robin_two_classes(self):
        dataset = hand_dataset([{0}, {0}, {0}, {1}, {1}], n_classes=2)
        view = phase_view(dataset, PhasePlan(phases=[[0, 1]]), 0)
        sampler = BalancedBatchSampler(view, batch_size=4, seed=0)
        for _ in range(5):
            slots = [sampler.next_slot() for _ in range(4)]
            self.assertEqual(Counter(c for c, _ in slots), {0: 2, 1: 2})
            for c, i in slots:
                self.assertIn(c, view.examples[i].labels)

    def test_single_class_is_shuffled_epochs(self):
        dataset = hand_dataset([{0}] * 7, n_classes=1)
        view = phase_view(dataset, PhasePlan(phases=[[0]]), 0)
        sampler = BalancedBatchSampler(view, batch_size=7, seed=3)
        self.assertEqual(sorted(sampler.next_batch()), list(range(7)))
        self.assertEqual(sorted(sampler.next_batch()), list(range(7)))

    def test_imbalanced_draws_are_equal(self):
        dataset = hand_dataset([{0}] * 90 + [{1}] * 10, n_classes=2)
        view = phase_view(dataset, PhasePlan(phases=[[0, 1]]), 0)
        sampler = BalancedBatchSampler(view, batch_size=32, seed=1)
        counts = Counter()
        for _ in range(1000):
            c, _ = sampler.next_slot()
            counts[c] += 1
            self.assertLessEqual(abs(counts[0] - counts[1]), 1)
        self.assertEqual(counts, {0: 500, 1: 500})

    def test_deterministic(self):
        dataset = gen_synthetic(SynthConfig(clips_per_class=20, seed=1))
        view = phase_view(dataset, PhasePlan.from_sizes(10, 4, 2, 3, seed=1), 0)
        self.assertEqual(balanced_batches(view, 8, seed=4, n_batches=10),
                         balanced_batches(view, 8, seed=4, n_batches=10))
        sampler = BalancedBatchSampler(view, batch_size=8)
        self.assertEqual(len(sampler), -(-len(view) // 8))
        self.assertEqual(len(sampler.epoch()), len(sampler))
        with self.assertRaises(ConfigurationError):
            BalancedBatchSampler(view, batch_size=0)
