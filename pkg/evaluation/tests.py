import math

import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, RangeError
from .metrics import (
    always_positive_f1, average_over_phases, forgetting, group_f1, macro_f1, mean_average_precision,
    weight_norm_summary
)
from .reports import PhaseReport, RunReport, dumps_records, loads_records, validate_record


def oracle_f1(scores, targets, threshold):
    n, k = scores.shape
    per_class = []
    for c in range(k):
        tp = fp = fn = 0
        for i in range(n):
            pred = scores[i, c] >= threshold
            true = targets[i, c] == 1
            tp += pred and true
            fp += pred and not true
            fn += (not pred) and true
        per_class.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    return per_class, math.fsum(per_class) / k


def oracle_ap(scores, targets):
    n = len(scores)
    positives = [i for i in range(n) if targets[i] == 1]
    if not positives:
        return None

    def ahead(j, i):
        return scores[j] > scores[i] or (scores[j] == scores[i] and j < i)

    precisions = []
    for i in positives:
        rank = 1 + sum(1 for j in range(n) if ahead(j, i))
        hits = 1 + sum(1 for j in positives if ahead(j, i))
        precisions.append(hits / rank)
    return math.fsum(precisions) / len(positives)


def make_report(phase, classes, per_class_f1, m=0.5, fr=None, strategy='IODFD'):
    return PhaseReport(
        phase=phase, strategy=strategy, classes=tuple(classes), per_class_f1=list(per_class_f1),
        macro_f1=math.fsum(per_class_f1) / len(per_class_f1), per_class_ap=[m] * len(classes), map=m,
        weight_norms=[1.0] * len(classes), labels_histogram={1: 3, 2: 1}, fr=fr)


class MacroF1Tests(SimpleTestCase):
    def test_perfect(self):
        targets = np.array([[1, 0], [0, 1], [1, 1]])
        per_class, macro = macro_f1(targets * 0.9, targets)
        self.assertEqual(per_class, [1.0, 1.0])
        self.assertEqual(macro, 1.0)

    def test_empty_class_is_zero(self):
        per_class, macro = macro_f1([[0.1, 0.9], [0.2, 0.8]], [[0, 1], [0, 1]])
        self.assertEqual(per_class, [0.0, 1.0])
        self.assertEqual(macro, 0.5)

    def test_hand_confusion(self):
        scores = np.array([[0.9, 0.7], [0.6, 0.2], [0.3, 0.4]])
        targets = np.array([[1, 1], [0, 0], [0, 1]])
        per_class, macro = macro_f1(scores, targets)
        self.assertEqual(per_class, [2 / 3, 2 / 3])
        self.assertAlmostEqual(macro, 2 / 3, places=15)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n, k = int(rng.integers(1, 21)), int(rng.integers(1, 6))
            scores = rng.integers(0, 11, size=(n, k)) / 10.0
            targets = (rng.random((n, k)) < 0.4).astype(int)
            self.assertEqual(macro_f1(scores, targets), oracle_f1(scores, targets, 0.5))

    def test_invariant_to_example_order(self):
        rng = np.random.default_rng(1)
        scores, targets = rng.random((15, 4)), (rng.random((15, 4)) < 0.5).astype(int)
        perm = rng.permutation(15)
        self.assertEqual(macro_f1(scores, targets), macro_f1(scores[perm], targets[perm]))


class AveragePrecisionTests(SimpleTestCase):
    def test_examples(self):
        per_class, m = mean_average_precision([[0.9], [0.8], [0.1], [0.05]], [[1], [1], [0], [0]])
        self.assertEqual(per_class, [1.0])

        per_class, _ = mean_average_precision([[0.9], [0.8], [0.7], [0.1]], [[0], [0], [0], [1]])
        self.assertEqual(per_class, [1 / 4])

        per_class, m = mean_average_precision([[0.9], [0.8], [0.7], [0.6]], [[1], [0], [1], [0]])
        self.assertAlmostEqual(per_class[0], 5 / 6, places=15)
        self.assertAlmostEqual(m, 5 / 6, places=15)

    def test_class_without_positives_is_excluded(self):
        per_class, m = mean_average_precision([[0.9, 0.2], [0.1, 0.8]], [[1, 0], [0, 0]])
        self.assertEqual(per_class, [1.0, None])
        self.assertEqual(m, 1.0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n, k = int(rng.integers(1, 21)), int(rng.integers(1, 6))
            scores = rng.integers(0, 11, size=(n, k)) / 10.0
            targets = (rng.random((n, k)) < 0.4).astype(int)
            expected = [oracle_ap(scores[:, c], targets[:, c]) for c in range(k)]
            present = [ap for ap in expected if ap is not None]
            expected_map = math.fsum(present) / len(present) if present else 0.0
            self.assertEqual(mean_average_precision(scores, targets), (expected, expected_map))

    def test_monotone_transform(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            scores, targets = rng.random((12, 3)), (rng.random((12, 3)) < 0.5).astype(int)
            self.assertEqual(mean_average_precision(scores, targets),
                             mean_average_precision(scores ** 3 * 2.0 + 1.0, targets))


class PhaseMetricTests(SimpleTestCase):
    def test_forgetting(self):
        base = make_report(0, [3, 5], [0.452, 0.452])
        self.assertEqual(forgetting(base, base, [3, 5]), 0.0)

        current = make_report(1, [3, 5, 7], [0.445, 0.445, 0.1])
        self.assertAlmostEqual(forgetting(base, current, [3, 5]), 0.7, places=12)

        collapsed = make_report(1, [3, 5, 7], [0.0, 0.0, 0.9])
        self.assertAlmostEqual(forgetting(base, collapsed, [3, 5]), 45.2, places=12)

        with self.assertRaises(ConfigurationError):
            forgetting(base, make_report(1, [3, 7], [0.1, 0.2]), [3, 5])

    def test_group_f1(self):
        self.assertEqual(group_f1([1, 2, 3], [0.5, 0.25, 1.0], [1, 3]), 0.75)
        with self.assertRaises(ConfigurationError):
            group_f1([1, 2], [0.5, 0.25], [4])

    def test_average_over_phases(self):
        single = average_over_phases([make_report(0, [0], [0.4], m=0.3)])
        self.assertEqual(single, {'avg_f1': 0.4, 'avg_map': 0.3, 'avg_fr': None, 'phases': 1})

        constant = average_over_phases([make_report(i, [0], [0.25], fr=1.0 if i else None) for i in range(4)])
        self.assertEqual(constant['avg_f1'], 0.25)
        self.assertEqual(constant['avg_fr'], 1.0)

        f1s = [0.452, 0.43, 0.41, 0.39, 0.363]
        summary = average_over_phases([make_report(i, [0], [f]) for i, f in enumerate(f1s)])
        self.assertAlmostEqual(summary['avg_f1'], 0.409, places=12)

        with self.assertRaises(ConfigurationError):
            average_over_phases([])

    def test_weight_norm_summary(self):
        self.assertEqual(weight_norm_summary([1.0, 3.0, 4.0, 8.0], 2), (2.0, 6.0, 3.0))
        self.assertEqual(weight_norm_summary([1.0, 3.0], 2), (2.0, None, None))
        with self.assertRaises(RangeError):
            weight_norm_summary([1.0], 0)

    def test_always_positive_f1(self):
        self.assertEqual(always_positive_f1(1.0), 1.0)
        self.assertEqual(always_positive_f1(0.0), 0.0)
        self.assertAlmostEqual(always_positive_f1(0.25), 0.4, places=15)


class RecordTests(SimpleTestCase):
    def build_run(self):
        run = RunReport(strategy='IODFD')
        run.phases.append(make_report(0, [2, 0], [0.5, 0.75]))
        phase1 = make_report(1, [2, 0, 1], [0.5, 0.5, 0.25], fr=12.5)
        phase1.lam, phase1.old_f1, phase1.new_f1 = 2 * math.sqrt(3), 0.5, 0.25
        run.phases.append(phase1)
        return run

    def test_records_validate(self):
        records = loads_records(dumps_records(self.build_run().to_records()))
        self.assertEqual([r['record'] for r in records], ['phase', 'phase', 'summary'])
        for r in records:
            validate_record(r)
        self.assertEqual(records[1]['lambda'], 2 * math.sqrt(3))
        self.assertEqual(records[0]['labels_histogram'], {'1': 3, '2': 1})

    def test_summary_recomputable(self):
        records = loads_records(dumps_records(self.build_run().to_records()))
        phases, summary = records[:-1], records[-1]
        self.assertEqual(summary['avg_f1'], math.fsum(r['macro_f1'] for r in phases) / len(phases))
        self.assertEqual(summary['avg_map'], math.fsum(r['map'] for r in phases) / len(phases))
        self.assertEqual(summary['avg_fr'], 12.5)

    def test_invalid_records(self):
        record = self.build_run().phases[0].to_record()
        record['per_class_f1'] = [0.5]
        with self.assertRaises(ConfigurationError):
            validate_record(record)
        with self.assertRaises(ConfigurationError):
            validate_record({'record': 'other'})

    def test_dumps_is_deterministic(self):
        self.assertEqual(dumps_records(self.build_run().to_records()),
                         dumps_records(self.build_run().to_records()))
