import math
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from gradcore.optim import SGDMomentum
from utils.exceptions import ConfigurationError, DegenerateInputError, DimensionMismatch, RangeError
from .checkpoint import load_checkpoint, save_checkpoint
from .gradchecks import (
    IODFD_FLAGS, OD_ONLY_FLAGS, corrupt_item, default_items, run_gradcheck_suite, toy_incremental_problem
)
from .losses import (
    DistillConfig, LossBreakdown, StrategyFlags, adaptive_lambda, bce_indl, fd_loss, od_loss, rescale_pi,
    total_loss
)
from .network import (
    ClassifierParams, ExtractorLayer, ExtractorParams, ModelConfig, backward, build_learner, classify,
    expand_classifier, extract, forward, freeze, weight_norms
)


def small_config(**kwargs):
    kwargs.setdefault('input_dim', 4)
    kwargs.setdefault('hidden_dims', (6,))
    kwargs.setdefault('embedding_dim', 3)
    return ModelConfig(**kwargs)


def assert_learners_equal(a, b):
    pa, pb = a.named_parameters(), b.named_parameters()
    assert list(pa) == list(pb)
    for name in pa:
        np.testing.assert_array_equal(pa[name], pb[name], err_msg=name)


class NetworkTests(SimpleTestCase):
    def test_zero_extractor_gives_zero_features(self):
        layers = [ExtractorLayer(np.zeros((3, 2)), np.zeros(3), 'relu'),
                  ExtractorLayer(np.zeros((2, 3)), np.zeros(2), 'identity')]
        v = extract(ExtractorParams(layers), [0.7, -1.2])
        np.testing.assert_array_equal(v, [0.0, 0.0])

    def test_identity_layer_with_relu(self):
        extractor = ExtractorParams([ExtractorLayer(np.eye(2), np.zeros(2), 'relu')])
        np.testing.assert_array_equal(extract(extractor, [1.0, -2.0]), [1.0, 0.0])

    def test_extract_dimension_mismatch(self):
        learner = build_learner(small_config(), 2, seed=0)
        with self.assertRaises(DimensionMismatch):
            extract(learner.extractor, np.zeros(5))

    def test_layer_chain_is_validated(self):
        with self.assertRaises(DimensionMismatch):
            ExtractorParams([ExtractorLayer(np.zeros((3, 2)), np.zeros(3)),
                             ExtractorLayer(np.zeros((2, 4)), np.zeros(2), 'identity')])

    def test_seeded_extractor_is_reproducible(self):
        a = build_learner(small_config(), 3, seed=11)
        b = build_learner(small_config(), 3, seed=11)
        assert_learners_equal(a, b)
        x = np.linspace(-1.0, 1.0, 4)
        v1 = extract(a.extractor, x)
        self.assertEqual(v1.shape, (3,))
        np.testing.assert_array_equal(v1, extract(a.extractor, x))
        np.testing.assert_array_equal(v1, extract(b.extractor, x))

    def test_classify(self):
        zero = ClassifierParams(np.zeros((2, 3)), np.zeros(2))
        np.testing.assert_array_equal(classify(zero, [1.0, 2.0, 3.0]), [0.0, 0.0])

        one = ClassifierParams(np.array([[1.0, 1.0]]), np.array([1.0]))
        np.testing.assert_array_equal(classify(one, [2.0, 3.0]), [6.0])

        with self.assertRaises(DimensionMismatch):
            classify(one, [1.0, 2.0, 3.0])

    def test_expansion_keeps_old_logits(self):
        rng = np.random.default_rng(5)
        classifier = ClassifierParams(rng.standard_normal((30, 8)), rng.standard_normal(30))
        bigger = expand_classifier(classifier, 5, init_scale=0.01, seed=1)
        self.assertEqual(bigger.class_count, 35)
        np.testing.assert_array_equal(bigger.weight[:30], classifier.weight)
        np.testing.assert_array_equal(bigger.bias[:30], classifier.bias)
        np.testing.assert_array_equal(bigger.bias[30:], np.zeros(5))
        self.assertTrue(np.all(np.abs(bigger.weight[30:]) <= 0.01))

        v = rng.standard_normal((7, 8))
        np.testing.assert_array_equal(classify(bigger, v)[:, :30], classify(classifier, v))

    def test_expansion_init(self):
        classifier = ClassifierParams.empty(4)
        np.testing.assert_array_equal(expand_classifier(classifier, 3, 0.0, seed=2).weight, np.zeros((3, 4)))
        a = expand_classifier(classifier, 3, 0.01, seed=9)
        b = expand_classifier(classifier, 3, 0.01, seed=9)
        np.testing.assert_array_equal(a.weight, b.weight)
        with self.assertRaises(ConfigurationError):
            expand_classifier(classifier, 0, 0.01, seed=9)

    def test_freeze(self):
        learner = build_learner(small_config(), 3, seed=4)
        teacher = freeze(learner)
        x = np.random.default_rng(0).standard_normal((5, 4))
        v, o = teacher.forward(x)
        np.testing.assert_array_equal(v, extract(learner.extractor, x))
        np.testing.assert_array_equal(o, classify(learner.classifier, extract(learner.extractor, x)))

        opt = SGDMomentum(0.9)
        for _ in range(10):
            cache = forward(learner, x)
            grads = backward(learner, cache, np.ones_like(cache.o))
            learner.load_parameters(opt.step(learner.named_parameters(), grads, lr=0.1))

        v2, o2 = teacher.forward(x)
        np.testing.assert_array_equal(v, v2)
        np.testing.assert_array_equal(o, o2)
        self.assertFalse(np.array_equal(o, classify(learner.classifier, extract(learner.extractor, x))))
        with self.assertRaises(ValueError):
            teacher.state.classifier.weight[0, 0] = 1.0

    def test_weight_norms(self):
        classifier = ClassifierParams(np.array([[3.0, 4.0], [0.0, 0.0]]), np.array([10.0, -1.0]))
        self.assertEqual(weight_norms(classifier), [5.0, 0.0])

    def test_frozen_rows_get_no_gradient(self):
        learner = build_learner(small_config(), 3, seed=4)
        learner.classifier.frozen_mask[:2] = True
        cache = forward(learner, np.ones((2, 4)))
        grads = backward(learner, cache, np.ones_like(cache.o), train_extractor=False)
        self.assertEqual(list(grads), ['classifier.weight', 'classifier.bias'])
        np.testing.assert_array_equal(grads['classifier.weight'][:2], 0.0)
        np.testing.assert_array_equal(grads['classifier.bias'][:2], 0.0)
        self.assertTrue(np.all(grads['classifier.bias'][2:] != 0.0))

    def test_model_config_validation(self):
        with self.assertRaises(ConfigurationError):
            ModelConfig(input_dim=0)
        with self.assertRaises(ConfigurationError):
            ModelConfig(input_dim=3, init_scale=-0.1)


class LossTests(SimpleTestCase):
    def test_bce_examples(self):
        self.assertAlmostEqual(bce_indl([[0.0]], [[1.0]]), math.log(2), places=15)
        self.assertAlmostEqual(bce_indl([[3.0, 0.0]], [[0.0, 1.0]], old_count=1), math.log(2), places=15)
        self.assertAlmostEqual(bce_indl([[5.0, 0.0]], [[1.0, 1.0]], old_count=1), math.log(2), places=15)
        self.assertLess(bce_indl([[40.0, -40.0]], [[1.0, 0.0]]), 1e-15)

    def test_bce_ignores_old_logits(self):
        rng = np.random.default_rng(1)
        o = rng.standard_normal((4, 5))
        y = (rng.random((4, 5)) < 0.5).astype(float)
        base = bce_indl(o, y, old_count=2)
        o[:, :2] = rng.standard_normal((4, 2)) * 100.0
        self.assertEqual(bce_indl(o, y, old_count=2), base)

    def test_bce_errors(self):
        with self.assertRaises(ConfigurationError):
            bce_indl([[0.0, 0.0]], [[1.0, 0.0]], old_count=2)
        with self.assertRaises(ConfigurationError):
            bce_indl([[0.0, 0.0]], [[0.5, 0.0]])

    def test_rescale_pi_examples(self):
        np.testing.assert_allclose(rescale_pi([1.0, 1.0], 3.0), [0.5, 0.5], rtol=0, atol=1e-15)
        np.testing.assert_allclose(rescale_pi([4.0, 1.0], 2.0), [2 / 3, 1 / 3], rtol=0, atol=1e-8)
        u = np.array([0.2, 0.5, 0.3, 1.0])
        np.testing.assert_allclose(rescale_pi(u, 1.0), u / u.sum(), rtol=0, atol=1e-8)
        with self.assertRaises(DegenerateInputError):
            rescale_pi([0.0, 0.0], 2.0)
        with self.assertRaises(RangeError):
            rescale_pi([1.0, 0.0], 0.5)

    def test_rescale_pi_properties(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            u = rng.random(6) + 1e-3
            flat, sharp = rescale_pi(u, 2.0), rescale_pi(u, 1.0)
            self.assertAlmostEqual(flat.sum(), 1.0, delta=1e-12)
            np.testing.assert_array_equal(np.argsort(flat, kind='stable'), np.argsort(u, kind='stable'))
            self.assertLess(flat.max() / flat.min(), sharp.max() / sharp.min())

    def test_rescale_pi_ignores_common_scale(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            u = rng.uniform(0.1, 0.9, size=5)
            np.testing.assert_allclose(rescale_pi(0.5 * u, 2.0), rescale_pi(u, 2.0), rtol=0, atol=1e-7)

    def test_od_loss(self):
        cfg = DistillConfig(delta=2.0)
        t = np.random.default_rng(3).standard_normal((3, 4))
        self.assertEqual(od_loss(t, t.copy(), cfg), 0.0)
        self.assertEqual(od_loss(np.zeros((3, 0)), np.zeros((3, 0)), cfg), 0.0)

        logit = math.log(9.0)
        value = od_loss([[logit, -logit]], [[-logit, logit]], DistillConfig(delta=1.0))
        self.assertAlmostEqual(value, 0.8 * math.log(9.0), places=5)

        rng = np.random.default_rng(4)
        for _ in range(100):
            self.assertGreaterEqual(od_loss(rng.standard_normal((2, 5)) * 3, rng.standard_normal((2, 5)) * 3, cfg),
                                    0.0)

    def test_fd_loss(self):
        v = np.array([[0.3, -1.2, 2.0]])
        self.assertAlmostEqual(fd_loss(v, v), 0.0, places=12)
        self.assertEqual(fd_loss([[1.0, 0.0]], [[0.0, 1.0]]), 1.0)
        self.assertAlmostEqual(fd_loss([[1.0, 0.0]], [[1.0, 1.0]]), 1 - 1 / math.sqrt(2), places=15)
        self.assertAlmostEqual(fd_loss([[-1.0, 0.0]], [[1.0, 0.0]]), 2.0, places=15)
        with self.assertRaises(DegenerateInputError):
            fd_loss([[0.0, 0.0]], [[1.0, 0.0]])

    def test_fd_loss_scale_invariant(self):
        rng = np.random.default_rng(5)
        t, s = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        self.assertAlmostEqual(fd_loss(3.5 * t, 0.25 * s), fd_loss(t, s), places=12)

    def test_adaptive_lambda(self):
        self.assertAlmostEqual(adaptive_lambda(35, 5, 2.0), 2 * math.sqrt(7), places=12)
        self.assertAlmostEqual(adaptive_lambda(50, 5, 2.0), 2 * math.sqrt(10), places=12)
        self.assertEqual(adaptive_lambda(6, 6, 2.0), 2.0)
        with self.assertRaises(ConfigurationError):
            adaptive_lambda(6, 0, 2.0)

    def test_distill_config_validation(self):
        with self.assertRaises(RangeError):
            DistillConfig(delta=0.5)
        with self.assertRaises(RangeError):
            DistillConfig(omega=0.0)

    def test_breakdown_identity(self):
        b = LossBreakdown.compose(bce=0.5, od=0.25, fd=0.125, lam=4.0)
        self.assertEqual(b.total, 1.625)
        self.assertEqual(b.as_dict()['lambda'], 4.0)

    def test_phase0_total_is_bce(self):
        learner = build_learner(small_config(), 3, seed=1)
        x = np.random.default_rng(0).standard_normal((4, 4))
        y = np.array([[1, 0, 0], [0, 1, 1], [0, 0, 1], [1, 1, 0]], dtype=float)
        for flags in (StrategyFlags(), IODFD_FLAGS, OD_ONLY_FLAGS):
            b, _ = total_loss(learner, None, x, y, DistillConfig(), flags)
            self.assertEqual((b.od, b.fd, b.lam), (0.0, 0.0, 0.0))
            self.assertEqual(b.total, bce_indl(forward(learner, x).o, y))

    def test_copy_of_teacher_costs_ln2_per_new_class(self):
        learner = build_learner(small_config(), 2, seed=6)
        teacher = freeze(learner)
        learner.classifier = expand_classifier(learner.classifier, 1, init_scale=0.0, seed=0)
        learner.phase_index, learner.old_class_count, learner.new_class_count = 1, 2, 1
        x = np.random.default_rng(1).standard_normal((3, 4))
        y = np.array([[0, 0, 1]] * 3, dtype=float)

        b, _ = total_loss(learner, teacher, x, y, DistillConfig(), IODFD_FLAGS)
        self.assertEqual(b.od, 0.0)
        self.assertAlmostEqual(b.fd, 0.0, places=12)
        self.assertAlmostEqual(b.total, math.log(2), places=12)
        self.assertAlmostEqual(b.lam, 2 * math.sqrt(3), places=12)

    def test_distillation_without_teacher(self):
        learner, _, x, y = toy_incremental_problem(np.random.default_rng(0))
        with self.assertRaises(ConfigurationError):
            total_loss(learner, None, x, y, DistillConfig(), IODFD_FLAGS)
        b, grads = total_loss(learner, None, x, y, DistillConfig(), StrategyFlags())
        self.assertEqual(b.total, b.bce)
        self.assertIn('extractor.0.weight', grads)

    def test_iodfd_components_on_toy_batch(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            learner, teacher, x, y = toy_incremental_problem(rng)
            b, grads = total_loss(learner, teacher, x, y, DistillConfig(), IODFD_FLAGS)
            self.assertGreater(b.bce, 0.0)
            self.assertGreater(b.od, 0.0)
            self.assertGreater(b.fd, 0.0)
            self.assertAlmostEqual(b.total, b.bce + b.fd + b.lam * b.od, delta=1e-12)
            self.assertEqual(set(grads), set(learner.named_parameters()))

            b2, _ = total_loss(learner, teacher, x, y, DistillConfig(), IODFD_FLAGS)
            self.assertEqual(b, b2)

    def test_toy_problem_is_well_conditioned(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            learner, teacher, x, y = toy_incremental_problem(rng)
            v_teacher, _ = teacher.forward(x)
            cache = forward(learner, x)
            self.assertTrue(np.all(np.linalg.norm(v_teacher, axis=1) >= 0.1))
            self.assertTrue(np.all(np.linalg.norm(cache.v, axis=1) >= 0.1))
            self.assertTrue(np.all(np.abs(cache.pre_activations[0]) >= 1e-3))
            self.assertTrue(all(np.all(layer.bias != 0) for layer in learner.extractor.layers))
            self.assertEqual(y.shape, (4, 3))
            self.assertTrue(np.all(y[:, -1] == 1))

    def test_frozen_extractor_has_no_gradient(self):
        learner, teacher, x, y = toy_incremental_problem(np.random.default_rng(2))
        flags = StrategyFlags(indl_mask=True, freeze_extractor=True, freeze_old_classifier=True)
        _, grads = total_loss(learner, teacher, x, y, DistillConfig(), flags)
        self.assertEqual(list(grads), ['classifier.weight', 'classifier.bias'])


class GradCheckSuiteTests(SimpleTestCase):
    def test_suite_passes(self):
        results = run_gradcheck_suite(points=10, epsilon=1e-5, tolerance=1e-4, seed=0)
        self.assertGreaterEqual(len(results), 10)
        names = [r.name for r in results]
        for name in ('affine', 'relu', 'sigmoid', 'log', 'l2_normalize', 'dot', 'bce_indl', 'od_loss',
                     'fd_loss', 'total_loss[IODFD]'):
            self.assertIn(name, names)
        for r in results:
            with self.subTest(item=r.name):
                self.assertTrue(r.passed, r.message)
                self.assertLess(r.max_rel_error, 1e-4)

    def test_corrupted_gradient_is_reported(self):
        items = {item.name: item for item in default_items()}
        results = run_gradcheck_suite([items['sigmoid'], corrupt_item(items['od_loss'])], points=3)
        self.assertTrue(results[0].passed)
        self.assertFalse(results[1].passed)
        self.assertEqual(results[1].name, 'od_loss')
        self.assertIn('max relative error', results[1].message)


class CheckpointTests(SimpleTestCase):
    def test_round_trip_is_bit_exact(self):
        learner, _, _, _ = toy_incremental_problem(np.random.default_rng(3))
        learner.classifier.frozen_mask[0] = True
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'learner.json')
            save_checkpoint(learner, path)
            loaded = load_checkpoint(path)

        assert_learners_equal(learner, loaded)
        np.testing.assert_array_equal(loaded.classifier.frozen_mask, [True, False, False])
        self.assertEqual((loaded.phase_index, loaded.old_class_count, loaded.new_class_count), (1, 2, 1))
        self.assertEqual([layer.activation for layer in loaded.extractor.layers], ['relu', 'identity'])

    def test_refuses_overwrite_without_force(self):
        learner = build_learner(small_config(), 2, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'learner.json')
            save_checkpoint(learner, path)
            with self.assertRaises(ConfigurationError):
                save_checkpoint(learner, path, force=False)

    def test_invalid_document(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'bad.json')
            with open(path, 'w') as f:
                f.write('{"format": "something-else"}')
            with self.assertRaises(ConfigurationError):
                load_checkpoint(path)
