import math

import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, DimensionMismatch, GradCheckError, NumericError, RangeError
from .arrays import flatten_parameters, unflatten_parameters, as_matrix
from .functions import Affine, ReLU, Sigmoid, Log, L2Normalize, Dot, sigmoid, softplus
from .gradcheck import CallableScalarFn, OpProbe, grad_check
from .optim import SGDMomentum, cosine_lr, sgd_momentum_step


class GradCheckTests(SimpleTestCase):
    def test_quadratic(self):
        fn = CallableScalarFn(lambda w: w @ w, lambda w: 2 * w, name='w.w')
        np.testing.assert_array_equal(fn.gradient(np.array([1.0, 2.0])), [2.0, 4.0])
        self.assertLess(grad_check(fn, [1.0, 2.0], epsilon=1e-5), 1e-6)

    def test_constant(self):
        fn = CallableScalarFn(lambda w: 3.0, lambda w: np.zeros_like(w))
        self.assertEqual(grad_check(fn, [0.3, -1.0, 2.0]), 0.0)

    def test_wrong_gradient_detected(self):
        fn = CallableScalarFn(lambda w: w @ w, lambda w: 3 * w)
        self.assertGreater(grad_check(fn, [1.0, 2.0]), 0.1)

    def test_non_finite_reports_coordinate(self):
        def value(w):
            return float(np.log(w[1]) + w[0])

        fn = CallableScalarFn(value, lambda w: np.array([1.0, 1.0 / w[1]]), name='log')
        with self.assertRaises(GradCheckError) as cm:
            grad_check(fn, [1.0, 5e-6], epsilon=1e-5)
        self.assertEqual(cm.exception.coordinate, 1)

    def test_epsilon_must_be_positive(self):
        fn = CallableScalarFn(lambda w: 0.0, lambda w: np.zeros_like(w))
        with self.assertRaises(ConfigurationError):
            grad_check(fn, [1.0], epsilon=0)

    def test_shipped_ops_pass(self):
        rng = np.random.default_rng(7)
        ops = [Affine(4, 3), ReLU(5), Sigmoid(3), Log(4), L2Normalize(3), Dot(4)]
        for op in ops:
            for _ in range(10):
                probe = OpProbe.sample(op, rng)
                with self.subTest(op=op.name):
                    self.assertLess(grad_check(probe, probe.point, epsilon=1e-5), 1e-4)


class FunctionTests(SimpleTestCase):
    def test_sigmoid_softplus(self):
        self.assertEqual(sigmoid(0.0), 0.5)
        self.assertAlmostEqual(float(softplus(0.0)), math.log(2), places=15)
        self.assertEqual(float(sigmoid(1000.0)), 1.0)
        self.assertEqual(float(sigmoid(-1000.0)), 0.0)

    def test_affine_dimension_mismatch(self):
        op = Affine(3, 2)
        with self.assertRaises(DimensionMismatch):
            op.forward(np.zeros(op.param_size()), np.zeros((1, 4)))

    def test_sample_uses_instance_dim(self):
        rng = np.random.default_rng(0)
        _, x_wide = ReLU(6).sample(rng)
        _, x_narrow = Log(2).sample(rng)
        self.assertEqual(x_wide.shape, (3, 6))
        self.assertEqual(x_narrow.shape, (3, 2))
        self.assertEqual(Sigmoid().in_dim, 0)
        with self.assertRaises(ConfigurationError):
            Sigmoid().sample(rng)

    def test_l2_normalize_unit_rows(self):
        y = L2Normalize().forward(None, [[3.0, 4.0]])
        np.testing.assert_allclose(y, [[0.6, 0.8]])

    def test_flatten_round_trip(self):
        named = {'a': np.arange(6.0).reshape(2, 3), 'b': np.array([7.0])}
        vec = flatten_parameters(named)
        back = unflatten_parameters(vec, named)
        np.testing.assert_array_equal(back['a'], named['a'])
        np.testing.assert_array_equal(back['b'], named['b'])
        with self.assertRaises(DimensionMismatch):
            unflatten_parameters(vec[:-1], named)

    def test_as_matrix_promotes_vector(self):
        self.assertEqual(as_matrix([1.0, 2.0]).shape, (1, 2))


class OptimTests(SimpleTestCase):
    def test_single_step(self):
        params, velocity = sgd_momentum_step([1.0], [2.0], [0.0], lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(velocity, [2.0])
        self.assertAlmostEqual(params[0], 0.8, places=15)

    def test_zero_gradient_keeps_params(self):
        p = np.array([0.3, -0.7])
        params, _ = sgd_momentum_step(p, np.zeros(2), np.zeros(2), lr=0.5, momentum=0.9)
        np.testing.assert_array_equal(params, p)

    def test_two_steps(self):
        params, velocity = sgd_momentum_step([0.0], [1.0], [0.0], lr=1.0, momentum=0.5)
        self.assertEqual(params[0], -1.0)
        params, velocity = sgd_momentum_step(params, [1.0], velocity, lr=1.0, momentum=0.5)
        self.assertEqual(velocity[0], 1.5)
        self.assertEqual(params[0], -2.5)

    def test_zero_momentum_is_plain_descent(self):
        rng = np.random.default_rng(3)
        p, g, v = rng.standard_normal((3, 5))
        params, _ = sgd_momentum_step(p, g, v, lr=0.03, momentum=0.0)
        np.testing.assert_array_equal(params, p - 0.03 * g)

    def test_shape_mismatch(self):
        with self.assertRaises(ConfigurationError):
            sgd_momentum_step([1.0, 2.0], [1.0], [0.0, 0.0], lr=0.1, momentum=0.9)

    def test_cosine_lr(self):
        self.assertEqual(cosine_lr(0, 120, 0.01), 0.01)
        self.assertAlmostEqual(cosine_lr(60, 120, 0.01), 0.005, places=15)
        self.assertAlmostEqual(cosine_lr(90, 120, 0.01), 0.0014644660940672625, places=12)
        with self.assertRaises(RangeError):
            cosine_lr(120, 120, 0.01)

    def test_cosine_lr_non_increasing(self):
        lrs = [cosine_lr(e, 37, 0.1) for e in range(37)]
        self.assertTrue(all(a >= b for a, b in zip(lrs, lrs[1:])))

    def test_optimizer_masks_rows_and_skips_frozen(self):
        opt = SGDMomentum(momentum=0.9)
        params = {'w': np.ones((3, 2)), 'frozen': np.full(2, 5.0)}
        grads = {'w': np.full((3, 2), 0.5)}
        mask = np.array([True, False, True])
        out = opt.step(params, grads, lr=0.1, row_masks={'w': mask})
        np.testing.assert_array_equal(out['w'][mask], params['w'][mask])
        np.testing.assert_allclose(out['w'][1], [0.95, 0.95])
        self.assertIs(out['frozen'], params['frozen'])

    def test_optimizer_rejects_nan(self):
        opt = SGDMomentum(momentum=0.0)
        with self.assertRaises(NumericError):
            opt.step({'w': np.ones(2)}, {'w': np.array([np.nan, 0.0])}, lr=0.1)
