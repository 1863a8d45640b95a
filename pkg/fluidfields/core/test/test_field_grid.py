#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import unittest

import numpy as np

from fluidfields.core.ff_paras import GridParameters
from fluidfields.core.field_grid import Level4D, MultiResGrid4D, Gradients, GradBuffer, NonFiniteValueError, \
    stencil_forward, stencil_backward, curl, sample_to_mac, face_points
from fluidfields.core.fields import FunctionField


def small_grid_parameters(**overrides):
    values = dict(num_levels=2, base_res=4, finest_res=8, finest_time_res=4, features_per_level=2, hidden_width=8,
                  hash_table_size=0, init_scale=0.1, density_bias=-1.0)
    values.update(overrides)
    return GridParameters(**values)


def numerical_gradient(loss, array, index, eps=1e-6):
    saved = array[index]
    array[index] = saved + eps
    plus = loss()
    array[index] = saved - eps
    minus = loss()
    array[index] = saved
    return (plus - minus) / (2.0 * eps)


class TestLevel4D(unittest.TestCase):

    def test_interpolates_vertices(self):
        level = Level4D((3, 3, 3), 2, 1, features=np.arange(54, dtype=np.float64).reshape(54, 1))
        x = np.array([[0.5, 1.0, 0.0]])
        t = np.array([1.0])
        index, weights = level.corners(x, t)
        self.assertAlmostEqual(1.0, float(weights.sum()))
        expected = level.vertex_index(1, 2, 0, 1)
        self.assertAlmostEqual(float(expected), float(level.interpolate(index, weights)[0, 0]))

    def test_hashing(self):
        level = Level4D((8, 8, 8), 8, 2, table_size=64)
        self.assertTrue(level.hashed)
        index, _ = level.corners(np.random.default_rng(0).random((100, 3)), np.linspace(0, 1, 100))
        self.assertTrue(np.all(index >= 0) and np.all(index < 64))
        self.assertFalse(Level4D((2, 2, 2), 2, 2, table_size=64).hashed)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            Level4D((1, 4, 4), 4, 2)
        with self.assertRaises(ValueError):
            Level4D((2, 2, 2), 2, 2, features=np.zeros((3, 2)))


class TestMultiResGrid4D(unittest.TestCase):

    def test_level_resolutions(self):
        para = GridParameters(num_levels=16, base_res=16, finest_res=256, finest_time_res=128)
        resolutions = MultiResGrid4D.level_resolutions(para)
        self.assertEqual((16, 16), resolutions[0])
        self.assertEqual((256, 128), resolutions[-1])
        spatial = [r for r, _ in resolutions]
        self.assertEqual(sorted(spatial), spatial)

    def test_dense_by_default(self):
        para = GridParameters()
        self.assertEqual(0, para.hash_table_size)
        velocity = MultiResGrid4D.create(para, 3, np.random.default_rng(0))
        self.assertEqual(para.num_levels, len(velocity.levels))
        for level, (res, res_t) in zip(velocity.levels, MultiResGrid4D.level_resolutions(para)):
            self.assertFalse(level.hashed)
            self.assertEqual((res ** 3 * res_t, para.features_per_level), level.features.shape)

    def test_density_positive_velocity_zero(self):
        rng = np.random.default_rng(1)
        para = small_grid_parameters()
        density = MultiResGrid4D.create(para, 1, rng)
        velocity = MultiResGrid4D.create(para, 3, rng)
        x, t = rng.random((50, 3)), rng.random(50)
        self.assertTrue(np.all(density.query(x, t) > 0.0))
        self.assertEqual(0.0, float(np.abs(velocity.query(x, t)).max()))
        self.assertEqual("density", density.grad_key)
        self.assertEqual("velocity", velocity.grad_key)

    def test_clamps_to_box(self):
        grid = MultiResGrid4D.create(small_grid_parameters(), 1, np.random.default_rng(2))
        outside = grid.query([[1.5, -0.2, 0.5]], 2.0)
        inside = grid.query([[1.0, 0.0, 0.5]], 1.0)
        np.testing.assert_array_equal(inside, outside)

    def test_non_finite_input(self):
        grid = MultiResGrid4D.create(small_grid_parameters(), 1, np.random.default_rng(3))
        with self.assertRaises(NonFiniteValueError):
            grid.query([[np.nan, 0.5, 0.5]], 0.0)
        with self.assertRaises(ValueError):
            grid.query(np.zeros((4, 2)), 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        grid = MultiResGrid4D.create(small_grid_parameters(), 1, rng)
        x, t = rng.random((20, 3)), rng.random(20)
        c = rng.standard_normal((20, 1))

        def loss():
            return float(np.sum(c * grid.query(x, t) ** 2))

        value, cache = grid.forward(x, t)
        grads = Gradients.for_fields(density=grid)
        grid.backward(cache, 2.0 * c * value, grads)
        buffer = grads.get("density")
        for array, grad in zip(grid.parameters(), buffer):
            for _ in range(3):
                index = tuple(rng.integers(0, n) for n in array.shape)
                self.assertAlmostEqual(numerical_gradient(loss, array, index), grad[index],
                                       delta=1e-5 * (abs(grad[index]) + 1e-3))

    def test_absent_key_is_frozen(self):
        rng = np.random.default_rng(5)
        grid = MultiResGrid4D.create(small_grid_parameters(), 1, rng)
        value, cache = grid.forward(rng.random((5, 3)), 0.5)
        grads = Gradients.for_fields(velocity=MultiResGrid4D.create(small_grid_parameters(), 3, rng))
        grid.backward(cache, np.ones_like(value), grads)
        self.assertEqual(0.0, grads.get("velocity").norm())
        self.assertIsNone(grads.get("density"))

    def test_stencil_gradient(self):
        rng = np.random.default_rng(6)
        grid = MultiResGrid4D.create(small_grid_parameters(), 1, rng)
        x, t = 0.2 + 0.6 * rng.random((10, 3)), 0.2 + 0.6 * rng.random(10)
        c = rng.standard_normal((10, 1, 4))

        def loss():
            return float(np.sum(c * stencil_forward(grid, x, t)[0]))

        _, stencil_cache = stencil_forward(grid, x, t)
        grads = Gradients.for_fields(density=grid)
        stencil_backward(grid, stencil_cache, c, grads)
        decoder_w2 = grid.decoder.w2
        grad = grads.get("density")[len(grid.levels) + 2]
        for i in range(decoder_w2.shape[0]):
            self.assertAlmostEqual(numerical_gradient(loss, decoder_w2, (i, 0)), grad[i, 0],
                                   delta=1e-5 * (abs(grad[i, 0]) + 1e-3))

    def test_copy_is_independent(self):
        grid = MultiResGrid4D.create(small_grid_parameters(), 1, np.random.default_rng(7))
        other = grid.copy()
        other.levels[0].features += 1.0
        self.assertFalse(np.array_equal(grid.levels[0].features, other.levels[0].features))


class TestDifferences(unittest.TestCase):

    def test_linear_partials(self):
        field = FunctionField(lambda x, t: x @ np.array([1.0, -2.0, 3.0]) + 0.5 * t, 1)
        partials = stencil_forward(field, np.random.default_rng(8).random((5, 3)), 0.3)[0]
        np.testing.assert_allclose(np.tile([1.0, -2.0, 3.0, 0.5], (5, 1)), partials[:, 0, :], atol=1e-9)

    def test_curl_of_rotation(self):
        omega = np.array([0.0, 0.0, 1.5])
        field = FunctionField(lambda x, t: np.cross(omega, x - 0.5), 3)
        result = curl(field, np.random.default_rng(9).random((5, 3)), 0.0)
        np.testing.assert_allclose(np.tile(2.0 * omega, (5, 1)), result, atol=1e-8)

    def test_sample_to_mac(self):
        field = FunctionField(lambda x, t: np.tile([1.0, 2.0, 3.0], (x.shape[0], 1)), 3)
        mac = sample_to_mac(field, 0.0, (4, 5, 6))
        self.assertEqual((4, 5, 6), mac.resolution)
        self.assertTrue(np.all(mac.u == 1.0) and np.all(mac.v == 2.0) and np.all(mac.w == 3.0))
        points = face_points((4, 5, 6), 0)
        self.assertEqual(5 * 5 * 6, points.shape[0])
        np.testing.assert_allclose([0.0, 0.125, 0.125], points[0])


class TestGradients(unittest.TestCase):

    def test_add_and_norms(self):
        a = Gradients(density=GradBuffer([np.ones(3)]))
        b = Gradients(density=GradBuffer([np.ones(3)]), radiance=GradBuffer([np.array([2.0])]))
        a.add(b)
        self.assertEqual(["density", "radiance"], sorted(a.keys()))
        np.testing.assert_array_equal(np.full(3, 2.0), a.get("density")[0])
        self.assertAlmostEqual(2.0, a.norms()["radiance"])
        self.assertTrue(a.is_finite())
        a.get("radiance")[0][0] = np.inf
        self.assertFalse(a.is_finite())
