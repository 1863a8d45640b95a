#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import unittest

import numpy as np

from fluidfields.core.ff_enum import PointSampling
from fluidfields.core.ff_paras import LossWeights, RunParameters, SolverParameters
from fluidfields.core.field_grid import MultiResGrid4D, Gradients
from fluidfields.core.fields import FunctionField, FluidFields
from fluidfields.core.physics_losses import PointBatch, sample_point_batch, density_transport_residual, \
    loss_density, loss_projection, loss_laminar, total_loss, LossBreakdown
from fluidfields.core.pressure_projection import BoundarySpec
from fluidfields.core.test.test_field_grid import small_grid_parameters, numerical_gradient


def translating_blob(velocity):
    velocity = np.asarray(velocity, dtype=np.float64)

    def density(x, t):
        center = np.array([0.3, 0.3, 0.3]) + t[:, None] * velocity
        return np.exp(-np.sum((x - center) ** 2, axis=1) / 0.02)

    return FunctionField(density, 1, steps=(1e-4, 1e-4))


def uniform(velocity):
    return FunctionField(lambda x, t: np.tile(velocity, (x.shape[0], 1)), 3)


class TestDensityLoss(unittest.TestCase):

    def test_transport_solution_has_no_residual(self):
        batch = sample_point_batch(50, np.random.default_rng(0))
        residual = density_transport_residual(translating_blob([0.2, 0.1, 0.0]), uniform([0.2, 0.1, 0.0]), batch)
        self.assertLess(float(np.abs(residual).max()), 1e-5)

    def test_wrong_velocity_has_residual(self):
        batch = PointBatch(np.tile([0.35, 0.3, 0.3], (1, 1)), [0.0])
        loss = loss_density(translating_blob([0.2, 0.0, 0.0]), uniform([0.0, 0.0, 0.0]), batch)
        self.assertGreater(loss, 1e-3)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        density = MultiResGrid4D.create(small_grid_parameters(), 1, rng)
        velocity = MultiResGrid4D.create(small_grid_parameters(init_scale=0.1), 3, rng, grad_key="velocity")
        for level in velocity.levels:
            level.features[...] = rng.uniform(-0.5, 0.5, level.features.shape)
        batch = PointBatch(0.2 + 0.6 * rng.random((12, 3)), 0.2 + 0.6 * rng.random(12))

        def loss():
            return loss_density(density, velocity, batch)

        grads = Gradients.for_fields(density=density, velocity=velocity)
        loss_density(density, velocity, batch, grads, weight=1.0)
        for grid, key in ((density, "density"), (velocity, "velocity")):
            grad = grads.get(key)[len(grid.levels) + 2]
            for i in range(3):
                self.assertAlmostEqual(numerical_gradient(loss, grid.decoder.w2, (i, 0)), grad[i, 0],
                                       delta=1e-4 * (abs(grad[i, 0]) + 1e-4))


class TestProjectionLoss(unittest.TestCase):

    def setUp(self):
        self.para = SolverParameters(tolerance=1e-10, max_iterations=500)

    def test_divergence_free_field(self):
        rotation = FunctionField(lambda x, t: np.column_stack([-(x[:, 1] - 0.5), x[:, 0] - 0.5,
                                                              np.zeros(x.shape[0])]), 3)
        loss = loss_projection(rotation, [0.0], (8, 8, 8), self.para, BoundarySpec.all_open())
        self.assertLess(loss, 1e-12)

    def test_source_field(self):
        source = FunctionField(lambda x, t: x - 0.5, 3)
        self.assertGreater(loss_projection(source, [0.0, 1.0], (8, 8, 8), self.para, BoundarySpec.open_top()),
                           1e-3)
        with self.assertRaises(ValueError):
            loss_projection(source, [], (8, 8, 8), self.para)

    def test_flux_through_solid_walls(self):
        # uniform upward flow is a pure gradient once the floor and ceiling are closed
        loss = loss_projection(uniform([0.0, 1.0, 0.0]), [0.0], (8, 8, 8), self.para, BoundarySpec.closed())
        self.assertAlmostEqual(1.0 / 3.0, loss, delta=1e-6)
        self.assertLess(loss_projection(uniform([0.0, 1.0, 0.0]), [0.0], (8, 8, 8), self.para,
                                        BoundarySpec.all_open()), 1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        velocity = MultiResGrid4D.create(small_grid_parameters(), 3, rng)
        for level in velocity.levels:
            level.features[...] = rng.uniform(-0.5, 0.5, level.features.shape)
        bc = BoundarySpec.open_top()
        grads = Gradients.for_fields(velocity=velocity)
        loss_projection(velocity, [0.5], (4, 4, 4), self.para, bc, grads, adjoint=True)

        def loss():
            return loss_projection(velocity, [0.5], (4, 4, 4), self.para, bc)

        grad = grads.get("velocity")[len(velocity.levels) + 2]
        for i in range(3):
            for j in range(3):
                self.assertAlmostEqual(numerical_gradient(loss, velocity.decoder.w2, (i, j)), grad[i, j],
                                       delta=1e-4 * (abs(grad[i, j]) + 1e-4))
        stopped = Gradients.for_fields(velocity=velocity)
        loss_projection(velocity, [0.5], (4, 4, 4), self.para, bc, stopped)
        self.assertGreater(stopped.get("velocity").norm(), 0.0)


class TestLaminarLoss(unittest.TestCase):

    def test_hinge(self):
        batch = PointBatch(np.full((2, 3), 0.5), [0.0, 0.0])
        density = FunctionField(lambda x, t: np.full(x.shape[0], 2.0), 1)
        self.assertAlmostEqual(0.4, loss_laminar(density, uniform([0.0, 0.0, 0.0]), batch, 0.2))
        self.assertAlmostEqual(0.1, loss_laminar(density, uniform([0.3, 0.0, 0.0]), batch, 0.2))
        self.assertAlmostEqual(0.0, loss_laminar(density, uniform([0.0, 0.5, 0.0]), batch, 0.2))
        with self.assertRaises(ValueError):
            loss_laminar(density, uniform([0.0, 0.0, 0.0]), batch, -1.0)

    def test_gradient_to_velocity_only(self):
        rng = np.random.default_rng(3)
        density = MultiResGrid4D.create(small_grid_parameters(density_bias=2.0), 1, rng)
        velocity = MultiResGrid4D.create(small_grid_parameters(), 3, rng)
        for level in velocity.levels:
            level.features[...] = rng.uniform(-0.5, 0.5, level.features.shape)
        batch = PointBatch(rng.random((20, 3)), rng.random(20))
        grads = Gradients.for_fields(density=density, velocity=velocity)
        loss_laminar(density, velocity, batch, 1.0, grads)
        self.assertEqual(0.0, grads.get("density").norm())
        self.assertGreater(grads.get("velocity").norm(), 0.0)


class TestTotalLoss(unittest.TestCase):

    def test_breakdown(self):
        weights = LossWeights(render=2.0, density=0.0, projection=1.0, laminar=0.5)
        breakdown = LossBreakdown(weights, render=1.0, projection=3.0, laminar=2.0)
        self.assertAlmostEqual(6.0, breakdown.total)
        self.assertEqual(0.0, breakdown["density"])
        self.assertTrue(breakdown.is_finite())
        self.assertFalse(LossBreakdown(weights, render=float("nan")).is_finite())

    def test_components_need_inputs(self):
        paras = RunParameters()
        paras.set("train.projection_res", 4)
        paras.set("grid.finest_res", 16)
        paras.set("grid.hash_table_size", 0)
        fields = FluidFields.create(paras)
        rng = np.random.default_rng(4)
        points = sample_point_batch(16, rng)
        grads = Gradients.for_fields(density=fields.density, velocity=fields.velocity)
        breakdown = total_loss(fields, paras.loss, paras, points=points, frame_times=[0.0], grads=grads)
        self.assertEqual(0.0, breakdown["render"])
        self.assertTrue(breakdown.is_finite())
        self.assertTrue(grads.is_finite())

    def test_importance_sampling(self):
        rng = np.random.default_rng(5)
        dense_left = FunctionField(lambda x, t: np.where(x[:, 0] < 0.5, 100.0, 0.0), 1)
        batch = sample_point_batch(400, rng, PointSampling.density_importance, dense_left, floor=0.01)
        self.assertGreater(float(np.mean(batch.positions[:, 0] < 0.5)), 0.95)
        with self.assertRaises(ValueError):
            sample_point_batch(0, rng)
