#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import unittest

import numpy as np

from fluidfields.core.ff_paras import SimParameters, SolverParameters
from fluidfields.core.fields import GridDensity, ZeroField
from fluidfields.core.fluid_sim import sample_points, sample_cells, sample_velocity, advect_semi_lagrangian, \
    advect_maccormack, diffuse, add_buoyancy, cfl_number, center_of_mass, PlumeSimulator, SimEvent, source_rows, \
    field_to_cells, resimulate, predict_future, frozen_future
from fluidfields.core.pressure_projection import MacGrid, BoundarySpec, max_divergence
from fluidfields.util.observe import EventObserver


def uniform_velocity(resolution, velocity):
    vel = MacGrid.zeros(resolution)
    for axis, value in enumerate(velocity):
        vel.component(axis)[...] = value
    return vel


def blob(resolution, center, width):
    points = sample_points(resolution)
    return np.exp(-np.sum((points - center) ** 2, axis=1) / width ** 2).reshape(resolution)


class FrameCounter(EventObserver):

    def __init__(self):
        self.frames = []
        self.ended = False

    def inform_frame_end(self, source, event, frame=None, **kwargs):
        self.frames.append(frame)

    def inform_simulation_end(self, source, event, **kwargs):
        self.ended = True


class TestSampling(unittest.TestCase):

    def test_exact_at_cell_centers(self):
        values = np.random.default_rng(0).random((4, 5, 6))
        points = sample_points(values.shape)
        self.assertEqual((120, 3), points.shape)
        self.assertTrue(np.allclose(values.ravel(), sample_cells(values, points), atol=1e-12))

    def test_outside_takes_nearest(self):
        values = np.arange(8, dtype=np.float64).reshape(2, 2, 2)
        self.assertAlmostEqual(values[0, 0, 0], sample_cells(values, [[-1.0, -1.0, -1.0]])[0])
        self.assertAlmostEqual(values[1, 1, 1], sample_cells(values, [[2.0, 2.0, 2.0]])[0])

    def test_uniform_velocity(self):
        vel = uniform_velocity((6, 6, 6), (0.1, -0.2, 0.3))
        u = sample_velocity(vel, np.random.default_rng(1).random((10, 3)))
        self.assertTrue(np.allclose(np.tile([0.1, -0.2, 0.3], (10, 1)), u))


class TestAdvection(unittest.TestCase):

    def test_zero_velocity_is_identity(self):
        values = np.random.default_rng(2).random((8, 8, 8))
        vel = MacGrid.zeros(values.shape)
        self.assertTrue(np.allclose(values, advect_semi_lagrangian(values, vel, 0.1), atol=1e-12))
        self.assertTrue(np.allclose(values, advect_maccormack(values, vel, 0.1), atol=1e-12))

    def test_maccormack_adds_no_extrema(self):
        rng = np.random.default_rng(3)
        values = rng.random((10, 10, 10))
        vel = MacGrid.zeros(values.shape).map(lambda c: rng.uniform(-0.5, 0.5, c.shape))
        advected = advect_maccormack(values, vel, 0.2)
        self.assertGreaterEqual(advected.min(), values.min() - 1e-12)
        self.assertLessEqual(advected.max(), values.max() + 1e-12)

    def test_blob_moves_with_flow(self):
        resolution = (32, 32, 32)
        density = blob(resolution, np.array([0.35, 0.5, 0.5]), 0.08)
        vel = uniform_velocity(resolution, (1.0, 0.0, 0.0))
        before = center_of_mass(density)
        for _ in range(2):
            density = advect_maccormack(density, vel, 0.05)
        after = center_of_mass(density)
        self.assertAlmostEqual(0.1, after[0] - before[0], delta=0.01)
        self.assertAlmostEqual(before[1], after[1], delta=1e-6)

    def test_maccormack_beats_semi_lagrangian(self):
        resolution = (32, 32, 32)
        vel = uniform_velocity(resolution, (1.0, 0.0, 0.0))
        dt = 0.4 / 32
        start = blob(resolution, np.array([0.3, 0.5, 0.5]), 0.08)
        exact = blob(resolution, np.array([0.3 + 20 * dt, 0.5, 0.5]), 0.08)
        sl, mc = start, start
        for _ in range(20):
            sl = advect_semi_lagrangian(sl, vel, dt)
            mc = advect_maccormack(mc, vel, dt)
        sl_error = np.sqrt(np.mean((sl - exact) ** 2))
        mc_error = np.sqrt(np.mean((mc - exact) ** 2))
        self.assertLess(mc_error, sl_error)

    def test_mac_grid_advection(self):
        vel = uniform_velocity((6, 6, 6), (0.2, 0.0, 0.0))
        advected = advect_semi_lagrangian(vel, vel, 0.1)
        self.assertIsInstance(advected, MacGrid)
        self.assertTrue(np.allclose(vel.u, advected.u))


class TestForces(unittest.TestCase):

    def test_diffusion_conserves_mass(self):
        values = np.random.default_rng(4).random((8, 8, 8))
        diffused = diffuse(values, 0.01, 0.1)
        self.assertAlmostEqual(values.sum(), diffused.sum(), delta=1e-9 * values.sum())
        self.assertLess(diffused.std(), values.std())
        self.assertTrue(np.array_equal(values, diffuse(values, 0.0, 0.1)))

    def test_buoyancy(self):
        vel = add_buoyancy(MacGrid.zeros((4, 4, 4)), np.ones((4, 4, 4)), 2.0, 0.5)
        self.assertTrue(np.allclose(1.0, vel.v))
        self.assertEqual(0.0, np.abs(vel.u).max())

    def test_cfl_and_center_of_mass(self):
        self.assertAlmostEqual(1.0, cfl_number(uniform_velocity((10, 10, 10), (1.0, 0.0, 0.0)), 0.1))
        density = np.zeros((4, 4, 4))
        density[0, 0, 0] = 1.0
        self.assertTrue(np.allclose([0.125, 0.125, 0.125], center_of_mass(density)))
        with self.assertRaises(ValueError):
            center_of_mass(np.zeros((4, 4, 4)))


class TestPlumeSimulator(unittest.TestCase):

    def setUp(self):
        self.para = SimParameters(resolution=12, num_frames=4, inflow_radius=0.15)
        self.solver_para = SolverParameters(tolerance=1e-10, max_iterations=500)

    def test_plume(self):
        counter = FrameCounter()
        simulator = PlumeSimulator(self.para, self.solver_para)
        simulator.register(counter)
        sequence = simulator.run()
        self.assertEqual(4, len(sequence))
        self.assertEqual((12, 12, 12), sequence.resolution)
        self.assertEqual([0, 1, 2, 3], counter.frames)
        self.assertTrue(counter.ended)
        for density, vel in zip(sequence.densities, sequence.velocities):
            self.assertGreaterEqual(density.min(), 0.0)
            self.assertLess(max_divergence(vel), 1e-4)
        self.assertGreater(center_of_mass(sequence.densities[-1])[1], center_of_mass(sequence.densities[0])[1])

    def test_deterministic(self):
        a = PlumeSimulator(self.para, self.solver_para).run()
        b = PlumeSimulator(self.para, self.solver_para).run()
        for da, db in zip(a.densities, b.densities):
            self.assertTrue(np.array_equal(da, db))
        self.assertEqual(SimEvent.frame_end, SimEvent(1))


class TestResimulation(unittest.TestCase):

    def test_source_rows(self):
        self.assertEqual(1, source_rows((10, 10, 10), 0.1))
        self.assertEqual(0, source_rows((10, 10, 10), 0.0))
        self.assertEqual(2, source_rows((10, 10, 10), 0.15))
        self.assertEqual(10, source_rows((10, 10, 10), 1.0))

    def test_field_to_cells(self):
        values = np.random.default_rng(5).random((6, 6, 6))
        self.assertTrue(np.allclose(values, field_to_cells(GridDensity(values), 0.3, (6, 6, 6)), atol=1e-12))

    def test_zero_velocity_keeps_density(self):
        values = np.random.default_rng(6).random((6, 6, 6))
        counter = FrameCounter()
        sequence = resimulate(GridDensity([values, values]), ZeroField(3), SimParameters(), 3, (6, 6, 6),
                              observers=[counter])
        self.assertEqual(3, len(sequence))
        self.assertAlmostEqual(0.5, sequence.dt)
        for density in sequence.densities:
            self.assertTrue(np.allclose(values, density, atol=1e-12))
        self.assertEqual([0, 1, 2], counter.frames)
        with self.assertRaises(ValueError):
            resimulate(GridDensity(values), None, SimParameters(), 1, (6, 6, 6))

    def test_source_region_refreshed(self):
        resolution = (6, 6, 6)
        first, second = np.zeros(resolution), np.ones(resolution)
        sequence = resimulate(GridDensity([first, second]), None, SimParameters(source_fraction=0.5), 2, resolution)
        self.assertTrue(np.allclose(1.0, sequence.densities[1][:, :3, :]))
        self.assertTrue(np.allclose(0.0, sequence.densities[1][:, 3:, :]))


class TestPrediction(unittest.TestCase):

    def test_zero_velocity(self):
        density = np.random.default_rng(7).random((6, 6, 6))
        sequence = predict_future(MacGrid.zeros((6, 6, 6)), density, 3, SimParameters(),
                                  SolverParameters(tolerance=1e-10), dt=0.1)
        self.assertEqual(4, len(sequence))
        for frame in sequence.densities:
            self.assertTrue(np.allclose(density, frame, atol=1e-12))
        self.assertAlmostEqual(0.1, sequence.dt)

    def test_walls_cancel_uniform_updraft(self):
        resolution = (8, 8, 8)
        density = blob(resolution, np.array([0.5, 0.4, 0.5]), 0.15)
        sequence = predict_future(uniform_velocity(resolution, (0.0, 1.0, 0.0)), density, 4, SimParameters(),
                                  SolverParameters(tolerance=1e-10, max_iterations=500), BoundarySpec.closed(),
                                  dt=0.05, buoyancy=0.0)
        self.assertEqual(0.0, float(np.abs(sequence.velocities[1].v[:, 0, :]).max()))
        self.assertEqual(0.0, float(np.abs(sequence.velocities[1].v[:, -1, :]).max()))
        self.assertLess(sequence.velocities[1].max_abs(), 1e-6)
        energies = [vel.kinetic_energy() for vel in sequence.velocities]
        for before, after in zip(energies, energies[1:]):
            self.assertLessEqual(after, before + 1e-12)

    def test_buoyancy_moves_smoke(self):
        resolution = (8, 8, 8)
        density = blob(resolution, np.array([0.5, 0.3, 0.5]), 0.15)
        sequence = predict_future(MacGrid.zeros(resolution), density, 3, SimParameters(),
                                  SolverParameters(tolerance=1e-10), dt=0.1, buoyancy=5.0)
        self.assertGreater(sequence.velocities[-1].v.max(), 0.0)
        self.assertLess(max_divergence(sequence.velocities[-1]), 1e-4)

    def test_frozen(self):
        density = np.ones((4, 4, 4))
        sequence = frozen_future(density, 2, 0.5)
        self.assertEqual(3, len(sequence))
        self.assertTrue(all(np.array_equal(density, d) for d in sequence.densities))
        self.assertIsNot(sequence.densities[0], sequence.densities[1])
