#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Grid fluid simulation: advection, the plume generator, re-simulation and future prediction`

Scalars live at cell centers and velocities on the faces of a :class:`~fluidfields.core.pressure_projection.MacGrid`
over the unit box. Sampling is trilinear with the staggering of the sampled quantity; positions outside the box
take the value at the nearest boundary sample.

Time is normalized: a sequence of ``F`` frames spans [0, 1], one frame interval is ``1 / (F - 1)`` and velocities
are in domain units per unit of normalized time.

:class:`PlumeSimulator` generates the ground truth of the synthetic scenes. Each step::

    inject inflow -> advect density and velocity (MacCormack) -> buoyancy -> diffusion -> solid walls -> project

"""
import logging
import math
from enum import Enum

import numpy as np
from scipy.ndimage import map_coordinates

from fluidfields.core.ff_paras import SimParameters, SolverParameters
from fluidfields.core.field_grid import sample_to_mac
from fluidfields.core.pressure_projection import MacGrid, BoundarySpec, project, max_divergence
from fluidfields.util.observe import Observable

LOG = logging.getLogger(__name__)

CELL = None
STAGGER = {CELL: (0.5, 0.5, 0.5), 0: (0.0, 0.5, 0.5), 1: (0.5, 0.0, 0.5), 2: (0.5, 0.5, 0.0)}
CFL_ADVISORY = 5.0


class SimEvent(Enum):
    """
    :samp:`Events fired by simulations`

    All events are broadcast in the format::

        inform(source, event, **kwargs)

    """
    frame_end = 1
    """
    ``1`` ``inform`` :samp:`A frame was completed` kwargs: ``frame``, ``density``, ``velocity``, ``cfl``
    """
    cfl_advisory = 2
    """
    ``2`` ``inform`` :samp:`A step moved farther than the advisory number of cells` kwargs: ``frame``, ``cfl``
    """
    simulation_start = 30
    """
    ``30`` ``inform`` :samp:`Simulation started` kwargs: ``num_frames``, ``resolution``
    """
    simulation_end = 31
    """
    ``31`` ``inform`` :samp:`Simulation did end` kwargs: ``num_frames``
    """


def sample_points(shape, axis=CELL):
    """
    :samp:`Positions of the samples of a cell grid (axis None) or a face grid`

    :param shape: shape of the sample array
    :return: positions (prod(shape), 3) in C order
    """
    h = 1.0 / (shape[0] - 1 if axis == 0 else shape[0])
    axes = [(np.arange(n) + offset) * h for n, offset in zip(shape, STAGGER[axis])]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grid])


def _index_coordinates(points, shape, axis):
    h = 1.0 / (shape[0] - 1 if axis == 0 else shape[0])
    return (points / h - np.array(STAGGER[axis])).T


def sample_grid(values, points, axis=CELL):
    """
    :samp:`Trilinear interpolation of a staggered sample array`

    :param values: array of samples
    :param points: positions (N, 3)
    :param axis: None for cell centers, 0, 1 or 2 for the faces normal to that axis
    :return: values (N,)
    """
    values = np.asarray(values, dtype=np.float64)
    coords = _index_coordinates(np.asarray(points, dtype=np.float64).reshape(-1, 3), values.shape, axis)
    return map_coordinates(values, coords, order=1, mode="nearest")


def sample_cells(grid, points):
    return sample_grid(grid, points, CELL)


def sample_velocity(vel: MacGrid, points):
    """
    :samp:`Velocity vectors at arbitrary positions`

    :return: array (N, 3)
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.column_stack([sample_grid(c, points, axis) for axis, c in enumerate(vel.components())])


def _stencil_bounds(values, coords):
    """Minimum and maximum of the 8 samples around fractional index coordinates."""
    lo_idx, hi_idx = [], []
    for axis, n in enumerate(values.shape):
        c = np.clip(coords[axis], 0.0, n - 1)
        i0 = np.clip(np.floor(c).astype(np.int64), 0, max(0, n - 2))
        lo_idx.append(i0)
        hi_idx.append(np.minimum(i0 + 1, n - 1))
    lo = np.full(coords.shape[1], np.inf)
    hi = np.full(coords.shape[1], -np.inf)
    for bits in np.ndindex(2, 2, 2):
        corner = values[tuple(hi_idx[a] if b else lo_idx[a] for a, b in enumerate(bits))]
        lo = np.minimum(lo, corner)
        hi = np.maximum(hi, corner)
    return lo, hi


def _departures(points, vel: MacGrid, dt):
    mid = np.clip(points - 0.5 * dt * sample_velocity(vel, points), 0.0, 1.0)
    return np.clip(points - dt * sample_velocity(vel, mid), 0.0, 1.0)


def _semi_lagrangian(values, vel, dt, axis):
    points = sample_points(values.shape, axis)
    departures = _departures(points, vel, dt)
    coords = _index_coordinates(departures, values.shape, axis)
    return map_coordinates(values, coords, order=1, mode="nearest").reshape(values.shape), coords


def _maccormack(values, vel, dt, axis):
    forward, coords = _semi_lagrangian(values, vel, dt, axis)
    backward, _ = _semi_lagrangian(forward, vel, -dt, axis)
    corrected = forward + 0.5 * (values - backward)
    lo, hi = _stencil_bounds(values, coords)
    return np.clip(corrected.ravel(), lo, hi).reshape(values.shape)


def advect_semi_lagrangian(field, vel: MacGrid, dt, axis=CELL):
    """
    :samp:`Semi-Lagrangian advection with an RK2 backtrace`

    ``phi'(x) = phi(x - dt * u(x - dt/2 * u(x)))``, departure points clamped to the domain.

    :param field: cell-centered array, or a :class:`~fluidfields.core.pressure_projection.MacGrid` whose
        components are each advected by the full velocity
    :param vel: advecting velocity
    :param float dt: time step
    :param axis: staggering of an array field: None for cells, 0, 1 or 2 for faces
    :return: advected field of the same kind
    """
    if isinstance(field, MacGrid):
        return MacGrid(*[_semi_lagrangian(c, vel, dt, a)[0] for a, c in enumerate(field.components())])
    return _semi_lagrangian(np.asarray(field, dtype=np.float64), vel, dt, axis)[0]


def advect_maccormack(field, vel: MacGrid, dt, axis=CELL):
    """
    :samp:`MacCormack advection clamped to the forward stencil`

    A forward and a backward semi-Lagrangian step estimate the error of the forward step; the corrected value
    ``forward + (phi - backward) / 2`` is clamped to the extrema of the 8 samples the forward step interpolated
    from, so no new extrema appear.

    :param field: cell-centered array or :class:`~fluidfields.core.pressure_projection.MacGrid`
    :return: advected field of the same kind
    """
    if isinstance(field, MacGrid):
        return MacGrid(*[_maccormack(c, vel, dt, a) for a, c in enumerate(field.components())])
    return _maccormack(np.asarray(field, dtype=np.float64), vel, dt, axis)


def diffuse(values, coefficient, dt, iterations=20, h=None):
    """
    :samp:`Implicit diffusion solved with Jacobi sweeps`

    Solves ``(1 - coefficient * dt * Laplacian) x = values`` with zero-flux boundaries.

    :param values: array, or :class:`~fluidfields.core.pressure_projection.MacGrid`
    """
    if isinstance(values, MacGrid):
        return values.map(lambda c: diffuse(c, coefficient, dt, iterations, values.h))
    values = np.asarray(values, dtype=np.float64)
    if coefficient <= 0.0:
        return values.copy()
    h = h if h else 1.0 / values.shape[0]
    a = coefficient * dt / h ** 2
    x = values.copy()
    for _ in range(iterations):
        p = np.pad(x, 1, mode="edge")
        neighbours = (p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1] + p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1]
                      + p[1:-1, 1:-1, 2:] + p[1:-1, 1:-1, :-2])
        x = (values + a * neighbours) / (1.0 + 6.0 * a)
    return x


def add_buoyancy(vel: MacGrid, density, coefficient, dt) -> MacGrid:
    """
    :samp:`Upward force proportional to density: v += coefficient * density * dt`
    """
    padded = np.pad(density, ((0, 0), (1, 1), (0, 0)), mode="edge")
    at_faces = 0.5 * (padded[:, 1:, :] + padded[:, :-1, :])
    return MacGrid(vel.u, vel.v + coefficient * dt * at_faces, vel.w)


def cfl_number(vel: MacGrid, dt):
    return vel.max_abs() * dt / vel.h


def center_of_mass(density):
    density = np.asarray(density, dtype=np.float64)
    total = density.sum()
    if total <= 0.0:
        raise ValueError("Center of mass of an empty density")
    points = sample_points(density.shape)
    return points.T @ density.ravel() / total


class PlumeSimulator(Observable):
    """
    :samp:`Buoyant smoke plume rising from a spherical inflow`

    The inflow sphere is centered at ``(inflow_x, inflow_y, inflow_z)`` with radius ``inflow_radius``. On every
    step cells in the sphere get at least ``inflow_density * (1 - inflow_jitter * U)`` density and vertical faces in
    the sphere get ``inflow_velocity * (1 - inflow_jitter * U)`` with ``U`` uniform in [0, 1), drawn from a
    generator seeded by ``sim.seed``. Equal parameters give bitwise-equal sequences.

    :param para: simulation parameters
    :param solver_para: pressure solver parameters
    :param bc: boundary conditions, from solver_para if None
    """
    def __init__(self, para: SimParameters=None, solver_para: SolverParameters=None, bc: BoundarySpec=None):
        Observable.__init__(self)
        self.para = para if para else SimParameters()
        self.solver_para = solver_para if solver_para else SolverParameters()
        self.bc = bc if bc else BoundarySpec.from_parameters(self.solver_para)
        n = self.para.resolution
        self.resolution = (n, n, n)
        center = np.array([self.para.inflow_x, self.para.inflow_y, self.para.inflow_z])
        radius = self.para.inflow_radius
        inside = np.linalg.norm(sample_points(self.resolution) - center, axis=1) <= radius
        self.cell_mask = inside.reshape(self.resolution)
        v_shape = MacGrid.face_shape(self.resolution, 1)
        self.face_mask = (np.linalg.norm(sample_points(v_shape, 1) - center, axis=1) <= radius).reshape(v_shape)
        if not self.cell_mask.any():
            LOG.warning("Inflow sphere of radius %g contains no cell centers at resolution %d", radius, n)

    def inject(self, density, vel: MacGrid, rng):
        p = self.para
        jitter = 1.0 - p.inflow_jitter * rng.random(self.resolution)
        density = np.maximum(density, p.inflow_density * self.cell_mask * jitter)
        v = vel.v.copy()
        v_jitter = 1.0 - p.inflow_jitter * rng.random(v.shape)
        v[self.face_mask] = p.inflow_velocity * v_jitter[self.face_mask]
        return density, MacGrid(vel.u, v, vel.w)

    def step(self, density, vel: MacGrid, dt, rng):
        p = self.para
        density, vel = self.inject(density, vel, rng)
        density, vel = advect_maccormack(density, vel, dt), advect_maccormack(vel, vel, dt)
        if p.buoyancy > 0.0:
            vel = add_buoyancy(vel, density, p.buoyancy, dt)
        if p.viscosity > 0.0:
            density = diffuse(density, p.viscosity, dt, p.diffusion_iterations)
            vel = diffuse(vel, p.viscosity, dt, p.diffusion_iterations)
        vel = project(vel, self.solver_para, self.bc)
        return np.maximum(density, 0.0), vel

    def run(self):
        """
        :samp:`Simulate the configured number of frames`

        Frame 0 is the state after the first injection and projection.

        :return: :class:`Sequence`
        :raises: :exc:`~fluidfields.core.pressure_projection.SolverConvergenceError` if a projection fails
        """
        p = self.para
        rng = np.random.default_rng(p.seed)
        self.observers_inform(self, SimEvent.simulation_start, num_frames=p.num_frames, resolution=self.resolution)
        density, vel = self.inject(np.zeros(self.resolution), MacGrid.zeros(self.resolution), rng)
        vel = project(vel, self.solver_para, self.bc)
        densities, velocities = [density], [vel]
        self.observers_inform(self, SimEvent.frame_end, frame=0, density=density, velocity=vel, cfl=0.0)
        dt = p.frame_dt / p.substeps
        for frame in range(1, p.num_frames):
            cfl = 0.0
            for _ in range(p.substeps):
                cfl = max(cfl, cfl_number(vel, dt))
                density, vel = self.step(density, vel, dt, rng)
            if cfl > CFL_ADVISORY:
                LOG.warning("Frame %d: CFL number %.2f, consider more sim.substeps", frame, cfl)
                self.observers_inform(self, SimEvent.cfl_advisory, frame=frame, cfl=cfl)
            densities.append(density)
            velocities.append(vel)
            LOG.debug("Frame %d: max divergence %.3g, CFL %.2f", frame, max_divergence(vel), cfl)
            self.observers_inform(self, SimEvent.frame_end, frame=frame, density=density, velocity=vel, cfl=cfl)
        self.observers_inform(self, SimEvent.simulation_end, num_frames=p.num_frames)
        return Sequence(densities, velocities, p.frame_dt)


class Sequence(object):
    """
    :samp:`Per-frame densities and, optionally, velocities`
    """
    def __init__(self, densities, velocities=None, dt=None):
        self.densities = list(densities)
        self.velocities = list(velocities) if velocities is not None else None
        self.dt = dt if dt is not None else 1.0 / max(1, len(self.densities) - 1)

    def __len__(self):
        return len(self.densities)

    @property
    def resolution(self):
        return self.densities[0].shape


def simulate_plume(para: SimParameters=None, solver_para: SolverParameters=None, bc: BoundarySpec=None,
                   observers=()) -> Sequence:
    """
    :samp:`Ground-truth plume: densities and projected velocities per frame`
    """
    simulator = PlumeSimulator(para, solver_para, bc)
    simulator.register(*observers)
    return simulator.run()


def source_rows(resolution, source_fraction):
    """
    :samp:`Number of bottom cell rows in the source region`
    """
    ny = resolution[1]
    return min(ny, int(math.ceil(source_fraction * ny - 1e-9))) if source_fraction > 0 else 0


def field_to_cells(field, frame_time, resolution):
    """
    :samp:`Sample a scalar field at the cell centers of a grid`
    """
    points = sample_points(resolution)
    return field.forward(points, np.full(points.shape[0], float(frame_time)))[0][:, 0].reshape(resolution)


def resimulate(density_field, velocity_field, para: SimParameters=None, num_frames=None, resolution=None,
               observers=()) -> Sequence:
    """
    :samp:`Advect the first density frame with a velocity field, refreshing the bottom source region`

    Frame 0 is the density field at t = 0. Step f advects with the velocity sampled at the start of each substep
    and then overwrites the lowest ``sim.source_fraction`` of the rows with the density field at the time of frame
    f.

    :param density_field: scalar field with the field protocol
    :param velocity_field: velocity field with the field protocol; None advects with zero velocity
    :param para: simulation parameters
    :param int num_frames: frames to produce, ``para.num_frames`` if None
    :param resolution: grid resolution, ``para.resolution`` cubed if None
    :return: :class:`Sequence` of densities
    """
    para = para if para else SimParameters()
    num_frames = num_frames or para.num_frames
    if num_frames < 2:
        raise ValueError("Invalid value for num_frames: should be at least 2, got %s" % num_frames)
    resolution = resolution or (para.resolution,) * 3
    frame_dt = 1.0 / (num_frames - 1)
    dt = frame_dt / para.substeps
    rows = source_rows(resolution, para.source_fraction)
    source = Observable()
    source.register(*observers)
    density = np.maximum(field_to_cells(density_field, 0.0, resolution), 0.0)
    densities = [density]
    source.observers_inform(source, SimEvent.frame_end, frame=0, density=density, velocity=None, cfl=0.0)
    for frame in range(1, num_frames):
        for sub in range(para.substeps):
            if velocity_field is None:
                break
            t = (frame - 1) * frame_dt + sub * dt
            vel = sample_to_mac(velocity_field, t, resolution)
            density = advect_maccormack(density, vel, dt)
        if rows:
            fresh = field_to_cells(density_field, frame * frame_dt, resolution)
            density = density.copy()
            density[:, :rows, :] = fresh[:, :rows, :]
        density = np.maximum(density, 0.0)
        densities.append(density)
        source.observers_inform(source, SimEvent.frame_end, frame=frame, density=density, velocity=None, cfl=0.0)
    return Sequence(densities, None, frame_dt)


def predict_future(vel0: MacGrid, density0, num_steps, para: SimParameters=None, solver_para: SolverParameters=None,
                   bc: BoundarySpec=None, dt=None, buoyancy=None) -> Sequence:
    """
    :samp:`Evolve velocity and density beyond the observed frames`

    Every step self-advects the velocity (MacCormack), optionally adds buoyancy, zeroes the normal velocity on solid
    walls, projects, and advects the density with the new velocity. There is no forcing unless
    ``sim.predict_buoyancy`` is set or buoyancy is given.

    :param vel0: velocity at the last observed frame
    :param density0: density at the last observed frame
    :param int num_steps: steps to take
    :param para: simulation parameters
    :param solver_para: pressure solver parameters
    :param bc: boundary conditions, from solver_para if None
    :param float dt: step size, ``para.frame_dt`` if None
    :param float buoyancy: buoyancy coefficient overriding the parameters
    :return: :class:`Sequence` with ``num_steps + 1`` frames, the first being the input
    """
    para = para if para else SimParameters()
    solver_para = solver_para if solver_para else SolverParameters()
    bc = bc if bc else BoundarySpec.from_parameters(solver_para)
    dt = dt if dt else para.frame_dt
    if buoyancy is None:
        buoyancy = para.buoyancy if para.predict_buoyancy else 0.0
    density = np.asarray(density0, dtype=np.float64)
    vel = vel0
    densities, velocities = [density], [vel]
    for step in range(num_steps):
        vel = advect_maccormack(vel, vel, dt)
        if buoyancy > 0.0:
            vel = add_buoyancy(vel, density, buoyancy, dt)
        vel = project(vel, solver_para, bc)
        density = np.maximum(advect_maccormack(density, vel, dt), 0.0)
        densities.append(density)
        velocities.append(vel)
        LOG.debug("Prediction step %d: max divergence %.3g", step + 1, max_divergence(vel))
    return Sequence(densities, velocities, dt)


def frozen_future(density0, num_steps, dt=None) -> Sequence:
    """
    :samp:`Baseline prediction that repeats the last observed density`
    """
    density = np.asarray(density0, dtype=np.float64)
    return Sequence([density.copy() for _ in range(num_steps + 1)], None, dt)
