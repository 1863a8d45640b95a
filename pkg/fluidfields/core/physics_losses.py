#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Physics losses on continuous fields and the weighted total loss`

 - density transport: mean of ``(d sigma/dt + u . grad sigma) ** 2`` over space-time points
 - projection: mean squared difference between the velocity sampled to a MAC grid and its projection
 - laminar: mean of ``max(0, gamma * sigma - |u|)``, penalizing dense smoke that does not move

Every loss function returns its unweighted value and, when given a
:class:`~fluidfields.core.field_grid.Gradients`, accumulates ``weight`` times its gradient.

"""
import logging

import numpy as np

from fluidfields.core.ff_enum import PointSampling
from fluidfields.core.ff_paras import LossWeights, RunParameters, SolverParameters
from fluidfields.core.field_grid import Gradients, stencil_forward, stencil_backward
from fluidfields.core.fields import stencil_partials
from fluidfields.core.field_grid import sample_to_mac_forward, sample_to_mac_backward
from fluidfields.core.pressure_projection import BoundarySpec, project, project_residual_transpose
from fluidfields.core.volume_renderer import rendering_loss

LOG = logging.getLogger(__name__)

IMPORTANCE_POOL_FACTOR = 4
LOSS_NAMES = ("render", "density", "projection", "laminar")


class PointBatch(object):
    """
    :samp:`Space-time points: positions (B, 3) in the unit box and times (B,) in [0, 1]`
    """
    def __init__(self, positions, times):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        if self.times.shape[0] != self.positions.shape[0]:
            raise ValueError("Got %d positions and %d times" % (self.positions.shape[0], self.times.shape[0]))

    def __len__(self):
        return self.positions.shape[0]


def sample_point_batch(batch_size, rng, sampling=PointSampling.uniform, density_field=None, floor=0.01):
    """
    :samp:`Draw space-time points`

    In ``density_importance`` mode a pool of ``4 * batch_size`` uniform points is drawn and the batch is drawn from
    the pool with probability proportional to ``sigma + floor``.

    :return: :class:`PointBatch`
    """
    if batch_size < 1:
        raise ValueError("Invalid value for batch_size: should be positive, got %s" % batch_size)
    sampling = PointSampling.value_for(sampling)
    if sampling == PointSampling.uniform or density_field is None:
        return PointBatch(rng.random((batch_size, 3)), rng.random(batch_size))
    pool = IMPORTANCE_POOL_FACTOR * batch_size
    positions, times = rng.random((pool, 3)), rng.random(pool)
    sigma = np.maximum(density_field.forward(positions, times)[0][:, 0], 0.0) + floor
    chosen = rng.choice(pool, size=batch_size, replace=True, p=sigma / sigma.sum())
    return PointBatch(positions[chosen], times[chosen])


def density_transport_residual(density_field, velocity_field, batch: PointBatch, h=None, ht=None):
    """
    :samp:`Per-point residual of the transport equation`

    :return: array (B,)
    """
    partials = stencil_partials(density_field, batch.positions, batch.times, h, ht)
    u = velocity_field.forward(batch.positions, batch.times)[0]
    return partials[:, 0, 3] + np.sum(u * partials[:, 0, :3], axis=1)


def loss_density(density_field, velocity_field, batch: PointBatch, grads: Gradients=None, weight=1.0, h=None,
                 ht=None):
    """
    :samp:`Mean squared transport residual`

    Gradients flow to the density through the stencil queries and to the velocity through its point queries.

    :return: loss value
    """
    n = len(batch)
    partials, stencil_cache = stencil_forward(density_field, batch.positions, batch.times, h, ht)
    u, u_cache = velocity_field.forward(batch.positions, batch.times)
    grad_sigma = partials[:, 0, :3]
    residual = partials[:, 0, 3] + np.sum(u * grad_sigma, axis=1)
    loss = float(np.mean(residual ** 2))
    if grads is not None and weight != 0.0:
        g = 2.0 * weight * residual / n
        d_partials = np.zeros_like(partials)
        d_partials[:, 0, :3] = u * g[:, None]
        d_partials[:, 0, 3] = g
        stencil_backward(density_field, stencil_cache, d_partials, grads)
        velocity_field.backward(u_cache, grad_sigma * g[:, None], grads)
    return loss


def loss_projection(velocity_field, frame_times, resolution, solver_para: SolverParameters=None,
                    bc: BoundarySpec=None, grads: Gradients=None, weight=1.0, adjoint=False):
    """
    :samp:`Mean squared projection residual over faces and frame times`

    The projected velocity is a constant target by default; with ``adjoint`` the gradient is the exact gradient
    through the projection.

    :param velocity_field: velocity with the field protocol
    :param frame_times: normalized times to sample
    :param resolution: MAC grid resolution
    :param solver_para: pressure solver parameters
    :param bc: boundary conditions, from solver_para if None
    :return: loss value
    :raises: :exc:`~fluidfields.core.pressure_projection.SolverConvergenceError` if a projection fails
    """
    solver_para = solver_para if solver_para else SolverParameters()
    bc = bc if bc else BoundarySpec.from_parameters(solver_para)
    frame_times = list(np.atleast_1d(frame_times))
    if not frame_times:
        raise ValueError("Projection loss without frame times")
    total = 0.0
    for t in frame_times:
        mac, caches = sample_to_mac_forward(velocity_field, t, resolution)
        residual = mac - project(mac, solver_para, bc)
        count = mac.face_count() * len(frame_times)
        total += residual.dot(residual) / count
        if grads is not None and weight != 0.0:
            d_mac = residual.scaled(2.0 * weight / count)
            if adjoint:
                d_mac = project_residual_transpose(d_mac, solver_para, bc)
            sample_to_mac_backward(velocity_field, caches, d_mac, grads)
    return float(total)


def loss_laminar(density_field, velocity_field, batch: PointBatch, gamma, grads: Gradients=None, weight=1.0):
    """
    :samp:`Mean hinge max(0, gamma * sigma - |u|)`

    The density is a constant here; gradients flow to the velocity only, and not at points where it is zero.

    :return: loss value
    """
    if gamma < 0:
        raise ValueError("Invalid value for gamma: should not be negative, got %s" % gamma)
    n = len(batch)
    sigma = density_field.forward(batch.positions, batch.times)[0][:, 0]
    u, u_cache = velocity_field.forward(batch.positions, batch.times)
    speed = np.linalg.norm(u, axis=1)
    hinge = gamma * sigma - speed
    loss = float(np.mean(np.maximum(hinge, 0.0)))
    if grads is not None and weight != 0.0:
        active = (hinge > 0.0) & (speed > 0.0)
        d_u = np.zeros_like(u)
        d_u[active] = -weight / n * u[active] / speed[active, None]
        velocity_field.backward(u_cache, d_u, grads)
    return loss


class LossBreakdown(object):
    """
    :samp:`Unweighted component losses and their weighted total`
    """
    def __init__(self, weights: LossWeights, **values):
        self.weights = weights
        self.values = {name: float(values.get(name, 0.0)) for name in LOSS_NAMES}

    def __getitem__(self, name):
        return self.values[name]

    @property
    def total(self):
        return float(sum(getattr(self.weights, name) * self.values[name] for name in LOSS_NAMES))

    def is_finite(self):
        return bool(np.isfinite(self.total)) and all(np.isfinite(v) for v in self.values.values())

    def __repr__(self):
        return "LossBreakdown(total=%g, %s)" % (self.total,
                                                ", ".join("%s=%g" % (k, v) for k, v in self.values.items()))


def total_loss(fields, weights: LossWeights, paras: RunParameters, rays=None, observed=None, points=None,
               frame_times=None, grads: Gradients=None, rng=None, bc: BoundarySpec=None) -> LossBreakdown:
    """
    :samp:`Weighted sum of the rendering and physics losses`

    A component is computed only if its weight is positive and its inputs are given: rays and observed colors for
    rendering, points for density and laminar, frame times for projection. Gradients of the weighted total are
    accumulated into grads.

    :param fields: :class:`~fluidfields.core.fields.FluidFields`
    :param weights: loss weights
    :param paras: run parameters (render, solver and training settings)
    :return: :class:`LossBreakdown`
    """
    values = {}
    density = fields.density
    velocity = fields.velocity_field()
    if weights.render > 0.0 and rays is not None:
        values["render"] = rendering_loss(rays, observed, density, fields.radiance, paras.render, grads, rng,
                                          weights.render).loss
    if weights.density > 0.0 and points is not None:
        values["density"] = loss_density(density, velocity, points, grads, weights.density)
    if weights.projection > 0.0 and frame_times is not None:
        values["projection"] = loss_projection(velocity, frame_times, paras.train.projection_res, paras.solver, bc,
                                               grads, weights.projection, paras.train.projection_adjoint)
    if weights.laminar > 0.0 and points is not None:
        values["laminar"] = loss_laminar(density, velocity, points, weights.gamma, grads, weights.laminar)
    return LossBreakdown(weights, **values)
