#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Queryable fields and the container of reconstructed fields`

Besides :class:`~fluidfields.core.field_grid.MultiResGrid4D` several objects answer point queries with the field
protocol of :doc:`fluidfields.core.field_grid <fluidfields.core.field_grid>`:

 - :class:`FunctionField` wraps an analytic function, for manufactured solutions and oracles.
 - :class:`GridDensity` serves cell-centered simulation grids, interpolated linearly in time.
 - :class:`SequenceVelocity` serves MAC velocities of a simulation, interpolated linearly in time.
 - :class:`HybridVelocity` adds vortex particle velocity to a base velocity.
 - :class:`ZeroField` is zero everywhere.

:class:`FluidFields` holds what a reconstruction learns: density, base velocity, radiance and vortex particles.

"""
import logging

import numpy as np

from fluidfields.core.ff_paras import RunParameters
from fluidfields.core.field_grid import MultiResGrid4D, Gradients, as_points, stencil_forward
from fluidfields.core.fluid_sim import sample_cells, sample_velocity
from fluidfields.core.volume_renderer import Radiance

LOG = logging.getLogger(__name__)


def stencil_partials(field, x, t, h=None, ht=None):
    """
    :samp:`Central difference partials (d/dx, d/dy, d/dz, d/dt) of any field`

    :return: array (N, output_dim, 4)
    """
    return stencil_forward(field, x, t, h, ht)[0]


def _inside(x):
    return np.all((x >= 0.0) & (x <= 1.0), axis=1)


def _frame_blend(t, num_frames):
    s = np.clip(t, 0.0, 1.0) * (num_frames - 1)
    f0 = np.clip(np.floor(s).astype(np.int64), 0, max(0, num_frames - 2))
    return f0, s - f0


class FunctionField(object):
    """
    :samp:`Field given by a function of positions (N, 3) and times (N,)`
    """
    def __init__(self, fn, output_dim, steps=(1e-3, 1e-3)):
        self.fn = fn
        self.output_dim = output_dim
        self.steps = steps

    def default_steps(self):
        return self.steps

    def query(self, x, t):
        x, t = as_points(x, t)
        return np.asarray(self.fn(x, t), dtype=np.float64).reshape(x.shape[0], self.output_dim)

    def forward(self, x, t):
        return self.query(x, t), None

    def backward(self, cache, dL_dvalue, grads):
        pass

    def parameters(self):
        return []


class ZeroField(FunctionField):
    def __init__(self, output_dim=3):
        FunctionField.__init__(self, lambda x, t: np.zeros((x.shape[0], output_dim)), output_dim)


class GridDensity(object):
    """
    :samp:`Cell-centered scalar grids as a field, linear in time`

    Values are zero outside the unit box.

    :param frames: list of arrays (nx, ny, nz); a single frame is static
    :param float scale: factor applied to the values
    """
    output_dim = 1

    def __init__(self, frames, scale=1.0):
        if isinstance(frames, np.ndarray) and frames.ndim == 3:
            frames = [frames]
        self.frames = [np.asarray(f, dtype=np.float64) for f in frames]
        self.scale = scale

    def default_steps(self):
        n = self.frames[0].shape[0]
        return 0.5 / n, 0.5 / max(1, len(self.frames) - 1)

    def query(self, x, t):
        x, t = as_points(x, t)
        inside = _inside(x)
        if len(self.frames) == 1:
            return (self.scale * inside * sample_cells(self.frames[0], x))[:, None]
        f0, a = _frame_blend(t, len(self.frames))
        out = np.empty(x.shape[0])
        for f in np.unique(f0):
            sel = f0 == f
            lo = sample_cells(self.frames[f], x[sel])
            hi = sample_cells(self.frames[f + 1], x[sel])
            out[sel] = (1.0 - a[sel]) * lo + a[sel] * hi
        return (self.scale * inside * out)[:, None]

    def forward(self, x, t):
        return self.query(x, t), None

    def backward(self, cache, dL_dvalue, grads):
        pass

    def parameters(self):
        return []


class SequenceVelocity(object):
    """
    :samp:`MAC velocities of a simulation as a field, linear in time`
    """
    output_dim = 3

    def __init__(self, velocities):
        self.velocities = list(velocities)

    def default_steps(self):
        n = self.velocities[0].resolution[0]
        return 0.5 / n, 0.5 / max(1, len(self.velocities) - 1)

    def query(self, x, t):
        x, t = as_points(x, t)
        if len(self.velocities) == 1:
            return sample_velocity(self.velocities[0], x)
        f0, a = _frame_blend(t, len(self.velocities))
        out = np.empty((x.shape[0], 3))
        for f in np.unique(f0):
            sel = f0 == f
            lo = sample_velocity(self.velocities[f], x[sel])
            hi = sample_velocity(self.velocities[f + 1], x[sel])
            out[sel] = (1.0 - a[sel, None]) * lo + a[sel, None] * hi
        return out

    def forward(self, x, t):
        return self.query(x, t), None

    def backward(self, cache, dL_dvalue, grads):
        pass

    def parameters(self):
        return []


class HybridVelocity(object):
    """
    :samp:`Base velocity plus the velocity induced by vortex particles`

    Gradients flow to the base under key ``velocity`` and to the particle intensities under key ``intensity``;
    leaving a key out of the :class:`~fluidfields.core.field_grid.Gradients` freezes that part.
    """
    output_dim = 3

    def __init__(self, base, particles=None):
        self.base = base
        self.particles = particles

    def default_steps(self):
        return self.base.default_steps()

    def query(self, x, t):
        return self.forward(x, t)[0]

    def forward(self, x, t):
        value, base_cache = self.base.forward(x, t)
        vortex_cache = None
        if self.particles is not None:
            vortex, vortex_cache = self.particles.forward(x, t)
            value = value + vortex
        return value, (base_cache, vortex_cache)

    def backward(self, cache, dL_dvalue, grads: Gradients):
        base_cache, vortex_cache = cache
        self.base.backward(base_cache, dL_dvalue, grads)
        if self.particles is not None:
            self.particles.backward(vortex_cache, dL_dvalue, grads)


class FluidFields(object):
    """
    :samp:`Everything a reconstruction learns`

    :param density: density grid
    :param velocity: base velocity grid or None before the base flow stage
    :param radiance: constant emitted radiance
    :param particles: vortex particles or None before the vortex stage
    """
    def __init__(self, density: MultiResGrid4D, velocity: MultiResGrid4D=None, radiance: Radiance=None,
                 particles=None):
        self.density = density
        self.velocity = velocity
        self.radiance = radiance if radiance is not None else Radiance()
        self.particles = particles

    @staticmethod
    def create(paras: RunParameters, with_velocity=True):
        """
        :samp:`Fresh fields from parameters`

        Density and velocity grids draw from one generator seeded by ``grid.seed``.
        """
        rng = np.random.default_rng(paras.grid.seed)
        density = MultiResGrid4D.create(paras.grid, 1, rng)
        velocity = MultiResGrid4D.create(paras.grid, 3, rng) if with_velocity else None
        radiance = Radiance.create(paras.render.rgb, paras.render.radiance_init)
        return FluidFields(density, velocity, radiance)

    def ensure_velocity(self, paras: RunParameters):
        if self.velocity is None:
            self.velocity = MultiResGrid4D.create(paras.grid, 3, np.random.default_rng(paras.grid.seed + 1))
        return self.velocity

    def velocity_field(self, with_particles=True):
        """
        :samp:`The velocity to query: base, base plus particles, or zero`
        """
        if self.velocity is None:
            return ZeroField(3)
        if with_particles and self.particles is not None:
            return HybridVelocity(self.velocity, self.particles)
        return self.velocity

    def trainables(self, *keys):
        """
        :samp:`Parameter groups by gradient key`

        :return: dict of key to object with ``parameters()``
        """
        available = {"density": self.density, "velocity": self.velocity, "radiance": self.radiance,
                     "intensity": self.particles}
        missing = [k for k in keys if available.get(k) is None]
        if missing:
            raise ValueError("Fields not available for training: %s" % ", ".join(missing))
        return {k: available[k] for k in keys}

    def copy(self):
        return FluidFields(self.density.copy(), self.velocity.copy() if self.velocity is not None else None,
                           self.radiance.copy(), self.particles.copy() if self.particles is not None else None)
