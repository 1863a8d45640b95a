#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Vortex particles: seeding, trajectories, induced velocity and intensity learning`

A vortex particle carries a learnable intensity ``I`` and, for every frame, a position ``x_p`` and a vorticity
``w_p``. At a query point ``x`` a particle induces the velocity::

    I * (N x K(d) w_p)      with  N = (x_p - x) / d,  d = |x_p - x|,
                                  K(d) = exp(-d**2 / (2 r**2)) / (r**3 (2 pi)**1.5)

Inside a distance ``epsilon`` of the particle the contribution is zero. Particle states between frames are
interpolated linearly. The induced velocity is linear in the intensities, which are the only learnable
parameters of a :class:`VortexParticleSet` (gradient key ``intensity``).

Trajectories follow the base flow only; the vorticity is stretched by it, ``dw/dt = (w . grad) u``.

"""
import logging
import math

import numpy as np

from fluidfields.core.ff_paras import VortexParameters
from fluidfields.core.field_grid import GradBuffer, Gradients, as_points, curl, velocity_jacobian
from fluidfields.core.optim import Adam
from fluidfields.util.defaults import chunk_slices, parallel_map

LOG = logging.getLogger(__name__)

KERNEL_NORM = (2.0 * math.pi) ** 1.5


def kernel(d, radius):
    """
    :samp:`Gaussian kernel K(d) with the normalization of a 3D density`
    """
    return np.exp(-np.square(d) / (2.0 * radius ** 2)) / (radius ** 3 * KERNEL_NORM)


class VortexParticleSet(object):
    """
    :samp:`A set of vortex particles`

    :param seed_positions: positions at the seed frames (P, 3)
    :param seed_frames: frame index of every seed (P,)
    :param int num_frames: number of frames of the sequence
    :param float kernel_radius: kernel radius r
    :param float epsilon: distance within which a particle induces nothing
    :param intensities: (P,), zeros if None
    :param seed_vorticity: vorticity at the seeds (P, 3), taken from the base flow if None
    """
    def __init__(self, seed_positions, seed_frames, num_frames, kernel_radius=0.05, epsilon=1e-6, intensities=None,
                 seed_vorticity=None, chunk_points=4096):
        self.seed_positions = np.asarray(seed_positions, dtype=np.float64).reshape(-1, 3)
        count = self.seed_positions.shape[0]
        self.seed_frames = np.asarray(seed_frames, dtype=np.int64).reshape(count)
        self.num_frames = int(num_frames)
        if self.num_frames < 1:
            raise ValueError("Invalid value for num_frames: %s" % num_frames)
        if np.any(self.seed_frames < 0) or np.any(self.seed_frames >= self.num_frames):
            raise ValueError("Seed frames should be in [0, %d)" % self.num_frames)
        if not kernel_radius > 0:
            raise ValueError("Invalid value for vortex.kernel_radius: should be positive, got %s" % kernel_radius)
        self.kernel_radius = float(kernel_radius)
        self.epsilon = float(epsilon)
        self.chunk_points = int(chunk_points)
        if intensities is None:
            intensities = np.zeros(count)
        self.intensities = np.array(intensities, dtype=np.float64).reshape(count)
        if seed_vorticity is not None:
            seed_vorticity = np.asarray(seed_vorticity, dtype=np.float64).reshape(count, 3)
        self.seed_vorticity = seed_vorticity
        self.positions = None
        self.vorticity = None
        self.flagged = np.zeros(count, dtype=bool)

    @staticmethod
    def from_trajectories(positions, vorticity, intensities, para: VortexParameters=None):
        """
        :samp:`A set with known trajectories, as read from a particle file`
        """
        para = para if para else VortexParameters()
        positions = np.asarray(positions, dtype=np.float64)
        count, frames = positions.shape[0], positions.shape[1]
        particles = VortexParticleSet(positions[:, 0], np.zeros(count, dtype=np.int64), frames, para.kernel_radius,
                                      para.epsilon, intensities, chunk_points=para.chunk_points)
        particles.positions = positions.copy()
        particles.vorticity = np.asarray(vorticity, dtype=np.float64).reshape(positions.shape).copy()
        return particles

    @property
    def num_particles(self):
        return self.seed_positions.shape[0]

    @property
    def has_trajectories(self):
        return self.positions is not None

    def parameters(self):
        return [self.intensities]

    def copy(self):
        other = VortexParticleSet(self.seed_positions, self.seed_frames, self.num_frames, self.kernel_radius,
                                  self.epsilon, self.intensities, self.seed_vorticity, self.chunk_points)
        if self.has_trajectories:
            other.positions = self.positions.copy()
            other.vorticity = self.vorticity.copy()
        other.flagged = self.flagged.copy()
        return other

    def state_at(self, t):
        """
        :samp:`Particle positions and vorticities at per-point times`

        :param t: times (N,)
        :return: (positions (N, P, 3), vorticities (N, P, 3))
        """
        if not self.has_trajectories:
            raise ValueError("Particle trajectories have not been computed")
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if self.num_frames == 1:
            shape = (t.shape[0],) + self.positions[:, 0].shape
            return np.broadcast_to(self.positions[:, 0], shape), np.broadcast_to(self.vorticity[:, 0], shape)
        s = np.clip(t, 0.0, 1.0) * (self.num_frames - 1)
        f0 = np.clip(np.floor(s).astype(np.int64), 0, self.num_frames - 2)
        a = (s - f0)[:, None, None]
        x = (1.0 - a) * self.positions[:, f0].transpose(1, 0, 2) + a * self.positions[:, f0 + 1].transpose(1, 0, 2)
        w = (1.0 - a) * self.vorticity[:, f0].transpose(1, 0, 2) + a * self.vorticity[:, f0 + 1].transpose(1, 0, 2)
        return x, w

    def _basis_chunk(self, x, t):
        xp, wp = self.state_at(t)
        diff = xp - x[:, None, :]
        d = np.linalg.norm(diff, axis=2)
        far = d >= max(self.epsilon, 1e-300)
        safe = np.where(far, d, 1.0)
        normal = diff / safe[:, :, None]
        terms = np.cross(normal, kernel(d, self.kernel_radius)[:, :, None] * wp)
        return np.where(far[:, :, None], terms, 0.0)

    def basis(self, x, t):
        """
        :samp:`Velocity induced by every particle at unit intensity`

        :return: array (N, P, 3)
        """
        x, t = as_points(x, t)
        slices = chunk_slices(x.shape[0], self.chunk_points)
        if not slices:
            return np.zeros((0, self.num_particles, 3))
        return np.concatenate([self._basis_chunk(x[sl], t[sl]) for sl in slices])

    def induced_velocity(self, x, t):
        """
        :samp:`Velocity induced by all particles`

        :param x: positions (N, 3)
        :param t: times (N,) or scalar
        :return: velocities (N, 3)
        """
        return self.forward(x, t)[0]

    # field protocol
    output_dim = 3

    def forward(self, x, t):
        x, t = as_points(x, t)

        def work(sl):
            return np.einsum("npi,p->ni", self._basis_chunk(x[sl], t[sl]), self.intensities)

        slices = chunk_slices(x.shape[0], self.chunk_points)
        value = np.concatenate(parallel_map(work, slices)) if slices else np.zeros((0, 3))
        return value, (x, t)

    def backward(self, cache, dL_dvalue, grads: Gradients):
        buffer = grads.get("intensity") if grads is not None else None
        if buffer is None:
            return
        x, t = cache
        dL_dvalue = np.asarray(dL_dvalue, dtype=np.float64).reshape(-1, 3)

        def work(sl):
            return np.einsum("npi,ni->p", self._basis_chunk(x[sl], t[sl]), dL_dvalue[sl])

        for part in parallel_map(work, chunk_slices(x.shape[0], self.chunk_points)):
            buffer.arrays[0] += part

    def default_steps(self):
        return self.kernel_radius / 10.0, 0.5 / max(1, self.num_frames - 1)

    def __repr__(self):
        return "VortexParticleSet(%d particles, %d frames, r=%g)" % (self.num_particles, self.num_frames,
                                                                    self.kernel_radius)


def seed_particles(velocity_field, para: VortexParameters, rng, num_frames, density_field=None) -> VortexParticleSet:
    """
    :samp:`Place particles at the space-time points of highest curl`

    ``vortex.candidate_count`` candidates are drawn uniformly in space at uniformly drawn frames and ranked by the
    magnitude of the curl of the base flow. Candidates are accepted in that order unless closer than half the
    kernel radius to an accepted particle. If no candidate has a curl above ``vortex.curl_zero`` the candidates
    are ranked by density instead, with a warning.

    :param velocity_field: the frozen base flow
    :param para: vortex parameters
    :param rng: :class:`numpy.random.Generator`
    :param int num_frames: number of frames of the sequence
    :param density_field: density used by the fallback ranking
    :return: :class:`VortexParticleSet` with seeds and zero intensities
    """
    count = para.candidate_count
    positions = rng.random((count, 3))
    frames = rng.integers(0, num_frames, count)
    times = frames / max(1, num_frames - 1)
    score = np.linalg.norm(curl(velocity_field, positions, times), axis=1)
    if not np.max(score) > para.curl_zero:
        LOG.warning("Base flow has no curl above %g at %d candidates; seeding at the highest densities",
                    para.curl_zero, count)
        if density_field is not None:
            score = density_field.forward(positions, times)[0][:, 0]
        else:
            score = np.zeros(count)
    order = np.argsort(-score, kind="stable")
    separation = para.kernel_radius / 2.0
    accepted = []
    for index in order:
        if len(accepted) == para.num_particles:
            break
        if accepted:
            nearest = np.min(np.linalg.norm(positions[accepted] - positions[index], axis=1))
            if nearest < separation:
                continue
        accepted.append(index)
    if len(accepted) < para.num_particles:
        LOG.warning("Only %d of %d candidates are %g apart; filling up with the best remaining candidates",
                    len(accepted), para.num_particles, separation)
        taken = set(accepted)
        accepted.extend([i for i in order if i not in taken][:para.num_particles - len(accepted)])
    accepted = np.array(accepted, dtype=np.int64)
    LOG.info("Seeded %d vortex particles, curl magnitude %.4g to %.4g", len(accepted), score[accepted].min(),
             score[accepted].max())
    return VortexParticleSet(positions[accepted], frames[accepted], num_frames, para.kernel_radius, para.epsilon,
                             chunk_points=para.chunk_points)


def _rhs(velocity_field, x, w, t):
    u = velocity_field.forward(x, t)[0]
    jac = velocity_jacobian(velocity_field, x, t)
    return u, np.einsum("nia,na->ni", jac, w)


def _rk2(velocity_field, x, w, t, dt):
    u1, s1 = _rhs(velocity_field, x, w, t)
    u2, s2 = _rhs(velocity_field, np.clip(x + 0.5 * dt * u1, 0.0, 1.0), w + 0.5 * dt * s1, t + 0.5 * dt)
    return x + dt * u2, w + dt * s2


def precompute_trajectories(particles: VortexParticleSet, velocity_field, substeps=2) -> VortexParticleSet:
    """
    :samp:`Integrate positions and vorticities through the base flow for every frame`

    Starting at its seed, every particle is integrated forward to the last frame and backward to frame 0 with the
    midpoint rule, ``substeps`` steps per frame interval. The seed vorticity is the curl of the base flow at the
    seed unless given. Positions leaving the unit box are clamped and the particle is flagged.

    :param particles: seeded particles, updated in place
    :param velocity_field: the frozen base flow
    :param int substeps: steps per frame interval
    :return: particles
    """
    count, frames = particles.num_particles, particles.num_frames
    seeds = particles.seed_frames
    seed_times = seeds / max(1, frames - 1)
    x = np.zeros((count, frames, 3))
    w = np.zeros((count, frames, 3))
    x[np.arange(count), seeds] = particles.seed_positions
    if particles.seed_vorticity is None:
        particles.seed_vorticity = curl(velocity_field, particles.seed_positions, seed_times)
    w[np.arange(count), seeds] = particles.seed_vorticity
    flagged = np.zeros(count, dtype=bool)
    if frames > 1:
        dt = 1.0 / (frames - 1) / substeps
        for direction, frame_range in ((1.0, range(0, frames - 1)), (-1.0, range(frames - 1, 0, -1))):
            for f in frame_range:
                active = np.nonzero(seeds <= f if direction > 0 else seeds >= f)[0]
                if active.size == 0:
                    continue
                xa, wa = x[active, f], w[active, f]
                t = f / (frames - 1)
                for step in range(substeps):
                    xa, wa = _rk2(velocity_field, xa, wa, np.full(active.size, t + direction * step * dt),
                                  direction * dt)
                    outside = np.any((xa < 0.0) | (xa > 1.0), axis=1)
                    flagged[active[outside]] = True
                    xa = np.clip(xa, 0.0, 1.0)
                target = f + (1 if direction > 0 else -1)
                x[active, target] = xa
                w[active, target] = wa
    if flagged.any():
        LOG.warning("%d of %d particle trajectories left the domain and were clamped", flagged.sum(), count)
    particles.positions = x
    particles.vorticity = w
    particles.flagged = flagged
    return particles


def scale_intensities(particles: VortexParticleSet, factor) -> VortexParticleSet:
    """
    :samp:`A copy of the particles with intensities multiplied by factor`

    :raises: :exc:`ValueError` if factor is not finite
    """
    factor = float(factor)
    if not math.isfinite(factor):
        raise ValueError("Invalid value for factor: not finite %s" % factor)
    scaled = particles.copy()
    scaled.intensities *= factor
    return scaled


def fit_intensities(particles: VortexParticleSet, base_velocity, target_velocity, points, iterations=2000,
                    learning_rate=2e-3, final_lr_factor=0.01, optimizer=None):
    """
    :samp:`Fit intensities so that base plus induced velocity matches a target velocity`

    Minimizes the mean squared velocity difference at the given points with Adam; the learning rate decays
    geometrically to ``final_lr_factor`` times its start value. Base flow and trajectories stay fixed.

    :param particles: particles with trajectories, intensities updated in place
    :param base_velocity: base flow with the field protocol
    :param target_velocity: target with the field protocol
    :param points: :class:`~fluidfields.core.physics_losses.PointBatch`
    :param int iterations: optimizer steps
    :param float learning_rate: initial learning rate
    :param optimizer: an :class:`~fluidfields.core.optim.Adam` to continue with, a new one if None
    :return: final loss
    """
    x, t = points.positions, points.times
    residual_base = target_velocity.forward(x, t)[0] - base_velocity.forward(x, t)[0]
    basis = particles.basis(x, t)
    n = x.shape[0]
    optimizer = optimizer if optimizer else Adam({"intensity": particles.parameters()}, learning_rate)
    loss = float("nan")
    for it in range(iterations):
        optimizer.learning_rate = learning_rate * final_lr_factor ** (it / max(1, iterations - 1))
        diff = np.einsum("npi,p->ni", basis, particles.intensities) - residual_base
        loss = float(np.mean(np.sum(diff ** 2, axis=1)))
        grad = 2.0 / n * np.einsum("npi,ni->p", basis, diff)
        optimizer.step(Gradients(intensity=GradBuffer([grad])))
    LOG.debug("Fitted %d intensities, loss %.4g", particles.num_particles, loss)
    return loss