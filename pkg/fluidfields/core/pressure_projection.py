#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Staggered velocity grids, divergence and pressure projection`

Velocities live on a MAC grid: for a grid of ``nx * ny * nz`` cells with cell size ``h = 1 / nx`` the x-component
``u`` is stored on the ``(nx + 1) * ny * nz`` faces normal to x, ``v`` and ``w`` likewise. Arrays are indexed
``[i, j, k]`` with ``i`` along x.

:func:`project` removes the gradient part of a velocity field by solving a Poisson problem for pressure with a
conjugate gradient method preconditioned by one multigrid V-cycle. The fluid mass density is 1 and the time step
is absorbed into the pressure.

Boundary conditions are given per face of the domain box by a :class:`BoundarySpec`:

 - ``solid`` faces have homogeneous Neumann pressure. :func:`enforce_boundary` sets the normal velocity on them to
   zero and :func:`project` applies it before solving, so projected velocities never cross a solid face.
 - ``open`` faces have zero pressure on the face (mirrored ghost cells).

Without an open face the Poisson problem is singular; the right hand side is then restricted to mean zero and the
pressure is returned with mean zero.

"""
import logging

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import factorized

from fluidfields.core.ff_enum import FaceCondition
from fluidfields.core.ff_paras import SolverParameters, FACE_NAMES

LOG = logging.getLogger(__name__)

MIN_COARSE_RES = 4


class SolverConvergenceError(ArithmeticError):
    """
    :samp:`The pressure solve did not reach its tolerance`
    """
    def __init__(self, message, residual, iterations):
        ArithmeticError.__init__(self, message)
        self.residual = residual
        self.iterations = iterations


class MacGrid(object):
    """
    :samp:`Staggered (MAC) velocity grid`
    """
    def __init__(self, u, v, w):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        nx, ny, nz = u.shape[0] - 1, u.shape[1], u.shape[2]
        if v.shape != (nx, ny + 1, nz) or w.shape != (nx, ny, nz + 1):
            raise ValueError("Inconsistent face arrays: u %s, v %s, w %s" % (u.shape, v.shape, w.shape))
        self.u = u
        self.v = v
        self.w = w

    @staticmethod
    def zeros(resolution):
        nx, ny, nz = _resolution(resolution)
        return MacGrid(np.zeros((nx + 1, ny, nz)), np.zeros((nx, ny + 1, nz)), np.zeros((nx, ny, nz + 1)))

    @staticmethod
    def face_shape(resolution, axis):
        shape = list(_resolution(resolution))
        shape[axis] += 1
        return tuple(shape)

    @property
    def resolution(self):
        return self.w.shape[0], self.w.shape[1], self.u.shape[2]

    @property
    def h(self):
        return 1.0 / self.resolution[0]

    def components(self):
        return [self.u, self.v, self.w]

    def component(self, axis):
        return self.components()[axis]

    def copy(self):
        return MacGrid(self.u.copy(), self.v.copy(), self.w.copy())

    def map(self, fn):
        return MacGrid(*[fn(c) for c in self.components()])

    def __add__(self, other):
        return MacGrid(self.u + other.u, self.v + other.v, self.w + other.w)

    def __sub__(self, other):
        return MacGrid(self.u - other.u, self.v - other.v, self.w - other.w)

    def scaled(self, factor):
        return self.map(lambda c: c * factor)

    def face_count(self):
        return self.u.size + self.v.size + self.w.size

    def dot(self, other):
        return float(sum(np.vdot(a, b) for a, b in zip(self.components(), other.components())))

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def max_abs(self):
        return float(max(np.max(np.abs(c)) for c in self.components()))

    def is_finite(self):
        return all(np.all(np.isfinite(c)) for c in self.components())

    def kinetic_energy(self):
        return 0.5 * self.dot(self) * self.h ** 3

    def __repr__(self):
        return "MacGrid(resolution=%s)" % (self.resolution,)


def _resolution(resolution):
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    nx, ny, nz = (int(r) for r in resolution)
    if min(nx, ny, nz) < 1:
        raise ValueError("Invalid grid resolution: %s" % (resolution,))
    return nx, ny, nz


class BoundarySpec(object):
    """
    :samp:`Condition per face of the domain box`

    Faces are named ``x-, x+, y-, y+, z-, z+``.
    """
    def __init__(self, conditions=None):
        self.conditions = {face: FaceCondition.solid for face in FACE_NAMES}
        if conditions:
            for face, condition in conditions.items():
                if face not in FACE_NAMES:
                    raise ValueError("Invalid face: %s" % face)
                self.conditions[face] = FaceCondition.value_for(condition)

    @staticmethod
    def closed():
        return BoundarySpec()

    @staticmethod
    def open_top():
        return BoundarySpec({"y+": FaceCondition.open})

    @staticmethod
    def all_open():
        return BoundarySpec({face: FaceCondition.open for face in FACE_NAMES})

    @staticmethod
    def from_parameters(para: SolverParameters):
        return BoundarySpec(para.face_conditions())

    def condition(self, axis, side):
        return self.conditions[FACE_NAMES[2 * axis + side]]

    def is_open(self, axis, side):
        return self.condition(axis, side) == FaceCondition.open

    def has_open(self):
        return FaceCondition.open in self.conditions.values()

    def key(self):
        return tuple(self.conditions[face].value for face in FACE_NAMES)

    def __eq__(self, other):
        return isinstance(other, BoundarySpec) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return "BoundarySpec(%s)" % ", ".join("%s=%s" % (f, self.conditions[f].name) for f in FACE_NAMES)


def divergence(vel: MacGrid):
    """
    :samp:`Cell-centered divergence of a MAC velocity`

    :param vel: velocity
    :return: array of shape ``(nx, ny, nz)``
    """
    return ((vel.u[1:, :, :] - vel.u[:-1, :, :]) + (vel.v[:, 1:, :] - vel.v[:, :-1, :])
            + (vel.w[:, :, 1:] - vel.w[:, :, :-1])) / vel.h


def enforce_boundary(vel: MacGrid, bc: BoundarySpec) -> MacGrid:
    """
    :samp:`Zero the normal velocity on solid faces`
    """
    out = vel.copy()
    for axis, comp in enumerate(out.components()):
        moved = np.moveaxis(comp, axis, 0)
        if not bc.is_open(axis, 0):
            moved[0] = 0.0
        if not bc.is_open(axis, 1):
            moved[-1] = 0.0
    return out


def face_weights(resolution, bc: BoundarySpec) -> MacGrid:
    """
    :samp:`Weight of each face in the pressure gradient`

    Interior faces 1, open boundary faces 2, solid boundary faces 0.
    """
    ones = MacGrid.zeros(resolution).map(lambda c: np.ones_like(c))
    for axis, comp in enumerate(ones.components()):
        moved = np.moveaxis(comp, axis, 0)
        moved[0] = 2.0 if bc.is_open(axis, 0) else 0.0
        moved[-1] = 2.0 if bc.is_open(axis, 1) else 0.0
    return ones


def _face_differences(p, bc: BoundarySpec, axis):
    """Pressure differences across the faces normal to axis, ghost cells mirrored at open faces."""
    pm = np.moveaxis(p, axis, 0)
    g = np.zeros((pm.shape[0] + 1,) + pm.shape[1:])
    g[1:-1] = pm[1:] - pm[:-1]
    if bc.is_open(axis, 0):
        g[0] = 2.0 * pm[0]
    if bc.is_open(axis, 1):
        g[-1] = -2.0 * pm[-1]
    return np.moveaxis(g, 0, axis)


def _apply_laplacian(p, bc, inv_h2):
    lp = np.zeros_like(p)
    for axis in range(3):
        g = _face_differences(p, bc, axis)
        gm = np.moveaxis(g, axis, 0)
        lp += np.moveaxis(gm[1:] - gm[:-1], 0, axis)
    return lp * inv_h2


def _diagonal_1d(n, bc, axis):
    d = np.full(n, 2.0)
    for side, index in ((0, 0), (1, n - 1)):
        d[index] += 1.0 if bc.is_open(axis, side) else -1.0
    return d


def _operator_diagonal(shape, bc, inv_h2):
    dx = _diagonal_1d(shape[0], bc, 0)[:, None, None]
    dy = _diagonal_1d(shape[1], bc, 1)[None, :, None]
    dz = _diagonal_1d(shape[2], bc, 2)[None, None, :]
    return (dx + dy + dz) * inv_h2


def _sparse_operator(shape, bc, inv_h2):
    """Sparse matrix of the negative Laplacian, cells in C order."""
    mats = []
    for axis, n in enumerate(shape):
        main = _diagonal_1d(n, bc, axis)
        off = -np.ones(n - 1)
        mats.append(sparse.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="csr"))
    ix, iy, iz = (sparse.identity(n, format="csr") for n in shape)
    a = (sparse.kron(mats[0], sparse.kron(iy, iz)) + sparse.kron(ix, sparse.kron(mats[1], iz))
         + sparse.kron(ix, sparse.kron(iy, mats[2])))
    return (a * inv_h2).tocsc()


class _Level(object):
    def __init__(self, shape, bc, inv_h2, singular):
        self.shape = shape
        self.bc = bc
        self.inv_h2 = inv_h2
        self.singular = singular
        self.diag = _operator_diagonal(shape, bc, inv_h2)
        self.direct = None

    def apply(self, x):
        return -_apply_laplacian(x, self.bc, self.inv_h2)

    def factorize(self):
        a = _sparse_operator(self.shape, self.bc, self.inv_h2)
        if self.singular:
            a = a + sparse.identity(a.shape[0], format="csc") * (1e-8 * self.inv_h2)
        self.direct = factorized(a.tocsc())

    def solve_direct(self, b):
        if self.singular:
            b = b - b.mean()
        x = self.direct(b.ravel()).reshape(self.shape)
        if self.singular:
            x = x - x.mean()
        return x


class PressureSolver(object):
    """
    :samp:`Multigrid preconditioned conjugate gradient solver for one grid shape and boundary`

    Coarse levels halve the resolution; their operator is the Galerkin product of average restriction and
    constant prolongation, which is the rediscretized operator at half strength. The coarsest level is solved
    with a sparse LU factorization.
    """
    def __init__(self, shape, para: SolverParameters=None, bc: BoundarySpec=None, h=None):
        self.para = para if para else SolverParameters()
        self.bc = bc if bc else BoundarySpec.from_parameters(self.para)
        self.shape = _resolution(shape)
        self.h = h if h else 1.0 / self.shape[0]
        self.singular = not self.bc.has_open()
        self.last_iterations = 0
        self.last_residual = 0.0
        self.levels = []
        shape = self.shape
        inv_h2 = 1.0 / self.h ** 2
        while True:
            self.levels.append(_Level(shape, self.bc, inv_h2, self.singular))
            coarse = tuple(n // 2 for n in shape)
            if (len(self.levels) >= self.para.mg_levels or any(n % 2 for n in shape)
                    or min(coarse) < MIN_COARSE_RES):
                break
            shape = coarse
            inv_h2 *= 0.5
        self.levels[-1].factorize()
        LOG.debug("Pressure solver for %s: %d multigrid levels, coarsest %s", self.shape, len(self.levels),
                  self.levels[-1].shape)

    def _smooth(self, level, x, b, sweeps):
        omega = self.para.jacobi_omega
        for _ in range(sweeps):
            x = x + omega * (b - level.apply(x)) / level.diag
        return x

    def v_cycle(self, b, index=0):
        """
        :samp:`One V-cycle on the given level, starting from zero`

        :param b: right hand side of the negative Laplacian system
        :param int index: level index, 0 is the finest
        :return: approximate solution
        """
        level = self.levels[index]
        if index == len(self.levels) - 1:
            return level.solve_direct(b)
        x = self._smooth(level, np.zeros_like(b), b, self.para.pre_sweeps)
        r = b - level.apply(x)
        nx, ny, nz = r.shape
        coarse_r = r.reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2).mean(axis=(1, 3, 5))
        coarse_e = self.v_cycle(coarse_r, index + 1)
        x = x + coarse_e.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)
        return self._smooth(level, x, b, self.para.post_sweeps)

    def apply_operator(self, x):
        return self.levels[0].apply(x)

    def solve(self, div):
        """
        :samp:`Solve the Laplacian of p equal to div`

        :param div: cell-centered right hand side
        :return: pressure, same shape
        :raises: :exc:`SolverConvergenceError` when the relative residual is above tolerance after
            the maximum number of iterations
        """
        b = -np.asarray(div, dtype=np.float64)
        if b.shape != self.shape:
            raise ValueError("Right hand side has shape %s, solver expects %s" % (b.shape, self.shape))
        if not np.all(np.isfinite(b)):
            raise ValueError("Right hand side of pressure solve is not finite")
        if self.singular:
            mean = b.mean()
            if abs(mean) > 1e-12 * (np.abs(b).max() + 1e-300):
                LOG.debug("Removing incompatible mean %g from closed-domain pressure solve", mean)
            b = b - mean
        x = np.zeros_like(b)
        b_norm = np.linalg.norm(b)
        self.last_iterations = 0
        self.last_residual = 0.0
        if b_norm == 0.0:
            return x
        r = b.copy()
        z = self._precondition(r)
        d = z.copy()
        rz = np.vdot(r, z)
        tolerance = self.para.tolerance * b_norm
        for iteration in range(1, self.para.max_iterations + 1):
            ad = self.apply_operator(d)
            alpha = rz / np.vdot(d, ad)
            x += alpha * d
            r -= alpha * ad
            r_norm = np.linalg.norm(r)
            self.last_iterations = iteration
            self.last_residual = r_norm / b_norm
            if r_norm <= tolerance:
                break
            z = self._precondition(r)
            rz_new = np.vdot(r, z)
            d = z + (rz_new / rz) * d
            rz = rz_new
        else:
            raise SolverConvergenceError("Pressure solve did not converge in %d iterations, relative residual %g"
                                         % (self.para.max_iterations, self.last_residual),
                                         self.last_residual, self.last_iterations)
        if self.singular:
            x -= x.mean()
        LOG.debug("Pressure solve converged in %d iterations, relative residual %g", self.last_iterations,
                  self.last_residual)
        return x

    def _precondition(self, r):
        z = self.v_cycle(r)
        if self.singular:
            z = z - z.mean()
        return z


_SOLVERS = {}


def pressure_solver(shape, para: SolverParameters=None, bc: BoundarySpec=None, h=None) -> PressureSolver:
    """
    :samp:`Cached solver for the given shape, parameters and boundary`
    """
    para = para if para else SolverParameters()
    bc = bc if bc else BoundarySpec.from_parameters(para)
    shape = _resolution(shape)
    key = (shape, tuple(para.items()), bc.key(), h)
    solver = _SOLVERS.get(key)
    if solver is None:
        solver = PressureSolver(shape, para, bc, h)
        _SOLVERS[key] = solver
    return solver


def solve_pressure(div, para: SolverParameters=None, bc: BoundarySpec=None, h=None):
    """
    :samp:`Solve for pressure given a divergence`

    :param div: cell-centered divergence
    :param para: solver parameters
    :param bc: boundary conditions, from para if None
    :param float h: cell size, ``1 / nx`` if None
    :return: pressure p with Laplacian p = div
    :raises: :exc:`SolverConvergenceError` on non-convergence
    """
    div = np.asarray(div, dtype=np.float64)
    return pressure_solver(div.shape, para, bc, h).solve(div)


def pressure_gradient(p, bc: BoundarySpec, h) -> MacGrid:
    return MacGrid(*[_face_differences(p, bc, axis) / h for axis in range(3)])


def project(vel: MacGrid, para: SolverParameters=None, bc: BoundarySpec=None) -> MacGrid:
    """
    :samp:`Remove the gradient part of a velocity field`

    :param vel: velocity
    :param para: solver parameters
    :param bc: boundary conditions, from para if None
    :return: projected velocity with zero normal velocity on solid faces
    :raises: :exc:`SolverConvergenceError` on non-convergence
    """
    para = para if para else SolverParameters()
    bc = bc if bc else BoundarySpec.from_parameters(para)
    vel = enforce_boundary(vel, bc)
    p = solve_pressure(divergence(vel), para, bc, vel.h)
    return vel - pressure_gradient(p, bc, vel.h)


def project_residual_transpose(residual: MacGrid, para: SolverParameters=None, bc: BoundarySpec=None) -> MacGrid:
    """
    :samp:`Apply the transpose of (identity - projection)`

    Used for the exact gradient of the squared projection residual.

    :param residual: face values
    :return: face values
    """
    para = para if para else SolverParameters()
    bc = bc if bc else BoundarySpec.from_parameters(para)
    weights = face_weights(residual.resolution, bc)
    weighted = MacGrid(*[a * b for a, b in zip(residual.components(), weights.components())])
    p = solve_pressure(divergence(weighted), para, bc, residual.h)
    comps = []
    for axis in range(3):
        pm = np.moveaxis(p, axis, 0)
        padded = np.zeros((pm.shape[0] + 2,) + pm.shape[1:])
        padded[1:-1] = pm
        comps.append(np.moveaxis(padded[1:] - padded[:-1], 0, axis) / residual.h)
    # solid normals pass straight through, everything else goes through the masked solve
    return enforce_boundary(MacGrid(*comps), bc) + residual - enforce_boundary(residual, bc)


def max_divergence(vel: MacGrid):
    """
    :samp:`Largest absolute divergence in units of one over cells`
    """
    return float(np.max(np.abs(divergence(vel)))) * vel.h
