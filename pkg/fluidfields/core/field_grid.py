#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Optimizable 4D multiresolution feature grids`

A :class:`MultiResGrid4D` represents a continuous field over the unit box in space and normalized time [0, 1].
Every level is a regular 4D lattice of feature vectors; a query interpolates each level quadrilinearly,
concatenates the level features and decodes them with a small one-hidden-layer network. Density grids end in a
softplus, so density is never negative; velocity grids end in the identity.

Gradients are computed by hand. Any loss in this package is a composition of point queries, and every queryable
object (grids, vortex particles, simulation grids) implements the same protocol::

    value, cache = field.forward(x, t)          # value has shape (N, output_dim)
    field.backward(cache, dL_dvalue, grads)     # accumulates into grads, a Gradients instance

Partial derivatives are central differences of point queries (:func:`stencil_forward`); their gradients flow
back through the same protocol (:func:`stencil_backward`).

Computation is in float64. Checkpoints store float32 (see :doc:`fluidfields.core.storage <fluidfields.core.storage>`).

"""
import itertools
import logging
import math

import numpy as np
from scipy.special import expit

from fluidfields.core.ff_enum import Activation
from fluidfields.core.ff_paras import GridParameters
from fluidfields.core.pressure_projection import MacGrid

LOG = logging.getLogger(__name__)

HASH_PRIMES = np.array([1, 2654435761, 805459861, 3674653429], dtype=np.uint64)
CORNER_BITS = np.array(list(itertools.product((0, 1), repeat=4)), dtype=np.int64)
LOG2 = math.log(2.0)
MAC_CHUNK = 65536


class NonFiniteValueError(ArithmeticError):
    pass


def activate(kind: Activation, z):
    if kind == Activation.identity:
        return z
    sp = np.logaddexp(0.0, z)
    if kind == Activation.shifted_softplus:
        return sp - LOG2
    return sp


def activate_derivative(kind: Activation, z):
    if kind == Activation.identity:
        return np.ones_like(z)
    return expit(z)


def as_points(x, t):
    """
    :samp:`Normalize query input to arrays of shape (N, 3) and (N,)`

    :raises: :exc:`NonFiniteValueError` if an input is not finite
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, 3)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("Positions should have shape (N, 3), got %s" % (x.shape,))
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(x.shape[0], float(t))
    t = t.reshape(-1)
    if t.shape[0] != x.shape[0]:
        raise ValueError("Got %d positions and %d times" % (x.shape[0], t.shape[0]))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise NonFiniteValueError("Non-finite query input")
    return x, t


class GradBuffer(object):
    """
    :samp:`One gradient array per parameter array`
    """
    def __init__(self, arrays):
        self.arrays = list(arrays)

    @staticmethod
    def like(parameters):
        return GradBuffer([np.zeros_like(p) for p in parameters])

    def zero(self):
        for a in self.arrays:
            a.fill(0.0)

    def add(self, other, scale=1.0):
        for a, b in zip(self.arrays, other.arrays):
            a += b if scale == 1.0 else scale * b
        return self

    def copy(self):
        return GradBuffer([a.copy() for a in self.arrays])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays)

    def norm(self):
        return float(np.sqrt(sum(np.vdot(a, a) for a in self.arrays)))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def __getitem__(self, item):
        return self.arrays[item]

    def __len__(self):
        return len(self.arrays)

    def __iter__(self):
        return iter(self.arrays)


class Gradients(object):
    """
    :samp:`Gradient buffers by parameter group`

    Keys are ``density``, ``velocity``, ``radiance`` and ``intensity``. A field whose key is absent is not
    trained: its backward pass is skipped and its parameters stay bitwise unchanged.
    """
    def __init__(self, **buffers):
        self.buffers = {k: v for k, v in buffers.items() if v is not None}

    @staticmethod
    def for_fields(**fields):
        """
        :samp:`Zeroed buffers for the given named fields`

        :param fields: key to object with a ``parameters()`` method, None values are skipped
        """
        return Gradients(**{k: GradBuffer.like(f.parameters()) for k, f in fields.items() if f is not None})

    def get(self, key):
        return self.buffers.get(key)

    def keys(self):
        return list(self.buffers.keys())

    def zero(self):
        for b in self.buffers.values():
            b.zero()

    def add(self, other):
        for key, buffer in other.buffers.items():
            if key in self.buffers:
                self.buffers[key].add(buffer)
            else:
                self.buffers[key] = buffer.copy()
        return self

    def zeros_like(self):
        return Gradients(**{k: GradBuffer.like(b.arrays) for k, b in self.buffers.items()})

    def is_finite(self):
        return all(b.is_finite() for b in self.buffers.values())

    def norms(self):
        return {k: b.norm() for k, b in self.buffers.items()}


class Level4D(object):
    """
    :samp:`One level of a 4D feature lattice`

    Lattice vertices sit at ``i / (res - 1)`` along every axis. Dense storage orders vertices x fastest, then y,
    z and t. When the vertex count exceeds a non-zero table size the features are stored in a hash table indexed
    by the XOR of vertex coordinates multiplied by large primes.
    """
    def __init__(self, res_xyz, res_t, num_features, table_size=0, features=None):
        self.res_xyz = tuple(int(r) for r in res_xyz)
        self.res_t = int(res_t)
        if min(self.res_xyz) < 2 or self.res_t < 2:
            raise ValueError("Level resolutions should be at least 2, got %s x %d" % (self.res_xyz, self.res_t))
        self.num_features = int(num_features)
        self.vertex_count = self.res_xyz[0] * self.res_xyz[1] * self.res_xyz[2] * self.res_t
        self.table_size = int(table_size) if 0 < table_size < self.vertex_count else 0
        size = self.table_size if self.table_size else self.vertex_count
        if features is None:
            features = np.zeros((size, self.num_features))
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (size, self.num_features):
            raise ValueError("Level features should have shape %s, got %s" % ((size, self.num_features),
                                                                           features.shape))
        self.features = features
        self._res = np.array(self.res_xyz + (self.res_t,), dtype=np.int64)
        rx, ry, rz = self.res_xyz
        self._strides = np.array([1, rx, rx * ry, rx * ry * rz], dtype=np.int64)

    @property
    def hashed(self):
        return self.table_size > 0

    def vertex_index(self, ix, iy, iz, it):
        """
        :samp:`Storage index of lattice vertices`
        """
        coords = [np.asarray(c, dtype=np.int64) for c in (ix, iy, iz, it)]
        if self.hashed:
            h = np.zeros(np.broadcast(*coords).shape, dtype=np.uint64)
            for c, prime in zip(coords, HASH_PRIMES):
                h ^= c.astype(np.uint64) * prime
            return (h % np.uint64(self.table_size)).astype(np.int64)
        return sum(c * s for c, s in zip(coords, self._strides))

    def corners(self, x, t):
        """
        :samp:`The 16 lattice corners around each point and their interpolation weights`

        :param x: positions (N, 3), already clamped to the unit box
        :param t: times (N,), already clamped to [0, 1]
        :return: (indices, weights), both (N, 16)
        """
        coords = np.column_stack([x, t]) * (self._res - 1)
        lo = np.clip(np.floor(coords).astype(np.int64), 0, self._res - 2)
        frac = coords - lo
        n = coords.shape[0]
        weights = np.ones((n, 16))
        if self.hashed:
            index = np.zeros((n, 16), dtype=np.uint64)
        else:
            index = np.zeros((n, 16), dtype=np.int64)
        for axis in range(4):
            bits = CORNER_BITS[:, axis]
            fa = frac[:, axis]
            weights *= np.column_stack([1.0 - fa, fa])[:, bits]
            ca = np.column_stack([lo[:, axis], lo[:, axis] + 1])[:, bits]
            if self.hashed:
                index ^= ca.astype(np.uint64) * HASH_PRIMES[axis]
            else:
                index += ca * self._strides[axis]
        if self.hashed:
            index = (index % np.uint64(self.table_size)).astype(np.int64)
        return index, weights

    def interpolate(self, index, weights):
        return np.einsum("nc,ncf->nf", weights, self.features[index])

    def scatter(self, index, weights, d_features, out):
        """
        :samp:`Add the gradient of interpolated features to out`

        :param d_features: gradient with respect to the interpolated features (N, F)
        :param out: gradient array with the shape of :attr:`features`
        """
        flat_index = index.ravel()
        for f in range(self.num_features):
            contrib = (weights * d_features[:, f:f + 1]).ravel()
            out[:, f] += np.bincount(flat_index, weights=contrib, minlength=out.shape[0])

    def copy(self):
        return Level4D(self.res_xyz, self.res_t, self.num_features, self.table_size, self.features.copy())


class Decoder(object):
    """
    :samp:`One hidden layer decoder`

    ``out = output_activation(hidden_activation(f W1 + b1) W2 + b2)``
    """
    def __init__(self, w1, b1, w2, b2, hidden_activation=Activation.shifted_softplus,
                 output_activation=Activation.softplus):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape != (self.b1.shape[0], self.b2.shape[0]):
            raise ValueError("Inconsistent decoder shapes: %s %s %s %s"
                             % (self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape))
        self.hidden_activation = Activation.value_for(hidden_activation)
        self.output_activation = Activation.value_for(output_activation)

    @staticmethod
    def create(input_dim, hidden_width, output_dim, rng, hidden_activation, output_activation, output_bias=0.0):
        limit1 = math.sqrt(6.0 / (input_dim + hidden_width))
        limit2 = math.sqrt(6.0 / (hidden_width + output_dim))
        return Decoder(rng.uniform(-limit1, limit1, (input_dim, hidden_width)), np.zeros(hidden_width),
                       rng.uniform(-limit2, limit2, (hidden_width, output_dim)), np.full(output_dim, output_bias),
                       hidden_activation, output_activation)

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def hidden_width(self):
        return self.w1.shape[1]

    @property
    def output_dim(self):
        return self.w2.shape[1]

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, f):
        z1 = f @ self.w1 + self.b1
        h = activate(self.hidden_activation, z1)
        z2 = h @ self.w2 + self.b2
        return activate(self.output_activation, z2), (f, z1, h, z2)

    def backward(self, cache, d_out, grads):
        """
        :samp:`Accumulate decoder gradients into grads (list of 4 arrays), return gradient to the input`
        """
        f, z1, h, z2 = cache
        dz2 = d_out * activate_derivative(self.output_activation, z2)
        dz1 = (dz2 @ self.w2.T) * activate_derivative(self.hidden_activation, z1)
        grads[0] += f.T @ dz1
        grads[1] += dz1.sum(axis=0)
        grads[2] += h.T @ dz2
        grads[3] += dz2.sum(axis=0)
        return dz1 @ self.w1.T

    def copy(self):
        return Decoder(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.hidden_activation,
                       self.output_activation)


class MultiResGrid4D(object):
    """
    :samp:`Multiresolution 4D feature grid with decoder`

    :param levels: list of :class:`Level4D`, coarse to fine
    :param decoder: :class:`Decoder` with input width ``F * len(levels)``
    :param str grad_key: key of this grid's buffer in :class:`Gradients`
    """
    def __init__(self, levels, decoder: Decoder, grad_key="density"):
        self.levels = list(levels)
        self.decoder = decoder
        self.grad_key = grad_key
        width = sum(level.num_features for level in self.levels)
        if width != decoder.input_dim:
            raise ValueError("Decoder expects %d inputs, levels provide %d" % (decoder.input_dim, width))

    @staticmethod
    def level_resolutions(para: GridParameters):
        """
        :samp:`Spatial and temporal resolution per level`

        :return: list of (res_xyz, res_t)
        """
        if para.finest_res < para.base_res:
            raise ValueError("Invalid value for grid.finest_res: smaller than grid.base_res")
        count = para.num_levels
        if count == 1:
            spatial = [para.base_res]
        else:
            growth = math.exp((math.log(para.finest_res) - math.log(para.base_res)) / (count - 1))
            spatial = [int(math.floor(para.base_res * growth ** level + 1e-6)) for level in range(count)]
        return [(res, max(2, min(res, para.finest_time_res))) for res in spatial]

    @staticmethod
    def create(para: GridParameters, output_dim, rng=None, grad_key=None):
        """
        :samp:`A new grid for density (output_dim 1) or velocity (output_dim 3)`

        Density features are uniform in ``[-init_scale, init_scale]`` and the output bias is
        ``para.density_bias``. Velocity features and biases are zero, so the velocity starts at zero everywhere.
        """
        rng = rng if rng is not None else np.random.default_rng(para.seed)
        is_density = output_dim == 1
        levels = []
        for res, res_t in MultiResGrid4D.level_resolutions(para):
            level = Level4D((res, res, res), res_t, para.features_per_level, para.hash_table_size)
            if is_density and para.init_scale > 0:
                level.features[...] = rng.uniform(-para.init_scale, para.init_scale, level.features.shape)
            levels.append(level)
        decoder = Decoder.create(para.features_per_level * len(levels), para.hidden_width, output_dim, rng,
                                 para.hidden_activation,
                                 Activation.softplus if is_density else Activation.identity,
                                 para.density_bias if is_density else 0.0)
        grad_key = grad_key if grad_key else ("density" if is_density else "velocity")
        grid = MultiResGrid4D(levels, decoder, grad_key)
        LOG.debug("Created %s grid: levels %s, %d parameters", grad_key,
                  [(l.res_xyz[0], l.res_t, l.table_size) for l in levels], grid.parameter_count())
        return grid

    @property
    def output_dim(self):
        return self.decoder.output_dim

    def parameters(self):
        return [level.features for level in self.levels] + self.decoder.parameters()

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        return GradBuffer.like(self.parameters())

    def default_steps(self):
        """
        :samp:`Stencil steps: half the finest spatial and temporal cell`
        """
        finest = self.levels[-1]
        return 0.5 / (max(finest.res_xyz) - 1), 0.5 / (finest.res_t - 1)

    def copy(self):
        return MultiResGrid4D([level.copy() for level in self.levels], self.decoder.copy(), self.grad_key)

    def encode(self, x, t):
        """
        :samp:`Concatenated interpolated features`

        :return: (features (N, F * levels), corners per level)
        """
        x, t = as_points(x, t)
        x = np.clip(x, 0.0, 1.0)
        t = np.clip(t, 0.0, 1.0)
        corners = [level.corners(x, t) for level in self.levels]
        feats = np.concatenate([level.interpolate(i, w) for level, (i, w) in zip(self.levels, corners)], axis=1)
        return feats, corners

    def query_with_cache(self, x, t):
        feats, corners = self.encode(x, t)
        out, decoder_cache = self.decoder.forward(feats)
        return out, (corners, decoder_cache)

    def query(self, x, t):
        """
        :samp:`Field value at space-time points`

        :param x: positions (N, 3) or (3,), clamped to the unit box
        :param t: times (N,) or scalar, clamped to [0, 1]
        :return: values (N, output_dim)
        :raises: :exc:`NonFiniteValueError` on non-finite input
        """
        return self.query_with_cache(x, t)[0]

    def backprop(self, cache, dL_dvalue, grad: GradBuffer):
        """
        :samp:`Chain rule through decoder and interpolation`

        :param cache: cache of the matching :func:`query_with_cache`
        :param dL_dvalue: gradient of the loss with respect to the values (N, output_dim)
        :param grad: buffer from :func:`zero_grad`, updated in place
        """
        corners, decoder_cache = cache
        dL_dvalue = np.asarray(dL_dvalue, dtype=np.float64).reshape(-1, self.output_dim)
        if not np.any(dL_dvalue):
            return
        n_levels = len(self.levels)
        d_feats = self.decoder.backward(decoder_cache, dL_dvalue, grad.arrays[n_levels:])
        offset = 0
        for level, (index, weights), out in zip(self.levels, corners, grad.arrays[:n_levels]):
            width = level.num_features
            level.scatter(index, weights, d_feats[:, offset:offset + width], out)
            offset += width

    def backprop_query(self, x, t, dL_dvalue, grad: GradBuffer):
        _, cache = self.query_with_cache(x, t)
        self.backprop(cache, dL_dvalue, grad)

    def query_partials(self, x, t, h=None, ht=None):
        """
        :samp:`Central difference partials (d/dx, d/dy, d/dz, d/dt) per output channel`

        :return: array (N, output_dim, 4)
        """
        return stencil_forward(self, x, t, h, ht)[0]

    # field protocol
    def forward(self, x, t):
        return self.query_with_cache(x, t)

    def backward(self, cache, dL_dvalue, grads: Gradients):
        buffer = grads.get(self.grad_key) if grads is not None else None
        if buffer is not None:
            self.backprop(cache, dL_dvalue, buffer)


def stencil_steps(field, h=None, ht=None):
    if h is None or ht is None:
        default = getattr(field, "default_steps", None)
        dh, dht = default() if default else (1e-3, 1e-3)
        h = dh if h is None else h
        ht = dht if ht is None else ht
    if not (h > 0 and ht > 0):
        raise ValueError("Stencil steps should be positive, got h=%s, ht=%s" % (h, ht))
    return h, ht


def stencil_forward(field, x, t, h=None, ht=None):
    """
    :samp:`Central difference partials of any field`

    :param field: object with the field protocol
    :param x: positions (N, 3)
    :param t: times (N,)
    :param float h: spatial step, the field's default if None
    :param float ht: temporal step, the field's default if None
    :return: (partials (N, output_dim, 4), cache for :func:`stencil_backward`)
    """
    x, t = as_points(x, t)
    h, ht = stencil_steps(field, h, ht)
    n = x.shape[0]
    xs, ts = [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            shifted = x.copy()
            shifted[:, axis] += sign * h
            xs.append(shifted)
            ts.append(t)
    for sign in (1.0, -1.0):
        xs.append(x)
        ts.append(t + sign * ht)
    values, cache = field.forward(np.concatenate(xs), np.concatenate(ts))
    values = values.reshape(8, n, -1)
    steps = np.array([h, h, h, ht])
    partials = np.stack([(values[2 * a] - values[2 * a + 1]) / (2.0 * steps[a]) for a in range(4)], axis=-1)
    return partials, (cache, n, steps)


def stencil_backward(field, stencil_cache, dL_dpartials, grads: Gradients):
    """
    :samp:`Backpropagate a loss on stencil partials to the field parameters`

    :param dL_dpartials: array (N, output_dim, 4)
    """
    cache, n, steps = stencil_cache
    d = np.zeros((8, n, dL_dpartials.shape[1]))
    for a in range(4):
        g = dL_dpartials[:, :, a] / (2.0 * steps[a])
        d[2 * a] = g
        d[2 * a + 1] = -g
    field.backward(cache, d.reshape(8 * n, -1), grads)


def velocity_jacobian(field, x, t, h=None, ht=None):
    """
    :samp:`Spatial velocity gradient J[n, i, a] = du_i / dx_a`
    """
    return stencil_forward(field, x, t, h, ht)[0][:, :, :3]


def curl_from_jacobian(jac):
    return np.column_stack([jac[:, 2, 1] - jac[:, 1, 2],
                            jac[:, 0, 2] - jac[:, 2, 0],
                            jac[:, 1, 0] - jac[:, 0, 1]])


def curl(field, x, t, h=None, ht=None):
    return curl_from_jacobian(velocity_jacobian(field, x, t, h, ht))


def face_points(resolution, axis):
    """
    :samp:`Centers of the faces normal to axis`

    :return: positions (M, 3) in C order of the face array
    """
    shape = MacGrid.face_shape(resolution, axis)
    h = 1.0 / (shape[0] - 1 if axis == 0 else shape[0])
    axes = []
    for a, n in enumerate(shape):
        offset = 0.0 if a == axis else 0.5
        axes.append((np.arange(n) + offset) * h)
    grid = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grid])


def sample_to_mac_forward(field, frame_time, resolution):
    """
    :samp:`Evaluate a velocity field at the face centers of a MAC grid`

    :return: (MacGrid, cache for :func:`sample_to_mac_backward`)
    """
    comps, caches = [], []
    for axis in range(3):
        points = face_points(resolution, axis)
        shape = MacGrid.face_shape(resolution, axis)
        values = np.empty(points.shape[0])
        chunks = []
        for start in range(0, points.shape[0], MAC_CHUNK):
            stop = min(points.shape[0], start + MAC_CHUNK)
            out, cache = field.forward(points[start:stop], np.full(stop - start, float(frame_time)))
            values[start:stop] = out[:, axis]
            chunks.append((start, stop, cache))
        comps.append(values.reshape(shape))
        caches.append(chunks)
    return MacGrid(*comps), caches


def sample_to_mac_backward(field, caches, dL_dmac: MacGrid, grads: Gradients):
    for axis, chunks in enumerate(caches):
        flat = dL_dmac.component(axis).ravel()
        for start, stop, cache in chunks:
            d = np.zeros((stop - start, 3))
            d[:, axis] = flat[start:stop]
            field.backward(cache, d, grads)


def sample_to_mac(field, frame_time, resolution) -> MacGrid:
    """
    :samp:`MAC grid velocity sampled from a continuous velocity field at one time`
    """
    return sample_to_mac_forward(field, frame_time, resolution)[0]
