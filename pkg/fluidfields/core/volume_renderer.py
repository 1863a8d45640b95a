#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Pinhole cameras, ray sampling and emission-absorption rendering`

Cameras follow the OpenCV convention: in camera space x points right, y points down (along pixel rows) and the
camera looks along +z. The rotation of a :class:`Camera` maps camera to world coordinates and the translation is
the camera center. World up is +y.

Along a ray the density is integrated with ``N`` samples, one per bin of the segment between near and far
(clipped to the unit box). With optical depth ``tau_i = sigma_i * delta_i`` and ``delta_i`` the bin width::

    T_i = exp(-(tau_0 + ... + tau_(i-1)))
    w_i = T_i * (1 - exp(-tau_i))
    color = sum(w_i) * L_e        alpha = sum(w_i)

The emitted radiance ``L_e`` is constant: one value (grayscale) or three (RGB). The background is black.

"""
import logging
from collections import namedtuple

import numpy as np
from scipy.ndimage import map_coordinates

from fluidfields.core.ff_paras import RenderParameters
from fluidfields.core.field_grid import Gradients, NonFiniteValueError
from fluidfields.util.defaults import chunk_slices, parallel_map

LOG = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-6
BOX_TOLERANCE = 1e-9
WORLD_UP = np.array([0.0, 1.0, 0.0])

Ray = namedtuple("Ray", "origin direction time pixel near far")


class Camera(object):
    """
    :samp:`Pinhole camera`

    :param float fx: focal length in pixels along x
    :param float fy: focal length in pixels along y
    :param float cx: principal point x in pixels
    :param float cy: principal point y in pixels
    :param int width: image width in pixels
    :param int height: image height in pixels
    :param rotation: world-from-camera rotation 3x3
    :param translation: camera center in world coordinates
    :param float near: near distance along rays
    :param float far: far distance along rays
    :param str name: camera name
    :raises: :exc:`ValueError` if the rotation is not orthonormal, near is not below far or a focal length is not
        positive
    """
    def __init__(self, fx, fy, cx, cy, width, height, rotation, translation, near, far, name=""):
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)
        self.near = float(near)
        self.far = float(far)
        self.name = name
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("Invalid camera %s: focal lengths should be positive, got %g, %g"
                             % (name, self.fx, self.fy))
        if self.width < 1 or self.height < 1:
            raise ValueError("Invalid camera %s: image size %d x %d" % (name, self.width, self.height))
        if not self.near < self.far:
            raise ValueError("Invalid camera %s: near %g should be below far %g" % (name, self.near, self.far))
        deviation = np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3)))
        if not deviation < ORTHONORMAL_TOLERANCE:
            raise ValueError("Invalid camera %s: rotation not orthonormal (deviation %g)" % (name, deviation))

    @staticmethod
    def look_at(eye, target, width, height, focal, near, far, name=""):
        """
        :samp:`Camera at eye looking at target, principal point at the image center`
        """
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, WORLD_UP)
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("Invalid camera %s: looking along the up axis" % name)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.column_stack([right, down, forward])
        return Camera(focal, focal, width / 2.0, height / 2.0, width, height, rotation, eye, near, far, name)

    @property
    def position(self):
        return self.translation

    @property
    def forward(self):
        return self.rotation[:, 2]

    def pixel_directions(self, px, py):
        """
        :samp:`Unit world directions through continuous pixel coordinates`

        Pixel ``(0, 0)`` is the top left corner of the image; pixel centers are at half-integers.
        """
        px = np.asarray(px, dtype=np.float64).reshape(-1)
        py = np.asarray(py, dtype=np.float64).reshape(-1)
        local = np.column_stack([(px - self.cx) / self.fx, (py - self.cy) / self.fy, np.ones_like(px)])
        dirs = local @ self.rotation.T
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def to_dict(self):
        return {"name": self.name, "width": self.width, "height": self.height,
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "near": self.near, "far": self.far}

    @staticmethod
    def from_dict(d):
        try:
            return Camera(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"], d["rotation"],
                          d["translation"], d["near"], d["far"], d.get("name", ""))
        except KeyError as err:
            raise ValueError("Invalid camera description: missing %s" % err)

    def __repr__(self):
        return "Camera(%s, %dx%d, at %s)" % (self.name, self.width, self.height, self.translation.tolist())


class RayBatch(object):
    """
    :samp:`Rays with origins, unit directions, times, pixel coordinates and near/far distances`

    Iterating a batch yields :class:`Ray` tuples.
    """
    def __init__(self, origins, directions, times, pixels=None, near=0.0, far=10.0):
        self.origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        n = self.origins.shape[0]
        if self.origins.shape != (n, 3) or dirs.shape != (n, 3):
            raise ValueError("Ray origins and directions should have shape (N, 3), got %s and %s"
                             % (self.origins.shape, dirs.shape))
        lengths = np.linalg.norm(dirs, axis=1, keepdims=True)
        if np.any(lengths == 0.0):
            raise ValueError("Ray direction of length zero")
        self.directions = dirs / lengths
        self.times = np.broadcast_to(np.asarray(times, dtype=np.float64), (n,)).copy()
        self.pixels = (np.full((n, 2), np.nan) if pixels is None
                       else np.asarray(pixels, dtype=np.float64).reshape(n, 2))
        self.near = np.broadcast_to(np.asarray(near, dtype=np.float64), (n,)).copy()
        self.far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n,)).copy()

    @staticmethod
    def from_rays(rays):
        rays = list(rays)
        return RayBatch([r.origin for r in rays], [r.direction for r in rays], [r.time for r in rays],
                        [r.pixel for r in rays], [r.near for r in rays], [r.far for r in rays])

    @staticmethod
    def concatenate(batches):
        batches = list(batches)
        return RayBatch(np.concatenate([b.origins for b in batches]),
                        np.concatenate([b.directions for b in batches]),
                        np.concatenate([b.times for b in batches]),
                        np.concatenate([b.pixels for b in batches]),
                        np.concatenate([b.near for b in batches]),
                        np.concatenate([b.far for b in batches]))

    def __len__(self):
        return self.origins.shape[0]

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            return Ray(self.origins[item], self.directions[item], self.times[item], self.pixels[item],
                       self.near[item], self.far[item])
        return RayBatch(self.origins[item], self.directions[item], self.times[item], self.pixels[item],
                        self.near[item], self.far[item])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def camera_rays(camera: Camera, frame_time, px, py) -> RayBatch:
    px = np.asarray(px, dtype=np.float64).reshape(-1)
    py = np.asarray(py, dtype=np.float64).reshape(-1)
    n = px.shape[0]
    return RayBatch(np.tile(camera.position, (n, 1)), camera.pixel_directions(px, py), frame_time,
                    np.column_stack([px, py]), camera.near, camera.far)


def generate_rays(camera: Camera, frame_time, batch_size, rng) -> RayBatch:
    """
    :samp:`Rays through uniformly random continuous pixel coordinates`

    :param camera: the camera
    :param float frame_time: normalized time of the frame
    :param int batch_size: number of rays
    :param rng: :class:`numpy.random.Generator`
    :return: :class:`RayBatch`
    """
    if batch_size < 1:
        raise ValueError("Invalid value for batch_size: should be positive, got %s" % batch_size)
    px = rng.uniform(0.0, camera.width, batch_size)
    py = rng.uniform(0.0, camera.height, batch_size)
    return camera_rays(camera, frame_time, px, py)


def pixel_center_rays(camera: Camera, frame_time, supersample=1) -> RayBatch:
    """
    :samp:`Rays through pixel centers, or through a regular sub-pixel pattern`

    Rays are ordered row by row; with supersampling the ``s * s`` rays of one pixel are consecutive.
    """
    s = int(supersample)
    offsets = (np.arange(s) + 0.5) / s
    cols = np.arange(camera.width)
    rows = np.arange(camera.height)
    py = (rows[:, None, None, None] + offsets[None, None, :, None]) * np.ones((1, camera.width, s, s))
    px = (cols[None, :, None, None] + offsets[None, None, None, :]) * np.ones((camera.height, 1, s, s))
    return camera_rays(camera, frame_time, px.ravel(), py.ravel())


def clip_to_box(origins, directions, near, far):
    """
    :samp:`Intersect the segments [near, far] with the unit box`

    :return: (t_near, t_far); rays that miss the box have t_far <= t_near
    """
    parallel = directions == 0.0
    safe = np.where(parallel, 1.0, directions)
    t0 = -origins / safe
    t1 = (1.0 - origins) / safe
    lo = np.where(parallel, -np.inf, np.minimum(t0, t1))
    hi = np.where(parallel, np.inf, np.maximum(t0, t1))
    outside = parallel & ((origins < 0.0) | (origins > 1.0))
    t_near = np.maximum(near, lo.max(axis=1))
    t_far = np.minimum(far, hi.min(axis=1))
    t_far = np.where(outside.any(axis=1), t_near, t_far)
    return t_near, t_far


class Radiance(object):
    """
    :samp:`Constant emitted radiance of the smoke`

    One value for grayscale smoke, replicated to RGB, or three values.
    """
    def __init__(self, values=(1.0,)):
        self.values = np.array(values, dtype=np.float64).reshape(-1)
        if self.values.shape[0] not in (1, 3):
            raise ValueError("Radiance should have 1 or 3 channels, got %d" % self.values.shape[0])

    @staticmethod
    def create(rgb=False, init=1.0):
        return Radiance([init] * (3 if rgb else 1))

    @property
    def channels(self):
        return self.values.shape[0]

    def parameters(self):
        return [self.values]

    def rgb(self):
        return np.broadcast_to(self.values, (3,)).copy()

    def copy(self):
        return Radiance(self.values.copy())

    def __repr__(self):
        return "Radiance(%s)" % self.values.tolist()


class RenderResult(object):
    """
    :samp:`Rendered colors and opacities of a batch of rays`

    ``color`` has one column per radiance channel. ``cache`` is only present when rendered for backpropagation.
    """
    def __init__(self, color, alpha, transmittance, cache=None):
        self.color = color
        self.alpha = alpha
        self.transmittance = transmittance
        self.cache = cache


def _sample_distances(rays: RayBatch, para: RenderParameters, rng):
    if para.clip_to_box:
        t_near, t_far = clip_to_box(rays.origins, rays.directions, rays.near, rays.far)
    else:
        t_near, t_far = rays.near, rays.far
    length = np.maximum(t_far - t_near, 0.0)
    n_s = para.samples_per_ray
    if para.stratified and rng is not None:
        u = rng.uniform(0.0, 1.0, (len(rays), n_s))
    else:
        u = np.full((len(rays), n_s), 0.5)
    t = t_near[:, None] + (np.arange(n_s)[None, :] + u) / n_s * length[:, None]
    delta = np.repeat((length / n_s)[:, None], n_s, axis=1)
    return t, delta


def render_rays(rays: RayBatch, density_field, radiance: Radiance, para: RenderParameters=None, rng=None,
                keep_cache=False) -> RenderResult:
    """
    :samp:`Render a batch of rays`

    :param rays: the rays
    :param density_field: object with the field protocol and output dimension 1
    :param radiance: emitted radiance
    :param para: render parameters
    :param rng: generator for stratified jitter; bin midpoints if None
    :param bool keep_cache: keep what :func:`render_backward` needs
    :return: :class:`RenderResult`
    :raises: :exc:`~fluidfields.core.field_grid.NonFiniteValueError` if the density is not finite
    """
    para = para if para else RenderParameters()
    n, n_s = len(rays), para.samples_per_ray
    t, delta = _sample_distances(rays, para, rng)
    points = (rays.origins[:, None, :] + t[:, :, None] * rays.directions[:, None, :]).reshape(-1, 3)
    times = np.repeat(rays.times, n_s)
    inside = np.all((points >= -BOX_TOLERANCE) & (points <= 1.0 + BOX_TOLERANCE), axis=1).reshape(n, n_s)
    inside &= delta > 0.0
    sigma, field_cache = density_field.forward(points, times)
    sigma = sigma.reshape(n, n_s)
    if not np.all(np.isfinite(sigma)):
        raise NonFiniteValueError("Non-finite density in rendering")
    tau = np.where(inside, sigma, 0.0) * delta
    depth = np.cumsum(tau, axis=1)
    transmittance = np.exp(-depth[:, -1])
    alpha = -np.expm1(-depth[:, -1])
    color = alpha[:, None] * radiance.values[None, :]
    cache = (field_cache, inside, delta, transmittance, alpha) if keep_cache else None
    return RenderResult(color, alpha, transmittance, cache)


def sample_weights(rays: RayBatch, density_field, para: RenderParameters=None):
    """
    :samp:`Quadrature weights w_i per ray and sample, at bin midpoints`

    :return: array (N, samples_per_ray)
    """
    para = para if para else RenderParameters()
    n, n_s = len(rays), para.samples_per_ray
    t, delta = _sample_distances(rays, para, None)
    points = (rays.origins[:, None, :] + t[:, :, None] * rays.directions[:, None, :]).reshape(-1, 3)
    inside = np.all((points >= -BOX_TOLERANCE) & (points <= 1.0 + BOX_TOLERANCE), axis=1).reshape(n, n_s)
    sigma = density_field.forward(points, np.repeat(rays.times, n_s))[0].reshape(n, n_s)
    tau = np.where(inside, sigma, 0.0) * delta
    before = np.cumsum(tau, axis=1) - tau
    return np.exp(-before) * -np.expm1(-tau)


def render_backward(result: RenderResult, dL_dcolor, density_field, radiance: Radiance, grads: Gradients):
    """
    :samp:`Backpropagate a loss on rendered colors`

    The rendered color depends on the densities only through the total optical depth, so
    ``d color / d sigma_k = delta_k * L_e * T_end``.

    :return: gradient with respect to the radiance values
    """
    field_cache, inside, delta, transmittance, alpha = result.cache
    d_alpha = dL_dcolor @ radiance.values
    d_sigma = np.where(inside, (d_alpha * transmittance)[:, None] * delta, 0.0)
    density_field.backward(field_cache, d_sigma.reshape(-1, 1), grads)
    return dL_dcolor.T @ alpha


def render_ray(ray: Ray, density_field, radiance: Radiance, para: RenderParameters=None, rng=None):
    """
    :samp:`Render one ray`

    :return: (color per channel, alpha, :class:`RenderResult` with cache)
    """
    result = render_rays(RayBatch.from_rays([ray]), density_field, radiance, para, rng, keep_cache=True)
    return result.color[0], float(result.alpha[0]), result


def observed_channels(observed, channels):
    """
    :samp:`Observed colors as the channels of the radiance: grayscale is the mean of RGB`
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim == 1:
        observed = observed[:, None]
    if observed.shape[1] == channels:
        return observed
    if channels == 1 and observed.shape[1] == 3:
        return observed.mean(axis=1, keepdims=True)
    raise ValueError("Observed colors have %d channels, radiance has %d" % (observed.shape[1], channels))


class RenderingLoss(object):
    """
    :samp:`Value of the rendering loss and its gradient with respect to the radiance`
    """
    def __init__(self, loss, color, alpha, d_radiance):
        self.loss = loss
        self.color = color
        self.alpha = alpha
        self.d_radiance = d_radiance

    def __float__(self):
        return float(self.loss)


def rendering_loss(rays: RayBatch, observed, density_field, radiance: Radiance, para: RenderParameters=None,
                   grads: Gradients=None, rng=None, weight=1.0) -> RenderingLoss:
    """
    :samp:`Mean squared error between rendered and observed colors`

    The mean runs over rays and channels. When grads is given, ``weight`` times the gradient is accumulated into
    its ``density`` buffer (through the density field) and its ``radiance`` buffer. Rays are processed in chunks
    of ``para.chunk_rays`` on the worker threads; chunk gradients are added in chunk order.

    :param rays: the rays
    :param observed: observed colors (N, 3) or (N, channels), in [0, 1]
    :param density_field: object with the field protocol
    :param radiance: emitted radiance
    :param para: render parameters
    :param grads: gradient buffers or None for the loss only
    :param rng: generator for stratified jitter
    :param float weight: loss weight applied to the accumulated gradients
    :return: :class:`RenderingLoss` (unweighted loss)
    :raises: :exc:`ValueError` on a shape mismatch
    """
    para = para if para else RenderParameters()
    observed = observed_channels(observed, radiance.channels)
    n = len(rays)
    if observed.shape[0] != n:
        raise ValueError("Got %d rays and %d observations" % (n, observed.shape[0]))
    if n == 0:
        raise ValueError("Rendering loss of an empty ray batch")
    count = n * radiance.channels
    slices = chunk_slices(n, para.chunk_rays)
    chunk_rngs = [None] * len(slices)
    if rng is not None:
        chunk_rngs = [np.random.default_rng(seed) for seed in rng.integers(0, 2 ** 62, len(slices))]

    def work(item):
        sl, chunk_rng = item
        local = grads.zeros_like() if grads is not None else None
        result = render_rays(rays[sl], density_field, radiance, para, chunk_rng, keep_cache=local is not None)
        residual = result.color - observed[sl]
        d_radiance = np.zeros(radiance.channels)
        if local is not None:
            d_color = 2.0 * weight * residual / count
            d_radiance = render_backward(result, d_color, density_field, radiance, local)
        return float(np.sum(residual ** 2)), result.color, result.alpha, d_radiance, local

    outputs = parallel_map(work, zip(slices, chunk_rngs))
    total = 0.0
    d_radiance = np.zeros(radiance.channels)
    for sq, _, _, d_rad, local in outputs:
        total += sq
        d_radiance += d_rad
        if local is not None:
            grads.add(local)
    if grads is not None and grads.get("radiance") is not None:
        grads.get("radiance").arrays[0] += d_radiance
    color = np.concatenate([o[1] for o in outputs])
    alpha = np.concatenate([o[2] for o in outputs])
    return RenderingLoss(total / count, color, alpha, d_radiance)


def render_image(camera: Camera, frame_time, density_field, radiance: Radiance=None, para: RenderParameters=None,
                 supersample=None):
    """
    :samp:`Render an image through pixel centers`

    :param camera: the camera
    :param float frame_time: normalized time
    :param density_field: object with the field protocol
    :param radiance: emitted radiance, 1 if None
    :param para: render parameters; rays go through bin midpoints regardless of ``stratified``
    :param int supersample: sub-pixel rays per axis, ``para.supersample`` if None
    :return: float image (H, W, 3)
    """
    para = para if para else RenderParameters()
    radiance = radiance if radiance is not None else Radiance()
    s = int(supersample or para.supersample)
    rays = pixel_center_rays(camera, frame_time, s)

    def work(sl):
        return render_rays(rays[sl], density_field, radiance, para, None).color

    color = np.concatenate(parallel_map(work, chunk_slices(len(rays), para.chunk_rays)))
    color = color.reshape(camera.height, camera.width, s * s, radiance.channels).mean(axis=2)
    return np.broadcast_to(color, (camera.height, camera.width, 3)).copy()


def sample_image(image, px, py):
    """
    :samp:`Bilinear lookup of an image at continuous pixel coordinates`

    :param image: array (H, W) or (H, W, C)
    :param px: x coordinates, pixel centers at half-integers
    :param py: y coordinates
    :return: values (N, C)
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    coords = np.vstack([np.asarray(py, dtype=np.float64).ravel() - 0.5,
                        np.asarray(px, dtype=np.float64).ravel() - 0.5])
    return np.column_stack([map_coordinates(image[:, :, c], coords, order=1, mode="nearest")
                            for c in range(image.shape[2])])
