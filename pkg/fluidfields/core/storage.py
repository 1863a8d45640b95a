#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Binary and text formats of grids, particles, checkpoints, images, cameras and sequences`

All binary formats are little-endian and start with a four byte magic:

 - ``GRD1`` grids: u32 kind (0 = cell scalar, 1 = MAC), u32 nx, ny, nz, u32 channels, f32 data. Cell data is one
   x-fastest plane per channel; MAC data is the u, v and w face arrays in turn, each x-fastest, and nx, ny, nz
   give the cell resolution.
 - ``VTX1`` vortex particles: u32 P, u32 num_frames, then per particle f32 intensity and per frame f32[3]
   position and f32[3] vorticity.
 - ``HYF1`` checkpoints of learned fields.
 - ``IMGF`` images: u32 H, W, C, then C planes of H x W f32.

Images are also read and written as 8-bit binary PPM (P6). Values are clipped to [0, 1] and rounded to 1/255.

Reading a malformed file raises :exc:`FormatError`.

"""
import json
import logging
import os
import struct

import numpy as np

from fluidfields.core.ff_enum import Activation
from fluidfields.core.ff_paras import VortexParameters
from fluidfields.core.field_grid import Level4D, Decoder, MultiResGrid4D
from fluidfields.core.fields import FluidFields
from fluidfields.core.fluid_sim import Sequence
from fluidfields.core.pressure_projection import MacGrid
from fluidfields.core.volume_renderer import Camera, Radiance
from fluidfields.core.vortex_particles import VortexParticleSet
from fluidfields.util.defaults import numbered_filename

LOG = logging.getLogger(__name__)

GRID_MAGIC = b"GRD1"
PARTICLE_MAGIC = b"VTX1"
CHECKPOINT_MAGIC = b"HYF1"
IMAGE_MAGIC = b"IMGF"
CHECKPOINT_VERSION = 1

KIND_CELL = 0
KIND_MAC = 1

DENSITY_MANIFEST = "density.txt"
VELOCITY_MANIFEST = "velocity.txt"


class FormatError(ValueError):
    pass


class _Reader(object):
    """Sequential reader over the bytes of a file."""

    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, count):
        if self.offset + count > len(self.data):
            raise FormatError("Unexpected end of file: %s" % self.path)
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def magic(self, expected):
        found = self.take(4)
        if found != expected:
            raise FormatError("Not a %s file: %s (magic %r)" % (expected.decode(), self.path, found))

    def u32(self, count=1):
        values = struct.unpack("<%dI" % count, self.take(4 * count))
        return values[0] if count == 1 else values

    def f32(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)

    def finish(self):
        if self.offset != len(self.data):
            raise FormatError("%d trailing bytes in %s" % (len(self.data) - self.offset, self.path))


def _read_bytes(path):
    with open(path, "rb") as file:
        return file.read()


def _u32(*values):
    return struct.pack("<%dI" % len(values), *values)


def _f32(array):
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def _x_fastest(array):
    return np.asarray(array, dtype=np.float64).transpose(2, 1, 0)


def _from_x_fastest(flat, nx, ny, nz):
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0).copy()


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# grids
def write_grid(path, values):
    """
    :samp:`Write a cell grid (nx, ny, nz) or a multichannel cell grid (nx, ny, nz, C)`
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        values = values[..., None]
    if values.ndim != 4:
        raise ValueError("Invalid grid shape %s" % (values.shape,))
    nx, ny, nz, channels = values.shape
    _ensure_parent(path)
    with open(path, "wb") as file:
        file.write(GRID_MAGIC + _u32(KIND_CELL, nx, ny, nz, channels))
        for c in range(channels):
            file.write(_f32(_x_fastest(values[..., c])))


def write_mac(path, vel: MacGrid):
    nx, ny, nz = vel.resolution
    _ensure_parent(path)
    with open(path, "wb") as file:
        file.write(GRID_MAGIC + _u32(KIND_MAC, nx, ny, nz, 3))
        for comp in vel.components():
            file.write(_f32(_x_fastest(comp)))


def _read_grid_any(path):
    reader = _Reader(_read_bytes(path), path)
    reader.magic(GRID_MAGIC)
    kind, nx, ny, nz, channels = reader.u32(5)
    if kind == KIND_CELL:
        planes = [_from_x_fastest(reader.f32((nx * ny * nz,)), nx, ny, nz) for _ in range(channels)]
        reader.finish()
        return kind, planes[0] if channels == 1 else np.stack(planes, axis=-1)
    if kind == KIND_MAC:
        if channels != 3:
            raise FormatError("MAC grid with %d channels in %s" % (channels, path))
        comps = []
        for axis in range(3):
            shape = MacGrid.face_shape((nx, ny, nz), axis)
            comps.append(_from_x_fastest(reader.f32((int(np.prod(shape)),)), *shape))
        reader.finish()
        return kind, MacGrid(*comps)
    raise FormatError("Unknown grid kind %d in %s" % (kind, path))


def read_grid(path):
    """
    :samp:`Read a cell grid`

    :return: array (nx, ny, nz) for one channel, (nx, ny, nz, C) otherwise
    :raises: :exc:`FormatError` if the file is not a cell grid
    """
    kind, values = _read_grid_any(path)
    if kind != KIND_CELL:
        raise FormatError("Expected a cell grid, found a MAC grid: %s" % path)
    return values


def read_mac(path) -> MacGrid:
    kind, values = _read_grid_any(path)
    if kind != KIND_MAC:
        raise FormatError("Expected a MAC grid, found a cell grid: %s" % path)
    return values


# particles
def write_particles(path, particles: VortexParticleSet):
    """
    :samp:`Write particle intensities and trajectories`

    :raises: :exc:`ValueError` if the trajectories have not been computed
    """
    if not particles.has_trajectories:
        raise ValueError("Particle trajectories have not been computed")
    _ensure_parent(path)
    with open(path, "wb") as file:
        file.write(PARTICLE_MAGIC + _u32(particles.num_particles, particles.num_frames))
        for p in range(particles.num_particles):
            file.write(_f32([particles.intensities[p]]))
            file.write(_f32(np.concatenate([particles.positions[p], particles.vorticity[p]], axis=1)))


def read_particles(path, para: VortexParameters=None) -> VortexParticleSet:
    """
    :samp:`Read particles written by` :func:`write_particles`

    Kernel radius and epsilon are not stored; they come from para.
    """
    reader = _Reader(_read_bytes(path), path)
    reader.magic(PARTICLE_MAGIC)
    count, frames = reader.u32(2)
    if frames < 1:
        raise FormatError("Particle file without frames: %s" % path)
    intensities = np.empty(count)
    positions = np.empty((count, frames, 3))
    vorticity = np.empty((count, frames, 3))
    for p in range(count):
        intensities[p] = reader.f32((1,))[0]
        states = reader.f32((frames, 6))
        positions[p] = states[:, :3]
        vorticity[p] = states[:, 3:]
    reader.finish()
    return VortexParticleSet.from_trajectories(positions, vorticity, intensities, para)


# checkpoints
def _grid_bytes(grid: MultiResGrid4D):
    decoder = grid.decoder
    parts = [_u32(len(grid.levels))]
    for level in grid.levels:
        parts.append(_u32(*(level.res_xyz + (level.res_t, level.table_size, level.num_features))))
    parts.append(_u32(decoder.hidden_width, decoder.output_dim, decoder.hidden_activation.value,
                      decoder.output_activation.value))
    for level in grid.levels:
        parts.append(_f32(level.features))
    for p in decoder.parameters():
        parts.append(_f32(p))
    return b"".join(parts)


def _read_grid_block(reader: _Reader, grad_key):
    num_levels = reader.u32()
    if num_levels < 1:
        raise FormatError("Grid without levels in %s" % reader.path)
    headers = [reader.u32(6) for _ in range(num_levels)]
    hidden_width, output_dim, hidden_code, output_code = reader.u32(4)
    levels = []
    for rx, ry, rz, rt, table_size, features in headers:
        size = table_size if table_size else rx * ry * rz * rt
        levels.append(Level4D((rx, ry, rz), rt, features, table_size, reader.f32((size, features))))
    input_dim = sum(level.num_features for level in levels)
    try:
        decoder = Decoder(reader.f32((input_dim, hidden_width)), reader.f32((hidden_width,)),
                          reader.f32((hidden_width, output_dim)), reader.f32((output_dim,)),
                          Activation.value_for(hidden_code), Activation.value_for(output_code))
        return MultiResGrid4D(levels, decoder, grad_key)
    except ValueError as err:
        raise FormatError("Invalid grid in %s: %s" % (reader.path, err))


def write_checkpoint(path, fields: FluidFields):
    """
    :samp:`Write density, base velocity if present, and radiance as a HYF1 checkpoint`

    Radiance is always stored as three values; a grayscale radiance is replicated.
    """
    grids = [fields.density] + ([fields.velocity] if fields.velocity is not None else [])
    _ensure_parent(path)
    with open(path, "wb") as file:
        file.write(CHECKPOINT_MAGIC + _u32(CHECKPOINT_VERSION, len(grids)))
        for grid in grids:
            file.write(_grid_bytes(grid))
        file.write(_f32(fields.radiance.rgb()))
    LOG.debug("Wrote checkpoint %s with %d grids", path, len(grids))


def read_checkpoint(path, rgb=None) -> FluidFields:
    """
    :samp:`Read a HYF1 checkpoint`

    :param rgb: True for a three channel radiance, False for one channel; if None the radiance is grayscale when
        its three stored values are equal
    :return: :class:`~fluidfields.core.fields.FluidFields` without particles
    """
    reader = _Reader(_read_bytes(path), path)
    reader.magic(CHECKPOINT_MAGIC)
    version, count = reader.u32(2)
    if version != CHECKPOINT_VERSION:
        raise FormatError("Unsupported checkpoint version %d in %s" % (version, path))
    if count not in (1, 2):
        raise FormatError("Invalid grid count %d in %s" % (count, path))
    density = _read_grid_block(reader, "density")
    velocity = _read_grid_block(reader, "velocity") if count == 2 else None
    values = reader.f32((3,))
    reader.finish()
    if rgb is None:
        rgb = not (values[0] == values[1] == values[2])
    radiance = Radiance(values if rgb else values[:1])
    return FluidFields(density, velocity, radiance)


# images
def _as_hwc(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if image.ndim != 3:
        raise ValueError("Invalid image shape %s" % (image.shape,))
    return image


def write_imgf(path, image):
    image = _as_hwc(image)
    h, w, c = image.shape
    _ensure_parent(path)
    with open(path, "wb") as file:
        file.write(IMAGE_MAGIC + _u32(h, w, c))
        for channel in range(c):
            file.write(_f32(image[..., channel]))


def read_imgf(path):
    """
    :return: array (H, W, C)
    """
    reader = _Reader(_read_bytes(path), path)
    reader.magic(IMAGE_MAGIC)
    h, w, c = reader.u32(3)
    planes = [reader.f32((h, w)) for _ in range(c)]
    reader.finish()
    return np.stack(planes, axis=-1)


def to_bytes8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image):
    """
    :samp:`Write an image as 8-bit P6; one channel images are written as gray`
    """
    image = _as_hwc(image)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    elif image.shape[2] != 3:
        raise ValueError("PPM images have 1 or 3 channels, got %d" % image.shape[2])
    h, w, _ = image.shape
    _ensure_parent(path)
    with open(path, "wb") as file:
        file.write(b"P6\n%d %d\n255\n" % (w, h))
        file.write(to_bytes8(image).tobytes())


def _ppm_tokens(data, count, path):
    tokens, i = [], 2
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("Truncated PPM header: %s" % path)
        tokens.append(data[start:i])
    return tokens, i + 1


def read_ppm(path):
    """
    :samp:`Read an 8-bit P6 image`

    :return: array (H, W, 3) in [0, 1]
    """
    data = _read_bytes(path)
    if data[:2] != b"P6":
        raise FormatError("Not a binary PPM file: %s" % path)
    tokens, offset = _ppm_tokens(data, 3, path)
    try:
        w, h, maxval = (int(token) for token in tokens)
    except ValueError:
        raise FormatError("Invalid PPM header: %s" % path)
    if maxval != 255:
        raise FormatError("Only 8-bit PPM files are supported, maxval %d in %s" % (maxval, path))
    pixels = data[offset:offset + w * h * 3]
    if len(pixels) != w * h * 3:
        raise FormatError("Truncated PPM data: %s" % path)
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def read_image(path):
    """
    :samp:`Read a PPM or IMGF image, chosen by the magic of the file`

    :return: array (H, W, C)
    """
    with open(path, "rb") as file:
        magic = file.read(4)
    if magic == IMAGE_MAGIC:
        return read_imgf(path)
    if magic[:2] == b"P6":
        return read_ppm(path)
    raise FormatError("Unknown image format: %s" % path)


def write_image(path, image):
    if path.lower().endswith(".ppm"):
        write_ppm(path, image)
    else:
        write_imgf(path, image)


# cameras
def write_cameras(path, cameras):
    _ensure_parent(path)
    with open(path, "w") as file:
        json.dump({"cameras": [camera.to_dict() for camera in cameras]}, file, indent=2)


def read_cameras(path):
    """
    :samp:`Read cameras from JSON, either a list or an object with key` ``cameras``
    """
    with open(path, "r") as file:
        try:
            data = json.load(file)
        except json.JSONDecodeError as err:
            raise FormatError("Invalid camera file %s: %s" % (path, err))
    if isinstance(data, dict):
        data = data.get("cameras", [data])
    return [Camera.from_dict(d) for d in data]


# sequences
def write_manifest(path, files, dt):
    """
    :samp:`Write a sequence manifest: a` ``dt = value`` :samp:`line, then one relative path per line`
    """
    base = os.path.dirname(os.path.abspath(path))
    _ensure_parent(path)
    with open(path, "w") as file:
        file.write("dt = %r\n" % float(dt))
        for f in files:
            file.write(os.path.relpath(os.path.abspath(f), base).replace(os.sep, "/") + "\n")


def read_manifest(path):
    """
    :return: (dt, list of absolute paths)
    :raises: :exc:`FormatError` if the header is missing or a listed file does not exist
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r") as file:
        lines = [line.strip() for line in file if line.strip() and not line.strip().startswith("#")]
    if not lines:
        raise FormatError("Empty manifest: %s" % path)
    key, _, value = lines[0].partition("=")
    if key.strip() != "dt" or not value:
        raise FormatError("Manifest should start with 'dt = <value>': %s" % path)
    try:
        dt = float(value)
    except ValueError:
        raise FormatError("Invalid frame interval '%s' in %s" % (value.strip(), path))
    files = [os.path.join(base, *line.split("/")) for line in lines[1:]]
    missing = [f for f in files if not os.path.isfile(f)]
    if missing:
        raise FormatError("Files listed in %s do not exist: %s" % (path, ", ".join(missing[:3])))
    return dt, files


def write_sequence(directory, sequence: Sequence):
    """
    :samp:`Write numbered density grids, velocity grids if present, and their manifests`

    :return: path of the density manifest
    """
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, density in enumerate(sequence.densities):
        files.append(os.path.join(directory, numbered_filename("density", i, ".grd")))
        write_grid(files[-1], density)
    manifest = os.path.join(directory, DENSITY_MANIFEST)
    write_manifest(manifest, files, sequence.dt)
    if sequence.velocities is not None:
        files = []
        for i, vel in enumerate(sequence.velocities):
            files.append(os.path.join(directory, numbered_filename("velocity", i, ".grd")))
            write_mac(files[-1], vel)
        write_manifest(os.path.join(directory, VELOCITY_MANIFEST), files, sequence.dt)
    LOG.info("Wrote %d frames to %s", len(sequence), directory)
    return manifest


def read_sequence(directory) -> Sequence:
    dt, files = read_manifest(os.path.join(directory, DENSITY_MANIFEST))
    densities = [read_grid(f) for f in files]
    velocities = None
    velocity_manifest = os.path.join(directory, VELOCITY_MANIFEST)
    if os.path.isfile(velocity_manifest):
        _, files = read_manifest(velocity_manifest)
        velocities = [read_mac(f) for f in files]
    return Sequence(densities, velocities, dt)


# resume state
def save_state(path, arrays):
    """
    :samp:`Write full precision arrays to an npz file, atomically`
    """
    _ensure_parent(path)
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_state(path):
    with np.load(path, allow_pickle=False) as data:
        return {key: data[key] for key in data.files}
