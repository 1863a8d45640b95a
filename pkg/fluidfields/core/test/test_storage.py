#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import os
import struct
import tempfile
import unittest

import numpy as np

from fluidfields.core.ff_paras import RunParameters
from fluidfields.core.fields import FluidFields
from fluidfields.core.fluid_sim import Sequence
from fluidfields.core.pressure_projection import MacGrid
from fluidfields.core.storage import FormatError, write_grid, read_grid, write_mac, read_mac, write_particles, \
    read_particles, write_checkpoint, read_checkpoint, write_imgf, read_imgf, write_ppm, read_ppm, read_image, \
    write_image, write_cameras, read_cameras, write_manifest, read_manifest, write_sequence, read_sequence, \
    save_state, load_state
from fluidfields.core.volume_renderer import Camera
from fluidfields.core.vortex_particles import VortexParticleSet


def as_f32(values):
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def small_fields(rgb=False):
    paras = RunParameters()
    paras.set("grid.num_levels", 2)
    paras.set("grid.base_res", 4)
    paras.set("grid.finest_res", 8)
    paras.set("grid.finest_time_res", 4)
    paras.set("grid.hidden_width", 8)
    paras.set("grid.hash_table_size", 100)
    paras.set("render.rgb", rgb)
    return FluidFields.create(paras)


class TestGrids(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_cell_layout_is_x_fastest(self):
        values = np.array([[[1.0], [3.0]], [[2.0], [4.0]]])
        write_grid(self.path("a.grd"), values)
        with open(self.path("a.grd"), "rb") as file:
            data = file.read()
        self.assertEqual(b"GRD1" + struct.pack("<5I", 0, 2, 2, 1, 1) + struct.pack("<4f", 1, 2, 3, 4), data)
        self.assertTrue(np.array_equal(values, read_grid(self.path("a.grd"))))

    def test_channels(self):
        values = np.random.default_rng(0).random((3, 4, 5, 2))
        write_grid(self.path("c.grd"), values)
        self.assertTrue(np.array_equal(as_f32(values), read_grid(self.path("c.grd"))))

    def test_mac(self):
        rng = np.random.default_rng(1)
        vel = MacGrid.zeros((3, 4, 5)).map(lambda c: rng.random(c.shape))
        write_mac(self.path("v.grd"), vel)
        read = read_mac(self.path("v.grd"))
        self.assertEqual((3, 4, 5), read.resolution)
        for a, b in zip(vel.components(), read.components()):
            self.assertTrue(np.array_equal(as_f32(a), b))
        with self.assertRaises(FormatError):
            read_grid(self.path("v.grd"))

    def test_malformed(self):
        write_grid(self.path("t.grd"), np.ones((2, 2, 2)))
        with open(self.path("t.grd"), "rb") as file:
            data = file.read()
        with open(self.path("short.grd"), "wb") as file:
            file.write(data[:-4])
        with open(self.path("long.grd"), "wb") as file:
            file.write(data + b"\0")
        with open(self.path("magic.grd"), "wb") as file:
            file.write(b"XXXX" + data[4:])
        for name in ("short.grd", "long.grd", "magic.grd"):
            with self.assertRaises(FormatError):
                read_grid(self.path(name))
        with self.assertRaises(ValueError):
            write_grid(self.path("bad.grd"), np.ones((2, 2)))


class TestParticles(unittest.TestCase):

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        particles = VortexParticleSet.from_trajectories(rng.random((4, 3, 3)), rng.normal(size=(4, 3, 3)),
                                                        rng.normal(size=4))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "p.vtx")
            write_particles(path, particles)
            self.assertEqual(4 + 8 + 4 * (4 + 3 * 24), os.path.getsize(path))
            read = read_particles(path)
            self.assertTrue(np.array_equal(as_f32(particles.intensities), read.intensities))
            self.assertTrue(np.array_equal(as_f32(particles.positions), read.positions))
            self.assertTrue(np.array_equal(as_f32(particles.vorticity), read.vorticity))
            with self.assertRaises(ValueError):
                write_particles(path, VortexParticleSet([[0.5, 0.5, 0.5]], [0], 2))


class TestCheckpoints(unittest.TestCase):

    def test_save_load_save_is_identical(self):
        fields = small_fields()
        with tempfile.TemporaryDirectory() as tmp:
            first, second = os.path.join(tmp, "a.hyf"), os.path.join(tmp, "b.hyf")
            write_checkpoint(first, fields)
            loaded = read_checkpoint(first)
            write_checkpoint(second, loaded)
            with open(first, "rb") as a, open(second, "rb") as b:
                self.assertEqual(a.read(), b.read())
        self.assertEqual(1, loaded.radiance.channels)
        self.assertEqual(len(fields.density.levels), len(loaded.density.levels))
        self.assertTrue(loaded.density.levels[-1].hashed)
        x = np.random.default_rng(3).random((10, 3))
        self.assertTrue(np.allclose(fields.density.query(x, 0.5), loaded.density.query(x, 0.5), rtol=1e-5))

    def test_density_only_and_rgb(self):
        fields = small_fields(rgb=True)
        fields.velocity = None
        fields.radiance.values[...] = [0.2, 0.4, 0.6]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "d.hyf")
            write_checkpoint(path, fields)
            loaded = read_checkpoint(path)
            self.assertIsNone(loaded.velocity)
            self.assertTrue(np.allclose([0.2, 0.4, 0.6], loaded.radiance.values))
            self.assertEqual(3, read_checkpoint(path, rgb=True).radiance.channels)
            write_grid(os.path.join(tmp, "g.grd"), np.ones((2, 2, 2)))
            with self.assertRaises(FormatError):
                read_checkpoint(os.path.join(tmp, "g.grd"))


class TestImages(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_imgf(self):
        image = np.random.default_rng(4).random((5, 7, 3))
        write_imgf(self.path("i.imgf"), image)
        self.assertTrue(np.array_equal(as_f32(image), read_imgf(self.path("i.imgf"))))
        write_image(self.path("g.imgf"), np.ones((4, 6)))
        self.assertEqual((4, 6, 1), read_image(self.path("g.imgf")).shape)

    def test_ppm(self):
        image = np.random.default_rng(5).random((5, 7, 3))
        write_image(self.path("i.ppm"), image)
        read = read_image(self.path("i.ppm"))
        self.assertEqual((5, 7, 3), read.shape)
        self.assertLessEqual(np.abs(read - image).max(), 0.5 / 255.0 + 1e-12)
        write_ppm(self.path("gray.ppm"), np.full((2, 2, 1), 2.0))
        self.assertTrue(np.array_equal(np.ones((2, 2, 3)), read_ppm(self.path("gray.ppm"))))

    def test_ppm_comments(self):
        with open(self.path("c.ppm"), "wb") as file:
            file.write(b"P6\n# made by hand\n2 1\n# depth\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
        image = read_ppm(self.path("c.ppm"))
        self.assertEqual((1, 2, 3), image.shape)
        self.assertEqual([1.0, 0.0, 0.0], image[0, 0].tolist())

    def test_invalid_images(self):
        with open(self.path("x.ppm"), "wb") as file:
            file.write(b"P6\n2 2\n65535\n" + bytes(24))
        with self.assertRaises(FormatError):
            read_ppm(self.path("x.ppm"))
        with open(self.path("t.ppm"), "wb") as file:
            file.write(b"P6\n2 2\n255\n" + bytes(5))
        with self.assertRaises(FormatError):
            read_ppm(self.path("t.ppm"))
        with open(self.path("u.img"), "wb") as file:
            file.write(b"GIF89a")
        with self.assertRaises(FormatError):
            read_image(self.path("u.img"))
        with self.assertRaises(ValueError):
            write_ppm(self.path("four.ppm"), np.ones((2, 2, 4)))


class TestCamerasAndSequences(unittest.TestCase):

    def test_cameras(self):
        camera = Camera.look_at([0.5, 0.5, 2.0], [0.5, 0.5, 0.5], 32, 24, 40.0, 0.5, 3.0, name="front")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cameras.json")
            write_cameras(path, [camera])
            self.assertEqual([camera.to_dict()], [c.to_dict() for c in read_cameras(path)])
            with open(path, "w") as file:
                file.write("{not json")
            with self.assertRaises(FormatError):
                read_cameras(path)

    def test_sequence(self):
        rng = np.random.default_rng(6)
        densities = [rng.random((3, 3, 3)) for _ in range(3)]
        velocities = [MacGrid.zeros((3, 3, 3)).map(lambda c: rng.random(c.shape)) for _ in range(3)]
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_sequence(tmp, Sequence(densities, velocities, 0.25))
            self.assertEqual(os.path.join(tmp, "density.txt"), manifest)
            self.assertTrue(os.path.isfile(os.path.join(tmp, "density_0002.grd")))
            read = read_sequence(tmp)
            self.assertEqual(3, len(read))
            self.assertEqual(0.25, read.dt)
            self.assertTrue(np.array_equal(as_f32(densities[1]), read.densities[1]))
            self.assertTrue(np.array_equal(as_f32(velocities[2].w), read.velocities[2].w))

    def test_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            grid = os.path.join(tmp, "sub", "d.grd")
            write_grid(grid, np.ones((2, 2, 2)))
            path = os.path.join(tmp, "m.txt")
            write_manifest(path, [grid], 0.1)
            dt, files = read_manifest(path)
            self.assertEqual(0.1, dt)
            self.assertEqual([os.path.abspath(grid)], [os.path.abspath(f) for f in files])
            with open(path, "w") as file:
                file.write("frames\nsub/d.grd\n")
            with self.assertRaises(FormatError):
                read_manifest(path)
            with open(path, "w") as file:
                file.write("dt = 0.1\nsub/missing.grd\n")
            with self.assertRaises(FormatError):
                read_manifest(path)

    def test_state(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "state.npz")
            save_state(path, {"adam/density/m0": np.arange(3.0), "iteration": np.array(7)})
            state = load_state(path)
            self.assertEqual(7, int(state["iteration"]))
            self.assertTrue(np.array_equal(np.arange(3.0), state["adam/density/m0"]))
            self.assertFalse(os.path.exists(path + ".tmp.npz"))
