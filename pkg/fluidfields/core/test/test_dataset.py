#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import json
import math
import os
import tempfile
import unittest

import numpy as np

from fluidfields.core.dataset import arc_cameras, Dataset, DatasetGenerator, DatasetEvent, generate_dataset, \
    MANIFEST, BOX_CENTER
from fluidfields.core.ff_paras import RunParameters, DataParameters
from fluidfields.core.storage import FormatError, write_image
from fluidfields.util.observe import EventObserver, ObserverInterruptException

TINY = {
    "sim.resolution": 8, "sim.num_frames": 3, "sim.inflow_radius": 0.2, "sim.inflow_y": 0.2,
    "solver.tolerance": 1e-8,
    "data.num_cameras": 3, "data.image_size": 12, "data.focal": 14.0, "data.test_views": "2",
    "render.samples_per_ray": 8, "render.chunk_rays": 64,
    "grid.num_levels": 2, "grid.base_res": 4, "grid.finest_res": 8, "grid.finest_time_res": 4,
    "grid.hidden_width": 8, "grid.hash_table_size": 0,
    "train.stage1_iterations": 2, "train.stage2_iterations": 2, "train.stage3_iterations": 2,
    "train.ray_batch": 16, "train.point_batch": 16, "train.images_per_batch": 2, "train.projection_res": 4,
    "train.checkpoint_interval": 1,
    "vortex.num_particles": 2, "vortex.candidate_factor": 10,
}


def tiny_parameters(**overrides):
    paras = RunParameters()
    for key, value in TINY.items():
        paras.set(key, value)
    for key, value in overrides.items():
        paras.set(key.replace("__", "."), value)
    return paras.validate()


class Recorder(EventObserver):

    def __init__(self, answer=True):
        self.answer = answer
        self.rendered = []
        self.ended = []

    def inform_frame_rendered(self, source, event, frame=None, **kwargs):
        self.rendered.append(frame)

    def inform_generation_end(self, source, event, manifest=None, **kwargs):
        self.ended.append(manifest)

    def confirm_clear_directory(self, *args, **kwargs):
        return self.answer


class TestArcCameras(unittest.TestCase):

    def test_cameras_look_at_center(self):
        para = DataParameters(num_cameras=3, arc_degrees=90.0, camera_radius=2.0)
        cameras = arc_cameras(para)
        self.assertEqual(["cam_0", "cam_1", "cam_2"], [c.name for c in cameras])
        for camera in cameras:
            self.assertAlmostEqual(2.0, np.linalg.norm(camera.position - BOX_CENTER))
            to_center = (BOX_CENTER - camera.position) / 2.0
            self.assertTrue(np.allclose(to_center, camera.forward))
            self.assertLess(camera.near, 2.0 - math.sqrt(0.75))
            self.assertGreater(camera.far, 2.0 + math.sqrt(0.75))
        self.assertTrue(np.allclose([0.5, 0.5, 2.5], cameras[1].position))
        self.assertAlmostEqual(-cameras[0].position[0] + 0.5, cameras[2].position[0] - 0.5)

    def test_single_camera(self):
        cameras = arc_cameras(DataParameters(num_cameras=1))
        self.assertTrue(np.allclose([0.0, 0.0, -1.0], cameras[0].forward))


class TestGeneration(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.paras = tiny_parameters()
        cls.recorder = Recorder()
        cls.dataset = generate_dataset(os.path.join(cls.tmp.name, "a"), cls.paras, [cls.recorder])

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_layout(self):
        dataset = self.dataset
        self.assertEqual(3, dataset.num_frames)
        self.assertEqual([0, 1], dataset.train)
        self.assertEqual([2], dataset.test)
        self.assertTrue(os.path.isfile(os.path.join(dataset.root, "cameras.json")))
        self.assertTrue(dataset.frames[1][2].endswith(os.path.join("cam_1", "frame_0002.ppm")))
        self.assertEqual((12, 12, 3), dataset.image(0, 1).shape)
        self.assertAlmostEqual(0.5, dataset.frame_time(1))
        self.assertEqual([0, 1, 2], self.recorder.rendered)
        self.assertEqual([os.path.join(dataset.root, MANIFEST)], self.recorder.ended)

    def test_ground_truth(self):
        sequence = self.dataset.ground_truth_sequence()
        self.assertEqual(3, len(sequence))
        self.assertEqual((8, 8, 8), sequence.resolution)
        self.assertEqual(3, len(sequence.velocities))
        self.assertAlmostEqual(self.paras.sim.frame_dt, self.dataset.dt)

    def test_smoke_is_visible(self):
        image = self.dataset.image(1, 2)
        self.assertGreater(image.max(), 0.0)
        self.assertLessEqual(image.max(), 1.0)

    def test_load(self):
        loaded = Dataset.load(self.dataset.root)
        self.assertEqual(self.dataset.to_dict(), loaded.to_dict())
        self.assertEqual(self.dataset.frames, loaded.frames)
        self.assertEqual(self.dataset.ground_truth, loaded.ground_truth)

    def test_deterministic(self):
        other = generate_dataset(os.path.join(self.tmp.name, "b"), self.paras)
        for ours, theirs in zip(self.dataset.frames, other.frames):
            for a, b in zip(ours, theirs):
                with open(a, "rb") as fa, open(b, "rb") as fb:
                    self.assertEqual(fa.read(), fb.read())

    def test_overwrite_needs_confirmation(self):
        generator = DatasetGenerator(self.paras)
        generator.register(Recorder(answer=False))
        with self.assertRaises(ObserverInterruptException):
            generator.generate(self.dataset.root)
        self.assertEqual(10, DatasetEvent.clear_directory.value)


class TestDatasetValidation(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.cameras = arc_cameras(DataParameters(num_cameras=2, image_size=12))
        self.frames = []
        for camera in self.cameras:
            files = []
            for frame in range(2):
                path = os.path.join(self.tmp.name, camera.name, "frame_%04d.ppm" % frame)
                write_image(path, np.zeros((12, 12, 3)))
                files.append(path)
            self.frames.append(files)

    def test_valid(self):
        dataset = Dataset(self.tmp.name, self.cameras, self.frames, 1.0, [0], [1])
        path = dataset.save()
        self.assertEqual(2, Dataset.load(path).num_frames)
        with self.assertRaises(ValueError):
            dataset.ground_truth_sequence()

    def test_invalid(self):
        with self.assertRaises(ValueError):
            Dataset(self.tmp.name, self.cameras, self.frames[:1], 1.0, [0], [])
        with self.assertRaises(ValueError):
            Dataset(self.tmp.name, self.cameras, [self.frames[0], self.frames[1][:1]], 1.0, [0], [])
        with self.assertRaises(ValueError):
            Dataset(self.tmp.name, self.cameras, self.frames, 1.0, [0], [5])
        with self.assertRaises(ValueError):
            Dataset(self.tmp.name, self.cameras, self.frames, 1.0, [], [0, 1])
        os.remove(self.frames[1][1])
        with self.assertRaises(ValueError):
            Dataset(self.tmp.name, self.cameras, self.frames, 1.0, [0], [1])

    def test_bad_files(self):
        with self.assertRaises(ValueError):
            Dataset.load(os.path.join(self.tmp.name, "nowhere"))
        path = os.path.join(self.tmp.name, MANIFEST)
        with open(path, "w") as file:
            file.write("{")
        with self.assertRaises(FormatError):
            Dataset.load(path)
        with open(path, "w") as file:
            json.dump({"dt": 1.0, "train": [0], "test": []}, file)
        with self.assertRaises(FormatError):
            Dataset.load(self.tmp.name)
        write_image(self.frames[0][0], np.zeros((6, 6, 3)))
        dataset = Dataset(self.tmp.name, self.cameras, self.frames, 1.0, [0], [1])
        with self.assertRaises(FormatError):
            dataset.image(0, 0)
