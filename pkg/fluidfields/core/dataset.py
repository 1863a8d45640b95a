#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Multi-view datasets: synthetic generation, manifest and frame access`

A dataset directory holds::

    manifest.json        cameras, frame files, frame interval and the train/test split
    cameras.json         the cameras alone (see :doc:`/camera`)
    cam_<i>/frame_<f>.ppm
    gt/                  ground-truth sequence, GRD1 files and manifests

The manifest has the form::

    {"num_frames": 60, "dt": 0.0169, "train": [0, 1, 3, 4], "test": [2], "ground_truth": "gt",
     "cameras": [{...camera..., "frames": ["cam_0/frame_0000.ppm", ...]}, ...]}

"""
import json
import logging
import math
import os
from enum import Enum

import numpy as np

from fluidfields.core.ff_paras import RunParameters, DataParameters
from fluidfields.core.fields import GridDensity
from fluidfields.core.fluid_sim import PlumeSimulator, Sequence
from fluidfields.core.storage import FormatError, write_cameras, write_image, read_image
from fluidfields.core.storage import write_sequence, read_sequence
from fluidfields.core.volume_renderer import Camera, Radiance, render_image
from fluidfields.util.defaults import numbered_filename
from fluidfields.util.observe import Observable

LOG = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CAMERAS = "cameras.json"
GROUND_TRUTH = "gt"
BOX_CENTER = np.array([0.5, 0.5, 0.5])


class DatasetEvent(Enum):
    """
    :samp:`Events fired by` :class:`DatasetGenerator`

    All events are broadcast in the format::

        [inform][confirm](source, event, **kwargs)

    """
    frame_rendered = 1
    """
    ``1`` ``inform`` :samp:`All views of a frame were rendered` kwargs: ``frame``
    """
    clear_directory = 10
    """
    ``10`` ``confirm`` :samp:`Overwrite a directory that already holds a dataset` kwargs: ``directory``
    """
    simulation_done = 20
    """
    ``20`` ``inform`` :samp:`Ground truth was simulated` kwargs: ``num_frames``, ``resolution``
    """
    generation_start = 30
    """
    ``30`` ``inform`` :samp:`Generation started` kwargs: ``directory``, ``num_cameras``
    """
    generation_end = 31
    """
    ``31`` ``inform`` :samp:`Generation did end` kwargs: ``manifest``
    """


def arc_cameras(para: DataParameters=None, near_margin=0.9):
    """
    :samp:`Cameras evenly spread over a horizontal arc, all looking at the center of the box`

    The arc is centered on the +z side of the box. Near and far bound the sphere of radius ``near_margin`` around
    the center.

    :return: list of :class:`~fluidfields.core.volume_renderer.Camera`
    """
    para = para if para else DataParameters()
    count = para.num_cameras
    arc = math.radians(para.arc_degrees)
    angles = [0.0] if count == 1 else [-arc / 2.0 + arc * i / (count - 1) for i in range(count)]
    cameras = []
    for i, angle in enumerate(angles):
        eye = BOX_CENTER + para.camera_radius * np.array([math.sin(angle), 0.0, math.cos(angle)])
        cameras.append(Camera.look_at(eye, BOX_CENTER, para.image_size, para.image_size, para.focal,
                                      max(1e-3, para.camera_radius - near_margin), para.camera_radius + near_margin,
                                      name="cam_%d" % i))
    return cameras


class Dataset(object):
    """
    :samp:`Cameras, their frames and the train/test split`

    :param str root: dataset directory
    :param cameras: list of cameras
    :param frames: per camera the list of absolute frame paths
    :param float dt: frame interval in normalized time
    :param train: indices of training cameras
    :param test: indices of held-out cameras
    :param str ground_truth: directory of the ground-truth sequence, or None
    """
    def __init__(self, root, cameras, frames, dt, train, test, ground_truth=None):
        self.root = root
        self.cameras = list(cameras)
        self.frames = [list(f) for f in frames]
        self.dt = float(dt)
        self.train = list(train)
        self.test = list(test)
        self.ground_truth = ground_truth
        self._cache = {}
        self.validate()

    @property
    def num_frames(self):
        return len(self.frames[0]) if self.frames else 0

    def validate(self):
        """
        :raises: :exc:`ValueError` if cameras and frame lists disagree, frame counts differ, a split index is
            out of range or a frame file does not exist
        """
        if not self.cameras or len(self.cameras) != len(self.frames):
            raise ValueError("Dataset %s: %d cameras and %d frame lists" % (self.root, len(self.cameras),
                                                                           len(self.frames)))
        counts = set(len(f) for f in self.frames)
        if len(counts) != 1:
            raise ValueError("Dataset %s: cameras have different frame counts %s" % (self.root, sorted(counts)))
        if self.num_frames < 2:
            raise ValueError("Dataset %s: at least 2 frames are needed" % self.root)
        for index in self.train + self.test:
            if not 0 <= index < len(self.cameras):
                raise ValueError("Dataset %s: no camera %d" % (self.root, index))
        if not self.train:
            raise ValueError("Dataset %s: no training cameras" % self.root)
        for files in self.frames:
            for f in files:
                if not os.path.isfile(f):
                    raise ValueError("Dataset %s: frame file not found %s" % (self.root, f))
        return self

    def frame_time(self, frame):
        return frame / (self.num_frames - 1)

    def image(self, camera_index, frame):
        """
        :samp:`Observed image, read once and cached`

        :return: array (H, W, C)
        """
        key = (camera_index, frame)
        if key not in self._cache:
            image = read_image(self.frames[camera_index][frame])
            camera = self.cameras[camera_index]
            if image.shape[:2] != (camera.height, camera.width):
                raise FormatError("Frame %s is %s, camera %s expects %d x %d"
                                  % (self.frames[camera_index][frame], image.shape[:2], camera.name,
                                     camera.height, camera.width))
            self._cache[key] = image
        return self._cache[key]

    def ground_truth_sequence(self) -> Sequence:
        if not self.ground_truth:
            raise ValueError("Dataset %s has no ground truth" % self.root)
        return read_sequence(self.ground_truth)

    def to_dict(self):
        def rel(path):
            return os.path.relpath(path, self.root).replace(os.sep, "/")

        cameras = []
        for camera, files in zip(self.cameras, self.frames):
            d = camera.to_dict()
            d["frames"] = [rel(f) for f in files]
            cameras.append(d)
        return {"num_frames": self.num_frames, "dt": self.dt, "train": self.train, "test": self.test,
                "ground_truth": rel(self.ground_truth) if self.ground_truth else None, "cameras": cameras}

    def save(self):
        path = os.path.join(self.root, MANIFEST)
        with open(path, "w") as file:
            json.dump(self.to_dict(), file, indent=2)
        write_cameras(os.path.join(self.root, CAMERAS), self.cameras)
        return path

    @staticmethod
    def load(path):
        """
        :samp:`Load a dataset from its directory or manifest file`

        :raises: :exc:`ValueError` if the manifest is missing or invalid
        """
        manifest = os.path.join(path, MANIFEST) if os.path.isdir(path) else path
        if not os.path.isfile(manifest):
            raise ValueError("Dataset manifest not found: %s" % manifest)
        root = os.path.dirname(os.path.abspath(manifest))
        with open(manifest, "r") as file:
            try:
                data = json.load(file)
            except json.JSONDecodeError as err:
                raise FormatError("Invalid manifest %s: %s" % (manifest, err))
        try:
            cameras = [Camera.from_dict(d) for d in data["cameras"]]
            frames = [[os.path.join(root, *f.split("/")) for f in d["frames"]] for d in data["cameras"]]
            gt = data.get("ground_truth")
            dataset = Dataset(root, cameras, frames, data["dt"], data["train"], data["test"],
                              os.path.join(root, *gt.split("/")) if gt else None)
        except KeyError as err:
            raise FormatError("Invalid manifest %s: missing %s" % (manifest, err))
        if data.get("num_frames", dataset.num_frames) != dataset.num_frames:
            raise FormatError("Invalid manifest %s: num_frames %s, found %d frames"
                              % (manifest, data["num_frames"], dataset.num_frames))
        LOG.debug("Loaded dataset %s: %d cameras, %d frames", root, len(cameras), dataset.num_frames)
        return dataset


class DatasetGenerator(Observable):
    """
    :samp:`Simulates a plume and renders it from cameras on an arc`

    The ground-truth density is rendered with ``render.gt_density_scale`` times the simulated density and
    radiance 1. Equal parameters give bitwise-equal datasets.

    :param paras: run parameters, the groups ``sim``, ``solver``, ``render`` and ``data`` are used
    """
    def __init__(self, paras: RunParameters=None):
        Observable.__init__(self)
        self.paras = paras if paras else RunParameters()

    def generate(self, directory) -> Dataset:
        """
        :samp:`Write a dataset to directory`

        :raises: :exc:`~fluidfields.util.observe.ObserverInterruptException` if an observer vetoes overwriting
            an existing dataset
        """
        paras = self.paras
        if os.path.isfile(os.path.join(directory, MANIFEST)):
            self.confirm_or_interrupt(DatasetEvent.clear_directory, "Overwriting dataset in %s was vetoed" % directory,
                                      directory=directory)
        os.makedirs(directory, exist_ok=True)
        cameras = arc_cameras(paras.data)
        self.observers_inform(self, DatasetEvent.generation_start, directory=directory, num_cameras=len(cameras))
        simulator = PlumeSimulator(paras.sim, paras.solver)
        simulator.register(*self.observers)
        sequence = simulator.run()
        gt_dir = os.path.join(directory, GROUND_TRUTH)
        write_sequence(gt_dir, sequence)
        self.observers_inform(self, DatasetEvent.simulation_done, num_frames=len(sequence),
                              resolution=sequence.resolution)
        field = GridDensity(sequence.densities, paras.render.gt_density_scale)
        radiance = Radiance.create(False, 1.0)
        frames = [[] for _ in cameras]
        for frame in range(len(sequence)):
            t = frame / (len(sequence) - 1)
            for i, camera in enumerate(cameras):
                image = render_image(camera, t, field, radiance, paras.render)
                path = os.path.join(directory, camera.name, numbered_filename("frame", frame, ".ppm"))
                write_image(path, image)
                frames[i].append(path)
            self.observers_inform(self, DatasetEvent.frame_rendered, frame=frame)
        dataset = Dataset(os.path.abspath(directory), cameras, [[os.path.abspath(f) for f in fs] for fs in frames],
                          sequence.dt, paras.data.train_indices(), paras.data.test_indices(),
                          os.path.abspath(gt_dir))
        manifest = dataset.save()
        LOG.info("Generated dataset %s: %d cameras, %d frames", directory, len(cameras), len(sequence))
        self.observers_inform(self, DatasetEvent.generation_end, manifest=manifest)
        return dataset


def generate_dataset(directory, paras: RunParameters=None, observers=()) -> Dataset:
    generator = DatasetGenerator(paras)
    generator.register(*observers)
    return generator.generate(directory)
