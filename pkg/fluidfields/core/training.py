#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Staged reconstruction of density, base velocity and vortex particles`

Reconstruction runs up to three stages, each a :class:`TrainingStage`:

 1. :class:`DensityStage` fits density and radiance to the observed frames with the rendering loss only;
 2. :class:`BaseFlowStage` adds the base velocity and trains all three under the full loss;
 3. :class:`VortexStage` seeds vortex particles in the frozen base flow and trains their intensities together
    with density and radiance.

Parameters not trained by a stage stay bitwise unchanged during it. Every iteration draws its batches from a
generator seeded by ``(train.seed, stage, iteration)``, so a run resumed from its saved state reproduces the
uninterrupted run.

:class:`Reconstruction` dispatches the stages and writes its output directory::

    checkpoint.hyf      HYF1 checkpoint of the learned fields
    particles.vtx       VTX1 particles, after the vortex stage
    state.npz           full precision parameters, optimizer moments and progress, for resuming
    loss.csv            progress: iteration, stage, loss, render, density, projection, laminar, wall_time
    run.cfg             the run configuration

"""
import csv
import logging
import os
from abc import ABCMeta, abstractmethod
from enum import Enum

import numpy as np

from fluidfields.core.config import write_run_config
from fluidfields.core.dataset import Dataset
from fluidfields.core.ff_enum import Stage
from fluidfields.core.ff_paras import RunParameters, LossWeights
from fluidfields.core.field_grid import Gradients
from fluidfields.core.fields import FluidFields
from fluidfields.core.optim import Adam, NonFiniteGradientError
from fluidfields.core.physics_losses import LOSS_NAMES, sample_point_batch, total_loss
from fluidfields.core.pressure_projection import BoundarySpec
from fluidfields.core.storage import write_checkpoint, write_particles, save_state, load_state
from fluidfields.core.volume_renderer import RayBatch, generate_rays, sample_image
from fluidfields.core.vortex_particles import VortexParticleSet, seed_particles, precompute_trajectories
from fluidfields.util.defaults import wall_time
from fluidfields.util.observe import Observable, EventObserver

LOG = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.hyf"
PARTICLES_FILE = "particles.vtx"
STATE_FILE = "state.npz"
LOSS_FILE = "loss.csv"
CONFIG_FILE = "run.cfg"
LOSS_COLUMNS = ("iteration", "stage", "loss") + LOSS_NAMES + ("wall_time",)
SEEDING_ITERATION = 2 ** 31


class TrainEvent(Enum):
    """
    :samp:`Events fired during reconstruction`

    All events are broadcast in the format::

        inform(source, event, **kwargs)

    """
    iteration_end = 1
    """
    ``1`` ``inform`` :samp:`An optimizer step was taken` kwargs: ``stage``, ``iteration``, ``losses``,
    ``wall_time``
    """
    checkpoint_saved = 10
    """
    ``10`` ``inform`` :samp:`State and checkpoint were written` kwargs: ``stage``, ``iteration``, ``path``
    """
    particles_seeded = 11
    """
    ``11`` ``inform`` :samp:`Vortex particles were seeded and their trajectories computed` kwargs: ``count``,
    ``flagged``
    """
    stage_start = 20
    """
    ``20`` ``inform`` :samp:`A stage started` kwargs: ``stage``, ``iterations``, ``start``
    """
    stage_end = 21
    """
    ``21`` ``inform`` :samp:`A stage did end` kwargs: ``stage``, ``iterations``, ``losses``
    """
    training_start = 30
    """
    ``30`` ``inform`` :samp:`Reconstruction started` kwargs: ``stages``, ``out_dir``
    """
    training_end = 31
    """
    ``31`` ``inform`` :samp:`Reconstruction did end` kwargs: ``out_dir``
    """


class TrainingDivergedError(ArithmeticError):
    """
    :samp:`A loss or gradient became non-finite`
    """
    def __init__(self, message, stage=None, iteration=None, diagnostics=None):
        ArithmeticError.__init__(self, message)
        self.stage = stage
        self.iteration = iteration
        self.diagnostics = diagnostics if diagnostics else {}

    def __str__(self):
        return "%s (stage %s, iteration %s, %s)" % (self.args[0], self.stage, self.iteration, self.diagnostics)


class LossCsvWriter(EventObserver):
    """
    :samp:`Writes a row to the progress CSV for every iteration_end event`
    """
    def __init__(self, path, append=False):
        exists = append and os.path.isfile(path)
        self.file = open(path, "a" if exists else "w", newline="")
        self.writer = csv.writer(self.file)
        if not exists:
            self.writer.writerow(LOSS_COLUMNS)

    def inform_iteration_end(self, source, event, stage=None, iteration=None, losses=None, wall_time=None, **kwargs):
        self.writer.writerow([iteration, stage.value, "%.9g" % losses.total]
                             + ["%.9g" % losses[name] for name in LOSS_NAMES] + ["%.3f" % wall_time])

    def inform_stage_end(self, *args, **kwargs):
        self.file.flush()

    def close(self):
        if not self.file.closed:
            self.file.close()


def iteration_rng(seed, stage: Stage, iteration):
    return np.random.default_rng([seed, stage.value, iteration])


def sample_ray_batch(dataset: Dataset, paras: RunParameters, rng):
    """
    :samp:`Rays through random pixels of random (training camera, frame) pairs with their observed colors`

    ``train.ray_batch`` rays are split over ``train.images_per_batch`` pairs.

    :return: (:class:`~fluidfields.core.volume_renderer.RayBatch`, observed colors (N, C))
    """
    count = paras.train.images_per_batch
    sizes = np.full(count, paras.train.ray_batch // count)
    sizes[:paras.train.ray_batch % count] += 1
    cameras = rng.choice(dataset.train, size=count)
    frames = rng.integers(0, dataset.num_frames, count)
    batches, observed = [], []
    for camera_index, frame, size in zip(cameras, frames, sizes):
        camera = dataset.cameras[camera_index]
        rays = generate_rays(camera, dataset.frame_time(frame), int(size), rng)
        batches.append(rays)
        observed.append(sample_image(dataset.image(camera_index, frame), rays.pixels[:, 0], rays.pixels[:, 1]))
    return RayBatch.concatenate(batches), np.concatenate(observed)


class TrainingStage(Observable, metaclass=ABCMeta):
    """
    :samp:`Abstract class for a stage of reconstruction`

    A stage is run in three build steps:

    1. :func:`prepare` creates what the stage trains and its optimizer
    2. :func:`iterate` takes one optimizer step, called ``train.stage<n>_iterations`` times
    3. :func:`finish` reports the stage

    :param fields: the fields, updated in place
    :param dataset: observed frames
    :param paras: run parameters
    :param bc: boundary conditions of the projection loss
    """
    stage = None

    def __init__(self, fields: FluidFields, dataset: Dataset, paras: RunParameters, bc: BoundarySpec=None):
        Observable.__init__(self)
        self.fields = fields
        self.dataset = dataset
        self.paras = paras
        self.bc = bc if bc else BoundarySpec.from_parameters(paras.solver)
        self.optimizer = None
        self.last_losses = None
        self.start_time = wall_time()

    @property
    def iterations(self):
        return self.paras.train.iterations(self.stage)

    @abstractmethod
    def trainable_keys(self):
        """
        :samp:`Gradient keys of the parameter groups this stage trains`
        """
        pass

    def weights(self) -> LossWeights:
        return self.paras.loss

    def prepare(self):
        groups = {key: f.parameters() for key, f in self.fields.trainables(*self.trainable_keys()).items()}
        self.optimizer = Adam.from_parameters(groups, self.paras.train)

    def batches(self, rng):
        """
        :samp:`Rays, observations, points and projection frame times of one iteration`
        """
        weights = self.weights()
        rays, observed = sample_ray_batch(self.dataset, self.paras, rng)
        points = None
        if weights.density > 0.0 or weights.laminar > 0.0:
            points = sample_point_batch(self.paras.train.point_batch, rng, self.paras.train.point_sampling,
                                        self.fields.density, self.paras.train.importance_floor)
        frame_times = None
        if weights.projection > 0.0:
            frames = rng.integers(0, self.dataset.num_frames, self.paras.train.projection_frames)
            frame_times = [self.dataset.frame_time(f) for f in frames]
        return rays, observed, points, frame_times

    def iterate(self, iteration):
        """
        :samp:`One optimizer step`

        :param int iteration: zero-based iteration within the stage
        :return: :class:`~fluidfields.core.physics_losses.LossBreakdown` before the step
        :raises: :exc:`TrainingDivergedError` if a loss or gradient is not finite; parameters are then unchanged
        """
        rng = iteration_rng(self.paras.train.seed, self.stage, iteration)
        rays, observed, points, frame_times = self.batches(rng)
        grads = Gradients.for_fields(**self.fields.trainables(*self.trainable_keys()))
        losses = total_loss(self.fields, self.weights(), self.paras, rays, observed, points, frame_times, grads,
                            rng, self.bc)
        if not losses.is_finite():
            raise TrainingDivergedError("Non-finite loss", self.stage, iteration, dict(losses.values))
        try:
            self.optimizer.step(grads)
        except NonFiniteGradientError as err:
            raise TrainingDivergedError(str(err), self.stage, iteration, grads.norms())
        self.last_losses = losses
        self.observers_inform(self, TrainEvent.iteration_end, stage=self.stage, iteration=iteration, losses=losses,
                              wall_time=wall_time() - self.start_time)
        return losses

    def finish(self):
        LOG.info("Stage %s finished after %d iterations: %s", self.stage.name, self.iterations, self.last_losses)
        self.observers_inform(self, TrainEvent.stage_end, stage=self.stage, iterations=self.iterations,
                              losses=self.last_losses)

    def run(self, start=0, checkpoint=None):
        """
        :samp:`Run the stage from iteration start`

        :param int start: iterations already done, for resuming
        :param checkpoint: function of (stage, iterations done) called every ``train.checkpoint_interval``
            iterations
        :return: the fields
        """
        if self.optimizer is None:
            self.prepare()
        self.observers_inform(self, TrainEvent.stage_start, stage=self.stage, iterations=self.iterations, start=start)
        for iteration in range(start, self.iterations):
            self.iterate(iteration)
            done = iteration + 1
            if checkpoint and done % self.paras.train.checkpoint_interval == 0 and done < self.iterations:
                checkpoint(self, done)
        self.finish()
        return self.fields


class DensityStage(TrainingStage):
    """
    :samp:`Density and radiance from the rendering loss only`
    """
    stage = Stage.density

    def trainable_keys(self):
        return "density", "radiance"

    def weights(self) -> LossWeights:
        return LossWeights(render=self.paras.loss.render, density=0.0, projection=0.0, laminar=0.0,
                           gamma=self.paras.loss.gamma)


class BaseFlowStage(TrainingStage):
    """
    :samp:`Density, radiance and the base velocity, starting from zero velocity, under the full loss`
    """
    stage = Stage.base_flow

    def trainable_keys(self):
        return "density", "radiance", "velocity"

    def prepare(self):
        self.fields.particles = None
        self.fields.ensure_velocity(self.paras)
        TrainingStage.prepare(self)


class VortexStage(TrainingStage):
    """
    :samp:`Vortex particle intensities with density and radiance; the base velocity is frozen`

    Particles are seeded at the highest curl of the base flow and their trajectories are computed before the
    first iteration, unless the fields already carry particles.
    """
    stage = Stage.vortex

    def trainable_keys(self):
        return "density", "radiance", "intensity"

    def prepare(self):
        if self.fields.velocity is None:
            raise ValueError("The vortex stage needs a base velocity; run the base flow stage first")
        if self.fields.particles is None:
            rng = iteration_rng(self.paras.train.seed, self.stage, SEEDING_ITERATION)
            particles = seed_particles(self.fields.velocity, self.paras.vortex, rng, self.dataset.num_frames,
                                       self.fields.density)
            precompute_trajectories(particles, self.fields.velocity, self.paras.vortex.substeps)
            self.fields.particles = particles
            self.observers_inform(self, TrainEvent.particles_seeded, count=particles.num_particles,
                                  flagged=int(particles.flagged.sum()))
        TrainingStage.prepare(self)


STAGE_CLASSES = {Stage.density: DensityStage, Stage.base_flow: BaseFlowStage, Stage.vortex: VortexStage}


def _run_stage(cls, dataset, fields, paras, observers):
    stage = cls(fields, dataset, paras)
    stage.register(*observers)
    return stage.run()


def train_stage1(dataset: Dataset, fields: FluidFields, paras: RunParameters, observers=()) -> FluidFields:
    return _run_stage(DensityStage, dataset, fields, paras, observers)


def train_stage2(dataset: Dataset, fields: FluidFields, paras: RunParameters, observers=()) -> FluidFields:
    return _run_stage(BaseFlowStage, dataset, fields, paras, observers)


def train_stage3(dataset: Dataset, fields: FluidFields, paras: RunParameters, observers=()) -> FluidFields:
    return _run_stage(VortexStage, dataset, fields, paras, observers)


# resume state
def state_arrays(fields: FluidFields, stage: Stage, done, optimizer: Adam=None):
    """
    :samp:`Everything needed to resume, as a flat dict of arrays`
    """
    arrays = {"progress/stage": np.array(stage.value), "progress/done": np.array(done),
              "fields/radiance": fields.radiance.values}
    for i, p in enumerate(fields.density.parameters()):
        arrays["fields/density/%d" % i] = p
    if fields.velocity is not None:
        for i, p in enumerate(fields.velocity.parameters()):
            arrays["fields/velocity/%d" % i] = p
    particles = fields.particles
    if particles is not None:
        arrays.update({"particles/seed_positions": particles.seed_positions,
                       "particles/seed_frames": particles.seed_frames,
                       "particles/num_frames": np.array(particles.num_frames),
                       "particles/intensities": particles.intensities,
                       "particles/positions": particles.positions,
                       "particles/vorticity": particles.vorticity,
                       "particles/seed_vorticity": particles.seed_vorticity,
                       "particles/flagged": particles.flagged})
    if optimizer is not None:
        arrays.update(optimizer.state_arrays("adam"))
    return arrays


def _restore_group(target, arrays, prefix):
    for i, p in enumerate(target.parameters()):
        key = "%s/%d" % (prefix, i)
        if key not in arrays or arrays[key].shape != p.shape:
            raise ValueError("Saved state does not match the configured grids: %s" % key)
        p[...] = arrays[key]


def fields_from_state(arrays, paras: RunParameters) -> FluidFields:
    """
    :samp:`Fields restored from state arrays; grid shapes come from paras`

    :raises: :exc:`ValueError` if the arrays do not match the configured grids
    """
    with_velocity = "fields/velocity/0" in arrays
    fields = FluidFields.create(paras, with_velocity)
    _restore_group(fields.density, arrays, "fields/density")
    if with_velocity:
        _restore_group(fields.velocity, arrays, "fields/velocity")
    if arrays["fields/radiance"].shape != fields.radiance.values.shape:
        raise ValueError("Saved radiance does not match render.rgb")
    fields.radiance.values[...] = arrays["fields/radiance"]
    if "particles/intensities" in arrays:
        v = paras.vortex
        particles = VortexParticleSet(arrays["particles/seed_positions"], arrays["particles/seed_frames"],
                                      int(arrays["particles/num_frames"]), v.kernel_radius, v.epsilon,
                                      arrays["particles/intensities"], arrays["particles/seed_vorticity"],
                                      v.chunk_points)
        particles.positions = arrays["particles/positions"].copy()
        particles.vorticity = arrays["particles/vorticity"].copy()
        particles.flagged = arrays["particles/flagged"].astype(bool)
        fields.particles = particles
    return fields


class Reconstruction(Observable):
    """
    :samp:`Runs the stages of reconstruction and keeps the output directory`

    The stages to run are given as :class:`~fluidfields.core.ff_enum.Stage` members or their values. Stages that
    follow an earlier run start from the state saved in the output directory. The ablation in ``train.ablation``
    adjusts the loss weights and drops the vortex stage for every setting but ``full``.

    :param dataset: observed frames
    :param paras: run parameters
    :param str out_dir: output directory, ``paths.out_dir`` if None
    """
    def __init__(self, dataset: Dataset, paras: RunParameters, out_dir=None):
        Observable.__init__(self)
        self.dataset = dataset
        self.paras = paras.copy()
        self.with_vortex = self.paras.apply_ablation()
        self.out_dir = out_dir if out_dir else self.paras.paths.out_dir
        self.fields = None

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _initial(self, stages, resume):
        """Fields and progress to start from."""
        state_file = self.path(STATE_FILE)
        if (resume or stages[0] != Stage.density) and os.path.isfile(state_file):
            arrays = load_state(state_file)
            fields = fields_from_state(arrays, self.paras)
            stage = Stage.value_for(int(arrays["progress/stage"]))
            LOG.info("Starting from saved state: stage %s, %d iterations done", stage.name,
                     int(arrays["progress/done"]))
            return fields, stage, int(arrays["progress/done"]), arrays
        if stages[0] != Stage.density:
            raise ValueError("Stage %s needs the state of an earlier stage in %s" % (stages[0].name, self.out_dir))
        return FluidFields.create(self.paras, with_velocity=False), None, 0, {}

    def save(self, stage: TrainingStage, done):
        arrays = state_arrays(self.fields, stage.stage, done, stage.optimizer)
        save_state(self.path(STATE_FILE), arrays)
        write_checkpoint(self.path(CHECKPOINT_FILE), self.fields)
        if self.fields.particles is not None:
            write_particles(self.path(PARTICLES_FILE), self.fields.particles)
        self.observers_inform(self, TrainEvent.checkpoint_saved, stage=stage.stage, iteration=done,
                              path=self.path(STATE_FILE))

    def run(self, stages=(Stage.density, Stage.base_flow, Stage.vortex), resume=False) -> FluidFields:
        """
        :samp:`Run the given stages in order`

        :param stages: stages to run
        :param bool resume: continue an interrupted run from ``state.npz``
        :return: the learned fields
        :raises: :exc:`TrainingDivergedError` after saving the last finite state
        """
        stages = sorted(set(Stage.value_for(s) for s in stages), key=lambda s: s.value)
        if not self.with_vortex and Stage.vortex in stages:
            LOG.info("Ablation %s: skipping the vortex stage", self.paras.train.ablation.name)
            stages.remove(Stage.vortex)
        if not stages:
            raise ValueError("No stages to run")
        os.makedirs(self.out_dir, exist_ok=True)
        write_run_config(self.paras, self.path(CONFIG_FILE))
        self.fields, saved_stage, saved_done, arrays = self._initial(stages, resume)
        csv_writer = LossCsvWriter(self.path(LOSS_FILE), append=saved_stage is not None)
        self.observers_inform(self, TrainEvent.training_start, stages=[s.name for s in stages],
                              out_dir=self.out_dir)
        try:
            for stage_id in stages:
                start = 0
                if resume and saved_stage is not None:
                    if stage_id.value < saved_stage.value:
                        LOG.info("Stage %s already done", stage_id.name)
                        continue
                    if stage_id == saved_stage:
                        start = saved_done
                stage = STAGE_CLASSES[stage_id](self.fields, self.dataset, self.paras)
                stage.register(csv_writer, *self.observers)
                stage.prepare()
                if start >= stage.iterations:
                    LOG.info("Stage %s already done", stage_id.name)
                    continue
                if start > 0:
                    stage.optimizer.load_state_arrays(arrays, "adam")
                try:
                    stage.run(start, self.save)
                except TrainingDivergedError as err:
                    self.save(stage, err.iteration)
                    raise
                self.save(stage, stage.iterations)
        finally:
            csv_writer.close()
        self.observers_inform(self, TrainEvent.training_end, out_dir=self.out_dir)
        return self.fields
