#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Parameters for reconstruction, simulation and evaluation`

Parameters come in groups. Every group is a subclass of :class:`Parameters` that declares its parameters in
``FIELDS``: a mapping of name to ``(type, default, minimum, maximum)``. Each parameter gets a screening on validity
when it is set and a :exc:`ValueError` is raised if it is not valid::

    grid = GridParameters(base_res=4, finest_res=8)
    grid.num_levels = 0     # raises ValueError

The aggregate :class:`RunParameters` holds one instance of every group. Its :func:`~RunParameters.set` method
takes keys in the form ``group.name``, the form used in run configuration files
(see :doc:`fluidfields.core.config <fluidfields.core.config>`).

Defaults are desk-scale. :func:`RunParameters.full_scale` restores the resolutions and iteration counts of
the full-scale experiments.

"""
import math
from numbers import Number

from fluidfields.core.ff_enum import Activation, FaceCondition, PointSampling, Ablation, WarpSource

FACE_NAMES = ("x-", "x+", "y-", "y+", "z-", "z+")
FULL_SCALE_HASH_TABLE_SIZE = 2 ** 19


class Parameters(object):
    """
    :samp:`Base class of validated parameter groups`
    """
    GROUP = None
    FIELDS = {}

    def __init__(self, **kwargs):
        for name, (kind, default, lo, hi) in self.FIELDS.items():
            object.__setattr__(self, name, default)
        for name, value in kwargs.items():
            setattr(self, name, value)

    def __setattr__(self, name, value):
        if name not in self.FIELDS:
            raise ValueError("Unknown parameter for %s: %s" % (self.GROUP, name))
        kind, default, lo, hi = self.FIELDS[name]
        object.__setattr__(self, name, self._screen(name, kind, value, lo, hi))

    def __eq__(self, other):
        return type(self) is type(other) and self.items() == other.items()

    def __repr__(self):
        return "%s(%s)" % (self.__class__.__name__, ", ".join("%s=%r" % kv for kv in self.items()))

    @staticmethod
    def _assert_number(n, min, max, arg):
        if not isinstance(n, Number) or isinstance(n, bool):
            raise ValueError("Invalid value for %s: not a number %s" % (arg, n))
        if not math.isfinite(n):
            raise ValueError("Invalid value for %s: not finite %s" % (arg, n))
        if min is not None and n < min:
            raise ValueError("Invalid value for %s: value should be at least %s, got %s" % (arg, min, n))
        if max is not None and n > max:
            raise ValueError("Invalid value for %s: value should be at most %s, got %s" % (arg, max, n))

    def _screen(self, name, kind, value, lo, hi):
        arg = "%s.%s" % (self.GROUP, name)
        if kind is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("true", "yes", "on", "1"):
                    return True
                if low in ("false", "no", "off", "0"):
                    return False
                raise ValueError("Invalid value for %s: not a boolean %s" % (arg, value))
            if isinstance(value, (bool, int)):
                return bool(value)
            raise ValueError("Invalid value for %s: not a boolean %s" % (arg, value))
        if kind is int:
            if isinstance(value, str):
                try:
                    value = int(value.strip())
                except ValueError:
                    raise ValueError("Invalid value for %s: not an integer %s" % (arg, value))
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError("Invalid value for %s: not an integer %s" % (arg, value))
            self._assert_number(value, lo, hi, arg)
            return value
        if kind is float:
            if isinstance(value, str):
                try:
                    value = float(value.strip())
                except ValueError:
                    raise ValueError("Invalid value for %s: not a number %s" % (arg, value))
            self._assert_number(value, lo, hi, arg)
            return float(value)
        if kind is str:
            if value is None:
                value = ""
            if not isinstance(value, str):
                raise ValueError("Invalid value for %s: not a string %s" % (arg, value))
            return value.strip()
        # enumerations
        try:
            return kind.value_for(value)
        except ValueError as err:
            raise ValueError("Invalid value for %s: %s" % (arg, err))

    def items(self):
        return [(name, getattr(self, name)) for name in self.FIELDS]

    def copy(self, **overrides):
        values = dict(self.items())
        values.update(overrides)
        return self.__class__(**values)

    def as_strings(self):
        """
        :samp:`Values as they are written to configuration files`

        :return: list of (key, str) with keys in the form ``group.name``
        """
        out = []
        for name, value in self.items():
            text = value.name if hasattr(value, "name") and not isinstance(value, str) else str(value)
            out.append(("%s.%s" % (self.GROUP, name), text))
        return out

    def describe(self):
        return "\n".join("%-36s %s" % kv for kv in self.as_strings())


class GridParameters(Parameters):
    """
    ``group`` :samp:`grid` :samp:`Multiresolution feature grids for density and base velocity`

    Spatial resolutions grow geometrically from ``base_res`` to ``finest_res`` over ``num_levels`` levels; the
    temporal resolution of a level is its spatial resolution capped at ``finest_time_res``. A level whose vertex
    count exceeds ``hash_table_size`` stores its features in a hash table of that size (0 disables hashing, the
    default).
    """
    GROUP = "grid"
    FIELDS = {
        "num_levels": (int, 4, 1, 32),
        "base_res": (int, 8, 2, 4096),
        "finest_res": (int, 64, 2, 4096),
        "finest_time_res": (int, 32, 2, 4096),
        "features_per_level": (int, 2, 1, 16),
        "hidden_width": (int, 32, 1, 1024),
        "hash_table_size": (int, 0, 0, 2 ** 26),
        "hidden_activation": (Activation, Activation.shifted_softplus, None, None),
        "init_scale": (float, 1e-4, 0.0, 10.0),
        "density_bias": (float, -4.0, -50.0, 50.0),
        "seed": (int, 0, 0, 2 ** 32 - 1),
    }


class RenderParameters(Parameters):
    """
    ``group`` :samp:`render` :samp:`Ray sampling and emission-absorption quadrature`
    """
    GROUP = "render"
    FIELDS = {
        "samples_per_ray": (int, 128, 2, 8192),
        "stratified": (bool, True, None, None),
        "clip_to_box": (bool, True, None, None),
        "rgb": (bool, False, None, None),
        "supersample": (int, 1, 1, 8),
        "radiance_init": (float, 1.0, 0.0, 100.0),
        "gt_density_scale": (float, 10.0, 0.0, 1e6),
        "chunk_rays": (int, 256, 1, 1 << 20),
    }


class SolverParameters(Parameters):
    """
    ``group`` :samp:`solver` :samp:`Multigrid preconditioned conjugate gradient pressure solve`

    ``open_faces`` is a comma separated list of faces among ``x-, x+, y-, y+, z-, z+`` with an open (zero
    pressure) condition; the other faces are solid. An empty value closes the box.
    """
    GROUP = "solver"
    FIELDS = {
        "mg_levels": (int, 3, 1, 12),
        "jacobi_omega": (float, 2.0 / 3.0, 1e-3, 1.0),
        "pre_sweeps": (int, 4, 0, 100),
        "post_sweeps": (int, 4, 0, 100),
        "tolerance": (float, 1e-6, 1e-15, 1.0),
        "max_iterations": (int, 200, 1, 100000),
        "open_faces": (str, "y+", None, None),
    }

    def __setattr__(self, name, value):
        if name == "open_faces" and isinstance(value, str):
            faces = [f.strip() for f in value.split(",") if f.strip()]
            for face in faces:
                if face not in FACE_NAMES:
                    raise ValueError("Invalid value for solver.open_faces: unknown face '%s'. Choose from %s"
                                     % (face, ", ".join(FACE_NAMES)))
            value = ",".join(faces)
        Parameters.__setattr__(self, name, value)

    def face_conditions(self):
        opened = [f for f in self.open_faces.split(",") if f]
        return {face: FaceCondition.open if face in opened else FaceCondition.solid for face in FACE_NAMES}


class VortexParameters(Parameters):
    """
    ``group`` :samp:`vortex` :samp:`Vortex particle seeding, transport and induced velocity`
    """
    GROUP = "vortex"
    FIELDS = {
        "num_particles": (int, 50, 1, 100000),
        "kernel_radius": (float, 0.05, 1e-6, 1.0),
        "candidate_factor": (int, 20, 1, 100000),
        "epsilon": (float, 1e-6, 0.0, 1.0),
        "substeps": (int, 2, 1, 1000),
        "curl_zero": (float, 1e-12, 0.0, 1.0),
        "chunk_points": (int, 4096, 1, 1 << 24),
    }

    @property
    def candidate_count(self):
        return self.num_particles * self.candidate_factor


class SimParameters(Parameters):
    """
    ``group`` :samp:`sim` :samp:`Grid fluid simulation and the plume generator`

    Velocities are in domain units per unit of normalized time; a sequence of ``num_frames`` frames spans
    normalized time [0, 1], so one frame interval is ``1 / (num_frames - 1)``.
    """
    GROUP = "sim"
    FIELDS = {
        "resolution": (int, 48, 4, 1024),
        "num_frames": (int, 60, 2, 100000),
        "substeps": (int, 1, 1, 100),
        "buoyancy": (float, 1.5, 0.0, 1e4),
        "viscosity": (float, 0.0, 0.0, 10.0),
        "diffusion_iterations": (int, 20, 1, 10000),
        "inflow_x": (float, 0.5, 0.0, 1.0),
        "inflow_y": (float, 0.12, 0.0, 1.0),
        "inflow_z": (float, 0.5, 0.0, 1.0),
        "inflow_radius": (float, 0.08, 0.0, 1.0),
        "inflow_density": (float, 1.0, 0.0, 1e4),
        "inflow_velocity": (float, 0.5, -100.0, 100.0),
        "inflow_jitter": (float, 0.2, 0.0, 1.0),
        "source_fraction": (float, 0.1, 0.0, 1.0),
        "predict_buoyancy": (bool, False, None, None),
        "seed": (int, 0, 0, 2 ** 32 - 1),
    }

    @property
    def frame_dt(self):
        return 1.0 / (self.num_frames - 1)


class LossWeights(Parameters):
    """
    ``group`` :samp:`loss` :samp:`Weights of the rendering and physics losses`
    """
    GROUP = "loss"
    FIELDS = {
        "render": (float, 10000.0, 0.0, 1e12),
        "density": (float, 0.001, 0.0, 1e12),
        "projection": (float, 1.0, 0.0, 1e12),
        "laminar": (float, 10.0, 0.0, 1e12),
        "gamma": (float, 0.2, 0.0, 1e6),
    }


class TrainParameters(Parameters):
    """
    ``group`` :samp:`train` :samp:`Stage schedule, batches and optimizer`
    """
    GROUP = "train"
    FIELDS = {
        "stage1_iterations": (int, 5000, 0, 10 ** 9),
        "stage2_iterations": (int, 3000, 0, 10 ** 9),
        "stage3_iterations": (int, 1000, 0, 10 ** 9),
        "ray_batch": (int, 1024, 1, 1 << 24),
        "point_batch": (int, 4096, 1, 1 << 24),
        "images_per_batch": (int, 4, 1, 4096),
        "learning_rate": (float, 0.01, 0.0, 10.0),
        "adam_beta1": (float, 0.9, 0.0, 0.999999),
        "adam_beta2": (float, 0.99, 0.0, 0.999999999),
        "adam_epsilon": (float, 1e-15, 0.0, 1.0),
        "projection_res": (int, 32, 4, 1024),
        "projection_frames": (int, 1, 1, 1024),
        "projection_adjoint": (bool, False, None, None),
        "point_sampling": (PointSampling, PointSampling.uniform, None, None),
        "importance_floor": (float, 0.01, 1e-12, 1e6),
        "ablation": (Ablation, Ablation.full, None, None),
        "checkpoint_interval": (int, 1000, 1, 10 ** 9),
        "seed": (int, 0, 0, 2 ** 32 - 1),
    }

    def iterations(self, stage):
        return getattr(self, "stage%d_iterations" % stage.value)


class EvalParameters(Parameters):
    """
    ``group`` :samp:`eval` :samp:`Evaluation protocol`
    """
    GROUP = "eval"
    FIELDS = {
        "mask_threshold": (float, 0.1, 0.0, 1e6),
        "warp_source": (WarpSource, WarpSource.model, None, None),
        "predict_steps": (int, 10, 1, 100000),
    }


class DataParameters(Parameters):
    """
    ``group`` :samp:`data` :samp:`Cameras of generated datasets`

    Cameras sit on a horizontal arc around the center of the unit box, at the height of the center, and look at
    the center. ``test_views`` is a comma separated list of held-out camera indices.
    """
    GROUP = "data"
    FIELDS = {
        "num_cameras": (int, 5, 1, 1000),
        "arc_degrees": (float, 120.0, 0.0, 360.0),
        "camera_radius": (float, 1.8, 0.9, 1000.0),
        "image_size": (int, 64, 11, 8192),
        "focal": (float, 60.0, 1e-3, 1e6),
        "test_views": (str, "2", None, None),
    }

    def __setattr__(self, name, value):
        if name == "test_views" and isinstance(value, str):
            try:
                views = [int(v) for v in value.split(",") if v.strip()]
            except ValueError:
                raise ValueError("Invalid value for data.test_views: not a list of integers %s" % value)
            value = ",".join(str(v) for v in views)
        Parameters.__setattr__(self, name, value)

    def test_indices(self):
        return [int(v) for v in self.test_views.split(",") if v]

    def train_indices(self):
        held_out = set(self.test_indices())
        return [i for i in range(self.num_cameras) if i not in held_out]


class PathParameters(Parameters):
    """
    ``group`` :samp:`paths` :samp:`Default locations of data and output`
    """
    GROUP = "paths"
    FIELDS = {
        "data_dir": (str, "data", None, None),
        "out_dir": (str, "out", None, None),
    }


class RunParameters(object):
    """
    :samp:`All parameter groups of a run`

    RunParameters can be cloned::

        paras2 = paras1.copy()
        paras1 == paras2    # True

    """
    GROUPS = (GridParameters, RenderParameters, SolverParameters, VortexParameters, SimParameters, LossWeights,
              TrainParameters, EvalParameters, DataParameters, PathParameters)

    def __init__(self, **groups):
        for cls in self.GROUPS:
            value = groups.pop(cls.GROUP, None)
            object.__setattr__(self, cls.GROUP, value.copy() if value is not None else cls())
        if groups:
            raise ValueError("Unknown parameter groups: %s" % ", ".join(sorted(groups)))

    def __setattr__(self, name, value):
        raise AttributeError("Parameter groups of RunParameters cannot be replaced; use set('group.name', value)")

    def __eq__(self, other):
        return isinstance(other, RunParameters) and all(getattr(self, c.GROUP) == getattr(other, c.GROUP)
                                                        for c in self.GROUPS)

    def groups(self):
        return [getattr(self, cls.GROUP) for cls in self.GROUPS]

    def copy(self):
        return RunParameters(**{cls.GROUP: getattr(self, cls.GROUP) for cls in self.GROUPS})

    def set(self, key, value):
        """
        :samp:`Set a parameter by its configuration key`

        :param str key: key in the form ``group.name``
        :param value: new value, strings are converted
        :raises: :exc:`ValueError` if the key is unknown or the value is not valid
        """
        group, _, name = key.strip().partition(".")
        if not name or group not in self.__dict__:
            raise ValueError("Unknown configuration key: '%s'" % key)
        setattr(self.__dict__[group], name.strip(), value)

    def get(self, key):
        group, _, name = key.strip().partition(".")
        if not name or group not in self.__dict__ or name not in self.__dict__[group].FIELDS:
            raise ValueError("Unknown configuration key: '%s'" % key)
        return getattr(self.__dict__[group], name)

    def as_strings(self):
        out = []
        for group in self.groups():
            out.extend(group.as_strings())
        return out

    def describe(self):
        return "\n".join(group.describe() for group in self.groups())

    def apply_ablation(self):
        """
        :samp:`Adjust loss weights to the configured ablation`

        ``naive`` keeps rendering and density transport, ``laminar`` adds the laminar loss, ``projection`` adds
        the projection loss, ``full`` adds vortex particles on top.

        :return: True if the vortex stage takes part in the run
        """
        ablation = self.train.ablation
        if ablation.value < Ablation.laminar.value:
            self.loss.laminar = 0.0
        if ablation.value < Ablation.projection.value:
            self.loss.projection = 0.0
        return ablation == Ablation.full

    def validate(self):
        """
        :samp:`Cross-parameter checks`

        :raises: :exc:`ValueError` on inconsistent groups
        """
        if self.grid.finest_res < self.grid.base_res:
            raise ValueError("Invalid value for grid.finest_res: should not be smaller than grid.base_res (%d < %d)"
                             % (self.grid.finest_res, self.grid.base_res))
        if self.vortex.candidate_count < self.vortex.num_particles:
            raise ValueError("Invalid value for vortex.candidate_factor: candidate pool smaller than num_particles")
        for view in self.data.test_indices():
            if not 0 <= view < self.data.num_cameras:
                raise ValueError("Invalid value for data.test_views: no camera %d among %d"
                                 % (view, self.data.num_cameras))
        if not self.data.train_indices():
            raise ValueError("Invalid value for data.test_views: no camera left for training")
        if self.train.images_per_batch > self.train.ray_batch:
            raise ValueError("Invalid value for train.images_per_batch: more images than rays in a batch")
        return self

    @staticmethod
    def full_scale():
        """
        :samp:`Parameters at the scale of the full experiments`

        :return: :class:`RunParameters` with 16 levels from 16 to 256, temporal resolution 128,
            hash tables of 2 ** 19 vertices, 200000 / 50000 / 5000 iterations and projection at 128 cubed
        """
        paras = RunParameters()
        paras.apply_full_scale()
        return paras

    def apply_full_scale(self):
        self.grid.num_levels = 16
        self.grid.base_res = 16
        self.grid.finest_res = 256
        self.grid.finest_time_res = 128
        self.grid.hash_table_size = FULL_SCALE_HASH_TABLE_SIZE
        self.train.stage1_iterations = 200000
        self.train.stage2_iterations = 50000
        self.train.stage3_iterations = 5000
        self.train.projection_res = 128
        return self
