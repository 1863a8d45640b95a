#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Enumerations used throughout fluidfields`

"""
import gettext
from enum import Enum, unique

_ = gettext.gettext

stage_descriptions = [_("Density and radiance from the rendering loss"),
                      _("Density, radiance and base velocity from the full loss"),
                      _("Density, radiance and vortex particle intensities with frozen base flow")]


class _Named(object):
    """Mixin with the lookup helpers shared by the enumerations in this module."""

    @classmethod
    def names(cls):
        """
        :samp:`Get the member names`

        :return: List<str> of names
        """
        return [member.name for member in cls]

    @classmethod
    def sanitize(cls, name):
        """
        :samp:`Verify a member name`

        :param str name: string to test
        :return: name if it is the name of a member
        :raises: :exc:`ValueError` if the given name is not the name of a member
        """
        try:
            return cls[name].name
        except KeyError as err:
            raise ValueError("Invalid %s: %s. Choose from %s" % (cls.__name__, err, ", ".join(cls.names())))

    @classmethod
    def value_for(cls, value):
        """
        :samp:`Get a member for the given value`

        :param value: may be a member, str (name) or int (value)
        :return: the member
        :raises: :exc:`ValueError` if the given value could not be converted
        """
        try:
            if isinstance(value, cls):
                return value
            elif isinstance(value, int):
                return cls(value)
            else:
                return cls[str(value).strip()]
        except (KeyError, ValueError) as err:
            raise ValueError("Invalid %s: %s. Choose from %s" % (cls.__name__, err, ", ".join(cls.names())))


@unique
class Stage(_Named, Enum):
    """
    :samp:`Stages of reconstruction`
    """
    density = 1
    """
    ``1`` :samp:`Density and radiance from the rendering loss only`
    """
    base_flow = 2
    """
    ``2`` :samp:`Density, radiance and base velocity from the full loss`
    """
    vortex = 3
    """
    ``3`` :samp:`Vortex particle intensities on top of the frozen base flow`
    """

    def describe(self):
        return stage_descriptions[self.value - 1]

    @staticmethod
    def parse_selection(text):
        """
        :samp:`Parse a stage selection`

        Accepts ``1``, ``2-3``, ``1,3`` or stage names.

        :param str text: the selection
        :return: sorted list of :class:`Stage`
        :raises: :exc:`ValueError` if the selection cannot be parsed
        """
        stages = set()
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                try:
                    lo, hi = int(lo), int(hi)
                except ValueError:
                    raise ValueError("Invalid stage range: %s" % part)
                if lo > hi:
                    raise ValueError("Invalid stage range: %s" % part)
                stages.update(Stage.value_for(i) for i in range(lo, hi + 1))
            elif part.isdigit():
                stages.add(Stage.value_for(int(part)))
            else:
                stages.add(Stage.value_for(part))
        if not stages:
            raise ValueError("Invalid stage selection: '%s'" % text)
        return sorted(stages, key=lambda s: s.value)


@unique
class Activation(_Named, Enum):
    """
    :samp:`Decoder activations, values are stored in checkpoints`
    """
    identity = 0
    softplus = 1
    shifted_softplus = 2
    """
    ``2`` :samp:`softplus(x) - log 2, zero at zero`
    """


@unique
class FaceCondition(_Named, Enum):
    """
    :samp:`Boundary condition on one face of the domain`
    """
    solid = 0
    """
    ``0`` :samp:`Free-slip wall: zero normal velocity, homogeneous Neumann pressure`
    """
    open = 1
    """
    ``1`` :samp:`Open face: zero Dirichlet pressure`
    """


@unique
class PointSampling(_Named, Enum):
    """
    :samp:`How space-time points for the physics losses are drawn`
    """
    uniform = 0
    density_importance = 1
    """
    ``1`` :samp:`Probability proportional to density plus a floor`
    """


@unique
class Ablation(_Named, Enum):
    """
    :samp:`Loss configurations of the ablation study`
    """
    naive = 0
    """
    ``0`` :samp:`Rendering and density transport losses only, no vortex particles`
    """
    laminar = 1
    """
    ``1`` :samp:`Adds the laminar loss`
    """
    projection = 2
    """
    ``2`` :samp:`Adds the projection loss`
    """
    full = 3
    """
    ``3`` :samp:`All losses and vortex particles`
    """


@unique
class WarpSource(_Named, Enum):
    """
    :samp:`Which density the warp error advects`
    """
    model = 0
    ground_truth = 1
