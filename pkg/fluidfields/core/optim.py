#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Adam optimizer over parameter groups`

Parameters are numpy arrays updated in place. Groups are keyed like the buffers of a
:class:`~fluidfields.core.field_grid.Gradients`; a group without a gradient buffer in a step is not touched.

"""
import logging

import numpy as np

from fluidfields.core.ff_paras import TrainParameters
from fluidfields.core.field_grid import Gradients

LOG = logging.getLogger(__name__)


class NonFiniteGradientError(ArithmeticError):
    pass


class AdamState(object):
    """
    :samp:`First and second moments of one parameter group`
    """
    def __init__(self, parameters):
        self.m = [np.zeros_like(p) for p in parameters]
        self.v = [np.zeros_like(p) for p in parameters]
        self.step = 0


def adam_step(parameters, gradients, state: AdamState, learning_rate, beta1=0.9, beta2=0.99, epsilon=1e-15):
    """
    :samp:`One bias-corrected Adam update of a parameter group, in place`

    :raises: :exc:`NonFiniteGradientError` if a gradient is not finite; nothing is updated then
    """
    for g in gradients:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("Non-finite gradient")
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(parameters, gradients, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= learning_rate * (m / correction1) / (np.sqrt(v / correction2) + epsilon)


class Adam(object):
    """
    :samp:`Adam over named parameter groups`

    :param groups: dict of group key to list of parameter arrays
    :param float learning_rate: step size
    """
    def __init__(self, groups, learning_rate=0.01, beta1=0.9, beta2=0.99, epsilon=1e-15):
        self.groups = {key: list(params) for key, params in groups.items()}
        self.states = {key: AdamState(params) for key, params in self.groups.items()}
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    @staticmethod
    def from_parameters(groups, para: TrainParameters):
        return Adam(groups, para.learning_rate, para.adam_beta1, para.adam_beta2, para.adam_epsilon)

    def step(self, grads: Gradients):
        """
        :samp:`Update every group that has a gradient buffer`

        All buffers are checked before any parameter changes.

        :raises: :exc:`NonFiniteGradientError` on a non-finite gradient
        """
        for key in self.groups:
            buffer = grads.get(key)
            if buffer is not None and not buffer.is_finite():
                raise NonFiniteGradientError("Non-finite gradient for %s" % key)
        for key, params in self.groups.items():
            buffer = grads.get(key)
            if buffer is None:
                continue
            adam_step(params, buffer.arrays, self.states[key], self.learning_rate, self.beta1, self.beta2,
                      self.epsilon)

    def state_arrays(self, prefix="adam"):
        """
        :samp:`Moments and step counters as a flat dict of arrays, for npz files`
        """
        arrays = {}
        for key, state in self.states.items():
            arrays["%s/%s/step" % (prefix, key)] = np.array(state.step)
            for i, (m, v) in enumerate(zip(state.m, state.v)):
                arrays["%s/%s/m%d" % (prefix, key, i)] = m
                arrays["%s/%s/v%d" % (prefix, key, i)] = v
        return arrays

    def load_state_arrays(self, arrays, prefix="adam"):
        """
        :samp:`Restore moments saved by` :func:`state_arrays`

        Groups missing from arrays keep fresh moments.
        """
        for key, state in self.states.items():
            step_key = "%s/%s/step" % (prefix, key)
            if step_key not in arrays:
                continue
            state.step = int(arrays[step_key])
            for i in range(len(state.m)):
                m = arrays["%s/%s/m%d" % (prefix, key, i)]
                v = arrays["%s/%s/v%d" % (prefix, key, i)]
                if m.shape != state.m[i].shape:
                    raise ValueError("Optimizer state for %s does not match the parameters" % key)
                state.m[i][...] = m
                state.v[i][...] = v
