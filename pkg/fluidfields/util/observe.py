#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Observable sources and observers of events`

Long running operations (training stages, simulations, dataset generation) are :class:`Observable`. They broadcast
events in the format::

    [inform][confirm](source, event, **kwargs)

where ``source`` is the calling instance, ``event`` is an :class:`~enum.Enum` member whose value is the level of
the event and ``**kwargs`` hold information about the event. Events may carry whole grids; observers that print
or log them should use :func:`describe_kwargs`.

An :class:`Observer` that returns ``False`` on a ``confirm`` event vetoes the action. Exceptions raised by an
observer propagate to the source, which is how an observer stops a training run.

"""
import logging
from abc import ABCMeta

import numpy as np


class ObserverInterruptException(RuntimeError):
    pass


def describe_value(value):
    if isinstance(value, np.ndarray) and value.size > 8:
        return "array%s" % (value.shape,)
    if isinstance(value, (float, np.floating)):
        return "%.6g" % value
    return repr(value)


def describe_kwargs(kwargs):
    return ", ".join("%s=%s" % (key, describe_value(value)) for key, value in sorted(kwargs.items()))


class Observable(object):
    def __init__(self):
        self.observers = []

    def register(self, *observers):
        for observer in observers:
            if observer not in self.observers:
                self.observers.append(observer)

    def unregister_all(self):
        del self.observers[:]

    def observers_inform(self, source, event, **kwargs):
        for observer in self.observers:
            observer.inform(source, event, **kwargs)

    def observers_confirm(self, source, event, **kwargs):
        """
        :samp:`Ask every observer in turn; the first veto ends the round`

        :return: True if no observer vetoed, also when there are no observers
        """
        return all(observer.confirm(source, event, **kwargs) for observer in self.observers)

    def confirm_or_interrupt(self, event, message, **kwargs):
        """
        :raises: :exc:`ObserverInterruptException` with the given message if an observer vetoes the event
        """
        if not self.observers_confirm(self, event, **kwargs):
            raise ObserverInterruptException(message)


class Observer(object, metaclass=ABCMeta):

    def inform(self, source, event, **kwargs):
        pass

    def confirm(self, source, event, **kwargs):
        return True


class EventObserver(Observer):
    """
    :samp:`Dispatches events to methods named after the event`

    A subclass handles event ``iteration_end`` by defining ``inform_iteration_end(self, source, event, **kwargs)``.
    Events without a handler go to :func:`pass_inform` or :func:`pass_confirm`.
    """

    def inform(self, source, event, **kwargs):
        handler = getattr(self, "inform_" + getattr(event, "name", ""), self.pass_inform)
        handler(source, event, **kwargs)

    def pass_inform(self, *args, **kwargs):
        pass

    def confirm(self, source, event, **kwargs):
        handler = getattr(self, "confirm_" + getattr(event, "name", ""), self.pass_confirm)
        return handler(source, event, **kwargs)

    def pass_confirm(self, *args, **kwargs):
        return True


class EventLogger(Observer):
    """
    :samp:`Logs every event with a level at or above event_level`

    :param int logging_level: level of the log records
    :param int event_level: lowest event value that is logged
    """

    def __init__(self, logging_level=logging.DEBUG, event_level=0):
        self.logger = logging.getLogger(__name__)
        self.logging_level = logging_level
        self.event_level = event_level

    def inform(self, source, event, **kwargs):
        value = getattr(event, "value", None)
        if not isinstance(value, int):
            self.logger.warning("Unexpected event %r from %s", event, source.__class__.__name__)
        elif value >= self.event_level:
            self.logger.log(self.logging_level, "%s, %s, %s", source.__class__.__name__, event.name,
                            describe_kwargs(kwargs))

    def confirm(self, source, event, **kwargs):
        self.inform(source, event, **kwargs)
        return True
