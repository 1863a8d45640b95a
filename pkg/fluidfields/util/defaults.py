#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Various utility functions`

Thread count and deterministic mode are read from the environment:

 - ``FF_THREADS`` number of worker threads (default 1)
 - ``FF_DETERMINISTIC`` ``1``, ``true``, ``yes`` or ``on`` enables deterministic reduction

"""
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "FF_THREADS"
ENV_DETERMINISTIC = "FF_DETERMINISTIC"
DETERMINISTIC_CHUNK = 256


def str2bool(v, none=False):
    if v:
        return str(v).lower() in ["yes", "y", "true", "t", "1", "on", "o"]
    else:
        return none


def thread_count():
    value = os.environ.get(ENV_THREADS, "1")
    try:
        threads = int(value)
    except ValueError:
        raise ValueError("Invalid value for %s: not an integer %s" % (ENV_THREADS, value))
    if threads < 1:
        raise ValueError("Invalid value for %s: should be at least 1, got %d" % (ENV_THREADS, threads))
    return threads


def is_deterministic():
    return str2bool(os.environ.get(ENV_DETERMINISTIC))


def chunk_size(n, preferred=None):
    """
    :samp:`Size of the work items when n items are split over workers`

    In deterministic mode the size does not depend on the thread count, so results reduced per chunk are the same
    for any number of threads.

    :param int n: number of items
    :param int preferred: chunk size to use in deterministic mode, defaults to :data:`DETERMINISTIC_CHUNK`
    :return: chunk size, at least 1
    """
    if is_deterministic():
        return max(1, preferred or DETERMINISTIC_CHUNK)
    return max(1, int(math.ceil(n / thread_count())), preferred or 1)


def chunk_slices(n, size):
    return [slice(start, min(n, start + size)) for start in range(0, n, size)]


def parallel_map(fn, items):
    """
    :samp:`Apply fn to every item, results in input order`

    :param fn: function of one argument
    :param items: iterable of arguments
    :return: list of results, ordered as items
    """
    items = list(items)
    threads = min(thread_count(), len(items))
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))


def numbered_filename(prefix, ordinal, ext, zfill=4):
    return "%s_%s%s" % (prefix, str(ordinal).zfill(zfill), ext)


def wall_time():
    return time.perf_counter()
