#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Image and volume metrics`

 - :func:`psnr` and :func:`ssim` compare rendered images with observed ones;
 - :func:`si_rmse` compares density grids up to a least-squares scale, over the cells where the reference is dense;
 - :func:`warp_error` advects a density one frame with a velocity and compares it to the next reference frame.

Per-frame results are collected in :class:`FrameMetrics` rows and written as CSV by :func:`write_metrics_csv`.

"""
import csv
import logging
import math
import os

import numpy as np
from skimage.metrics import structural_similarity

from fluidfields.core.fluid_sim import advect_maccormack
from fluidfields.core.pressure_projection import MacGrid

LOG = logging.getLogger(__name__)

PSNR_IDENTICAL = math.inf
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
METRICS_COLUMNS = ("frame", "psnr", "ssim", "si_rmse", "warp_error")


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("Shapes differ: %s and %s" % (a.shape, b.shape))
    return a, b


def psnr(a, b):
    """
    :samp:`Peak signal to noise ratio of images with values in [0, 1]`

    :return: dB, :data:`PSNR_IDENTICAL` if the images are equal
    """
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def to_gray(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image.mean(axis=2)
    if image.ndim != 2:
        raise ValueError("Invalid image shape %s" % (image.shape,))
    return image


def ssim(a, b):
    """
    :samp:`Mean structural similarity of two images with values in [0, 1]`

    Color images are averaged to gray. Local statistics use a Gaussian window (sigma 1.5, 11 pixels wide) and
    population covariances.

    :return: value in [-1, 1]
    :raises: :exc:`ValueError` if the shapes differ or an image is smaller than the window
    """
    a, b = _same_shape(to_gray(a), to_gray(b))
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError("Images should be at least %d pixels wide and high, got %s" % (SSIM_WINDOW, a.shape))
    return float(structural_similarity(a, b, gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False,
                                       data_range=1.0))


def density_mask(gt, threshold=0.1):
    return np.asarray(gt, dtype=np.float64) > threshold


def fit_scale(pred, gt, mask):
    """
    :samp:`Least-squares scale s minimizing |s pred - gt| over the mask, 0 if pred vanishes there`
    """
    p = pred[mask]
    denominator = float(np.dot(p, p))
    return float(np.dot(p, gt[mask])) / denominator if denominator > 0.0 else 0.0


def si_rmse(pred, gt, mask_threshold=0.1):
    """
    :samp:`Scale-invariant RMSE of density grids over the cells where gt exceeds the threshold`

    :raises: :exc:`ValueError` if the shapes differ or no cell of gt exceeds the threshold
    """
    pred, gt = _same_shape(pred, gt)
    mask = density_mask(gt, mask_threshold)
    if not mask.any():
        raise ValueError("No cell of the reference density exceeds %s" % mask_threshold)
    s = fit_scale(pred, gt, mask)
    return float(np.sqrt(np.mean((s * pred[mask] - gt[mask]) ** 2)))


def masked_rms(gt, mask_threshold=0.1):
    gt = np.asarray(gt, dtype=np.float64)
    mask = density_mask(gt, mask_threshold)
    if not mask.any():
        raise ValueError("No cell of the reference density exceeds %s" % mask_threshold)
    return float(np.sqrt(np.mean(gt[mask] ** 2)))


def warp_error(density, gt_next, vel: MacGrid, dt, mask_threshold=0.1):
    """
    :samp:`Scale-invariant RMSE between a density advected one frame and the next reference frame`

    :param density: density at frame t
    :param gt_next: reference density at frame t + 1
    :param vel: velocity to advect with, on a grid of the same resolution
    :param float dt: frame interval
    """
    density, gt_next = _same_shape(density, gt_next)
    if tuple(vel.resolution) != density.shape:
        raise ValueError("Velocity resolution %s does not match density %s" % (vel.resolution, density.shape))
    return si_rmse(advect_maccormack(density, vel, dt), gt_next, mask_threshold)


def zero_velocity_warp_error(density, gt_next, dt, mask_threshold=0.1):
    return warp_error(density, gt_next, MacGrid.zeros(np.shape(density)), dt, mask_threshold)


class FrameMetrics(object):
    """
    :samp:`Metrics of one frame; absent values are None`
    """
    def __init__(self, frame, psnr=None, ssim=None, si_rmse=None, warp_error=None):
        self.frame = int(frame)
        self.psnr = psnr
        self.ssim = ssim
        self.si_rmse = si_rmse
        self.warp_error = warp_error

    def as_row(self):
        return [self.frame] + [_format(getattr(self, name)) for name in METRICS_COLUMNS[1:]]

    def __repr__(self):
        return "FrameMetrics(%s)" % ", ".join("%s=%s" % kv for kv in zip(METRICS_COLUMNS, self.as_row()))


def _format(value):
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return "%.9g" % value


def image_metrics(rendered, observed):
    """
    :samp:`PSNR and SSIM per frame`

    :param rendered: list of images
    :param observed: list of images, same length
    :return: list of :class:`FrameMetrics`
    """
    if len(rendered) != len(observed):
        raise ValueError("Got %d rendered and %d observed frames" % (len(rendered), len(observed)))
    return [FrameMetrics(i, psnr(r, o), ssim(r, o)) for i, (r, o) in enumerate(zip(rendered, observed))]


def summarize(rows):
    """
    :samp:`Mean of every metric over the rows that have it; infinite PSNR values are skipped`

    :return: dict of metric name to mean or None
    """
    summary = {}
    for name in METRICS_COLUMNS[1:]:
        values = [getattr(r, name) for r in rows if getattr(r, name) is not None]
        values = [v for v in values if not math.isinf(v)]
        summary[name] = float(np.mean(values)) if values else None
    return summary


def write_metrics_csv(path, rows):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.as_row())
    LOG.info("Wrote metrics of %d frames to %s", len(rows), path)


def read_metrics_csv(path):
    rows = []
    with open(path, "r", newline="") as file:
        for record in csv.DictReader(file):
            values = {name: float(record[name]) if record[name] else None for name in METRICS_COLUMNS[1:]}
            rows.append(FrameMetrics(int(record["frame"]), **values))
    return rows
