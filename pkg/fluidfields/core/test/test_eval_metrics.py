#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import math
import os
import tempfile
import unittest

import numpy as np

from fluidfields.core.eval_metrics import psnr, ssim, si_rmse, masked_rms, fit_scale, density_mask, warp_error, \
    zero_velocity_warp_error, FrameMetrics, image_metrics, summarize, write_metrics_csv, read_metrics_csv
from fluidfields.core.pressure_projection import MacGrid


class TestImageMetrics(unittest.TestCase):

    def test_psnr(self):
        a = np.zeros((8, 8, 3))
        self.assertAlmostEqual(20.0, psnr(a, np.full((8, 8, 3), 0.1)))
        self.assertTrue(math.isinf(psnr(a, a)))
        with self.assertRaises(ValueError):
            psnr(a, np.zeros((8, 8)))

    def test_ssim(self):
        rng = np.random.default_rng(0)
        image = rng.random((32, 40, 3))
        self.assertAlmostEqual(1.0, ssim(image, image))
        noisy = np.clip(image + rng.normal(0.0, 0.3, image.shape), 0.0, 1.0)
        self.assertLess(ssim(image, noisy), 0.9)
        self.assertAlmostEqual(ssim(image, noisy), ssim(noisy, image))
        with self.assertRaises(ValueError):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))

    def test_ssim_of_constant_images(self):
        # only the luminance term is left: (2 * 0.5 * 0.3 + c1) / (0.5 ** 2 + 0.3 ** 2 + c1) with c1 = 0.01 ** 2
        self.assertAlmostEqual(0.3001 / 0.3401, ssim(np.full((16, 16), 0.5), np.full((16, 16), 0.3)), places=7)
        self.assertAlmostEqual(1.0, ssim(np.full((16, 16), 0.2), np.full((16, 16), 0.2)))

    def test_ssim_compares_gray(self):
        rng = np.random.default_rng(1)
        a = rng.random((24, 24, 3))
        b = np.clip(a + rng.normal(0.0, 0.1, a.shape), 0.0, 1.0)
        self.assertAlmostEqual(ssim(a.mean(axis=2), b.mean(axis=2)), ssim(a, b), places=12)
        with self.assertRaises(ValueError):
            ssim(np.zeros((16, 16, 3, 1)), np.zeros((16, 16, 3, 1)))

    def test_image_metrics(self):
        frames = [np.full((12, 12), 0.5), np.full((12, 12), 0.2)]
        rows = image_metrics(frames, [np.full((12, 12), 0.5), np.full((12, 12), 0.3)])
        self.assertEqual([0, 1], [r.frame for r in rows])
        self.assertTrue(math.isinf(rows[0].psnr))
        self.assertAlmostEqual(20.0, rows[1].psnr)
        with self.assertRaises(ValueError):
            image_metrics(frames, frames[:1])


class TestVolumeMetrics(unittest.TestCase):

    def test_scale_invariance(self):
        gt = np.random.default_rng(2).random((6, 6, 6))
        self.assertAlmostEqual(0.0, si_rmse(2.0 * gt, gt))
        self.assertAlmostEqual(0.5, fit_scale(2.0 * gt, gt, density_mask(gt)))
        self.assertGreater(si_rmse(gt[::-1], gt), 0.1)
        self.assertEqual(0.0, fit_scale(np.zeros((2, 2, 2)), np.ones((2, 2, 2)), density_mask(np.ones((2, 2, 2)))))

    def test_mask(self):
        gt = np.zeros((4, 4, 4))
        gt[1, 1, 1] = 2.0
        pred = np.zeros((4, 4, 4))
        pred[1, 1, 1] = 1.0
        pred[3, 3, 3] = 100.0
        self.assertAlmostEqual(0.0, si_rmse(pred, gt))
        self.assertAlmostEqual(2.0, masked_rms(gt))
        with self.assertRaises(ValueError):
            si_rmse(pred, np.zeros((4, 4, 4)))
        with self.assertRaises(ValueError):
            masked_rms(np.zeros((4, 4, 4)))

    def test_warp_error(self):
        density = np.random.default_rng(3).random((5, 5, 5))
        self.assertAlmostEqual(0.0, zero_velocity_warp_error(density, density, 0.1))
        self.assertAlmostEqual(0.0, warp_error(density, density, MacGrid.zeros((5, 5, 5)), 0.1))
        with self.assertRaises(ValueError):
            warp_error(density, density, MacGrid.zeros((4, 4, 4)), 0.1)


class TestMetricsTable(unittest.TestCase):

    def test_summary(self):
        rows = [FrameMetrics(0, psnr=math.inf, ssim=1.0), FrameMetrics(1, psnr=30.0, ssim=0.5, si_rmse=0.1)]
        summary = summarize(rows)
        self.assertEqual(30.0, summary["psnr"])
        self.assertEqual(0.75, summary["ssim"])
        self.assertEqual(0.1, summary["si_rmse"])
        self.assertIsNone(summary["warp_error"])

    def test_csv(self):
        rows = [FrameMetrics(0, psnr=math.inf, ssim=1.0), FrameMetrics(1, psnr=31.5, ssim=0.25, warp_error=0.125)]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out", "metrics.csv")
            write_metrics_csv(path, rows)
            with open(path) as file:
                self.assertEqual("frame,psnr,ssim,si_rmse,warp_error", file.readline().strip())
                self.assertEqual("0,inf,1,,", file.readline().strip())
            read = read_metrics_csv(path)
        self.assertEqual(2, len(read))
        self.assertTrue(math.isinf(read[0].psnr))
        self.assertIsNone(read[0].si_rmse)
        self.assertEqual(0.125, read[1].warp_error)
        self.assertEqual(31.5, read[1].psnr)
