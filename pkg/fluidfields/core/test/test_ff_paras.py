#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import unittest

from fluidfields.core.ff_enum import Ablation, Stage, FaceCondition
from fluidfields.core.ff_paras import RunParameters, GridParameters, SolverParameters, DataParameters


class TestParameters(unittest.TestCase):

    def test_screening(self):
        grid = GridParameters(base_res="4", finest_res=8.0)
        self.assertEqual(4, grid.base_res)
        self.assertEqual(8, grid.finest_res)
        with self.assertRaises(ValueError):
            grid.num_levels = 0
        with self.assertRaises(ValueError):
            grid.init_scale = float("nan")
        with self.assertRaises(ValueError):
            grid.not_a_parameter = 3
        with self.assertRaises(ValueError):
            grid.hidden_activation = "tanh"
        grid.hidden_activation = "softplus"
        self.assertEqual("softplus", grid.hidden_activation.name)

    def test_bool(self):
        paras = RunParameters()
        paras.set("render.rgb", "yes")
        self.assertTrue(paras.render.rgb)
        paras.set("render.rgb", "off")
        self.assertFalse(paras.render.rgb)
        with self.assertRaises(ValueError):
            paras.set("render.rgb", "maybe")

    def test_open_faces(self):
        solver = SolverParameters(open_faces=" y+ , x- ")
        self.assertEqual("y+,x-", solver.open_faces)
        conditions = solver.face_conditions()
        self.assertEqual(FaceCondition.open, conditions["y+"])
        self.assertEqual(FaceCondition.solid, conditions["z-"])
        with self.assertRaises(ValueError):
            solver.open_faces = "top"
        solver.open_faces = ""
        self.assertTrue(all(c == FaceCondition.solid for c in solver.face_conditions().values()))

    def test_test_views(self):
        data = DataParameters(test_views="0, 3")
        self.assertEqual([0, 3], data.test_indices())
        self.assertEqual([1, 2, 4], data.train_indices())
        with self.assertRaises(ValueError):
            data.test_views = "a,b"

    def test_copy_and_equality(self):
        paras = RunParameters()
        paras.set("grid.base_res", 4)
        other = paras.copy()
        self.assertEqual(paras, other)
        other.set("grid.base_res", 6)
        self.assertNotEqual(paras, other)
        self.assertEqual(4, paras.get("grid.base_res"))

    def test_unknown_keys(self):
        paras = RunParameters()
        with self.assertRaises(ValueError):
            paras.set("grid", 4)
        with self.assertRaises(ValueError):
            paras.set("nogroup.base_res", 4)
        with self.assertRaises(ValueError):
            paras.get("grid.nothing")
        with self.assertRaises(AttributeError):
            paras.grid = GridParameters()
        with self.assertRaises(ValueError):
            RunParameters(nothing=GridParameters())

    def test_validate(self):
        paras = RunParameters()
        paras.set("grid.base_res", 32)
        paras.set("grid.finest_res", 16)
        with self.assertRaises(ValueError):
            paras.validate()
        paras = RunParameters()
        paras.set("data.num_cameras", 2)
        paras.set("data.test_views", "0,1")
        with self.assertRaises(ValueError):
            paras.validate()
        paras.set("data.test_views", "5")
        with self.assertRaises(ValueError):
            paras.validate()

    def test_full_scale(self):
        paras = RunParameters.full_scale()
        self.assertEqual(16, paras.grid.num_levels)
        self.assertEqual(256, paras.grid.finest_res)
        self.assertEqual(128, paras.grid.finest_time_res)
        self.assertEqual(2 ** 19, paras.grid.hash_table_size)
        self.assertEqual(0, RunParameters().grid.hash_table_size)
        self.assertEqual(200000, paras.train.iterations(Stage.density))
        self.assertEqual(50000, paras.train.iterations(Stage.base_flow))
        self.assertEqual(5000, paras.train.iterations(Stage.vortex))
        paras.validate()

    def test_ablation(self):
        paras = RunParameters()
        paras.set("train.ablation", "naive")
        self.assertFalse(paras.apply_ablation())
        self.assertEqual(0.0, paras.loss.laminar)
        self.assertEqual(0.0, paras.loss.projection)
        paras = RunParameters()
        paras.set("train.ablation", Ablation.laminar)
        self.assertFalse(paras.apply_ablation())
        self.assertEqual(10.0, paras.loss.laminar)
        self.assertEqual(0.0, paras.loss.projection)
        paras = RunParameters()
        self.assertTrue(paras.apply_ablation())
        self.assertEqual(1.0, paras.loss.projection)

    def test_stage_selection(self):
        self.assertEqual([Stage.density, Stage.base_flow, Stage.vortex], Stage.parse_selection("1-3"))
        self.assertEqual([Stage.density, Stage.vortex], Stage.parse_selection("vortex, 1"))
        with self.assertRaises(ValueError):
            Stage.parse_selection("4")
        with self.assertRaises(ValueError):
            Stage.parse_selection("3-1")
        with self.assertRaises(ValueError):
            Stage.parse_selection("")
