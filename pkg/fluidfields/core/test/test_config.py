#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import os
import tempfile
import unittest
from unittest import mock

from fluidfields.core import config
from fluidfields.core.config import Configurations, parse_run_config, format_run_config
from fluidfields.core.ff_paras import RunParameters


class TestRunConfig(unittest.TestCase):

    def test_parse(self):
        text = "# a comment\ngrid.base_res = 4\ngrid.finest_res = 16\nsolver.open_faces = \nloss.laminar = 0\n"
        paras = parse_run_config(text)
        self.assertEqual(4, paras.grid.base_res)
        self.assertEqual(16, paras.grid.finest_res)
        self.assertEqual("", paras.solver.open_faces)
        self.assertEqual(0.0, paras.loss.laminar)

    def test_parse_errors(self):
        with self.assertRaises(ValueError):
            parse_run_config("grid.unknown = 1")
        with self.assertRaises(ValueError):
            parse_run_config("grid.base_res = -1")
        with self.assertRaises(ValueError):
            parse_run_config("[other]\ngrid.base_res = 4")
        with self.assertRaises(ValueError):
            parse_run_config("grid.base_res = 64\ngrid.finest_res = 8")

    def test_format_parses_back(self):
        paras = RunParameters()
        paras.set("train.ablation", "laminar")
        paras.set("render.rgb", True)
        paras.set("data.test_views", "1,2")
        self.assertEqual(paras, parse_run_config(format_run_config(paras)))


class TestConfigurations(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.env = mock.patch.dict(os.environ, {config.ENV_CONFIG_DIR: self.tmp.name})
        self.env.start()

    def tearDown(self):
        self.env.stop()
        self.tmp.cleanup()

    def test_save_load_remove(self):
        paras = RunParameters()
        paras.set("sim.viscosity", 0.01)
        Configurations.save_configuration_as(paras, "low_viscosity")
        self.assertEqual(["low_viscosity"], Configurations.list_configurations())
        self.assertEqual(paras, Configurations.load_configuration("low_viscosity"))
        self.assertEqual(paras, Configurations.resolve("low_viscosity"))

        self.assertTrue(Configurations.remove_configuration("low_viscosity"))
        self.assertFalse(Configurations.remove_configuration("low_viscosity"))
        with self.assertRaises(ValueError):
            Configurations.load_configuration("low_viscosity")
        with self.assertRaises(ValueError):
            Configurations.resolve("low_viscosity")
        with self.assertRaises(ValueError):
            Configurations.save_configuration_as(paras, "")

    def test_resolve_file_and_default(self):
        path = os.path.join(self.tmp.name, "run.txt")
        with open(path, "w") as file:
            file.write("grid.num_levels = 2\n")
        self.assertEqual(2, Configurations.resolve(path).grid.num_levels)
        self.assertEqual(RunParameters(), Configurations.resolve(None))
        base = RunParameters()
        base.set("grid.num_levels", 3)
        resolved = Configurations.resolve(None, base)
        self.assertEqual(base, resolved)
        self.assertIsNot(base, resolved)
