#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Run configuration files and named configurations`

A run configuration is a plain-text file of ``key = value`` lines. Keys have the form ``group.name``, for
instance::

    # desk-scale smoke
    grid.base_res = 8
    grid.finest_res = 64
    loss.laminar = 10
    solver.open_faces = y+

Lines starting with ``#`` are comments. Unknown keys are rejected and all values are validated when the file is
loaded (see :doc:`fluidfields.core.ff_paras <fluidfields.core.ff_paras>`).

The class :class:`Configurations` (mark the `s` at the end) enables you to save, load, remove and list
named configurations. The location where they are stored is system-dependent:

 - ``{user-home}\\AppData\\Local\\fluidfields\\config\\`` on Windows
 - ``{user-home}/.config/fluidfields/config/`` on Mac and Linux
 - ``$FF_CONFIG_DIR`` if that environment variable is set

"""
import logging
import os
import platform
from configparser import ConfigParser, Error as ConfigParserError
from glob import glob

from fluidfields.core.ff_paras import RunParameters

CFG_DIRNAME = "config"
SECTION_RUN = "run"
EXT = ".cfg"
ENV_CONFIG_DIR = "FF_CONFIG_DIR"

LOG = logging.getLogger(__name__)


def parse_run_config(text, paras: RunParameters=None, source="<string>") -> RunParameters:
    """
    :samp:`Parse the text of a run configuration`

    :param str text: ``key = value`` lines, optionally under a ``[run]`` section header
    :param paras: parameters to update, a fresh :class:`~fluidfields.core.ff_paras.RunParameters` if None
    :param str source: name used in messages
    :return: the updated parameters
    :raises: :exc:`ValueError` on syntax errors, unknown keys or invalid values
    """
    paras = paras.copy() if paras else RunParameters()
    parser = ConfigParser(interpolation=None)
    if not text.lstrip().startswith("["):
        text = "[%s]\n%s" % (SECTION_RUN, text)
    try:
        parser.read_string(text, source=source)
    except ConfigParserError as err:
        raise ValueError("Invalid configuration %s: %s" % (source, err))
    for section in parser.sections():
        if section != SECTION_RUN:
            raise ValueError("Invalid configuration %s: unexpected section [%s]" % (source, section))
    if parser.has_section(SECTION_RUN):
        for key, value in parser.items(SECTION_RUN):
            paras.set(key, value)
    return paras.validate()


def read_run_config(filename, paras: RunParameters=None) -> RunParameters:
    """
    :samp:`Read a run configuration file`

    :param str filename: path to the file
    :param paras: parameters to update
    :return: the updated parameters
    :raises: :exc:`ValueError` if the file does not exist or is not valid
    """
    if not os.path.isfile(filename):
        raise ValueError("Configuration file not found: %s" % filename)
    with open(filename, "r", encoding="utf-8") as f:
        text = f.read()
    LOG.debug("Reading configuration %s", filename)
    return parse_run_config(text, paras, source=filename)


def format_run_config(paras: RunParameters) -> str:
    lines = ["# fluidfields run configuration"]
    group = None
    for key, value in paras.as_strings():
        prefix = key.split(".", 1)[0]
        if prefix != group:
            lines.append("")
            group = prefix
        lines.append("%s = %s" % (key, value))
    return "\n".join(lines) + "\n"


def write_run_config(paras: RunParameters, filename):
    directory = os.path.dirname(os.path.abspath(filename))
    if not os.path.exists(directory):
        os.makedirs(directory)
    with open(filename, "w", encoding="utf-8") as f:
        f.write(format_run_config(paras))
    LOG.debug("Persisted %s", filename)


class Configurations(object):
    """
    :samp:`Enables saving, loading, listing and removing {configurations}`

    All methods are static::

        Configurations.list_configurations()
        Configurations.load_configuration("plume_low_viscosity")
        # etc.

    """
    @staticmethod
    def __get__logger():
        logger = logging.getLogger(__name__)
        return logger

    @staticmethod
    def config_path():
        """
        :samp:`The directory of named configurations, created if absent`

        :return: absolute path
        """
        c_path = os.environ.get(ENV_CONFIG_DIR)
        if not c_path:
            c_path = os.path.expanduser("~")
            opsys = platform.system()
            if opsys == "Windows":
                win_path = os.path.join(c_path, "AppData", "Local")
                if os.path.exists(win_path):
                    c_path = win_path
            elif opsys in ("Darwin", "Linux"):
                c_path = os.path.join(c_path, ".config")
            c_path = os.path.join(c_path, "fluidfields", CFG_DIRNAME)
        if not os.path.exists(c_path):
            os.makedirs(c_path)
        return c_path

    @staticmethod
    def list_configurations() -> list:
        """
        :samp:`List available configurations`

        :return: list of names of previously saved configurations
        """
        config_files = sorted(glob(os.path.join(Configurations.config_path(), "*" + EXT)))
        return [os.path.splitext(os.path.basename(x))[0] for x in config_files]

    @staticmethod
    def load_configuration(name: str) -> RunParameters:
        """
        :samp:`Load the configuration with the given name`

        :param name: name of a previously saved configuration
        :return: the restored :class:`~fluidfields.core.ff_paras.RunParameters`
        :raises: :exc:`ValueError` if no configuration with that name exists
        """
        if name not in Configurations.list_configurations():
            raise ValueError("No configuration named '%s'" % name)
        paras = read_run_config(os.path.join(Configurations.config_path(), name + EXT))
        Configurations.__get__logger().info("Loaded configuration %s", name)
        return paras

    @staticmethod
    def save_configuration_as(paras: RunParameters, name: str):
        """
        :samp:`Save parameters under the given name`

        Any previously saved configuration with the same name will be overwritten without warning.

        :param paras: the parameters to save
        :param name: name under which the configuration will be saved
        """
        if name is None or name == "":
            raise ValueError("Invalid configuration name. (None or empty string)")
        nam = os.path.splitext(os.path.basename(name))[0]
        write_run_config(paras, os.path.join(Configurations.config_path(), nam + EXT))
        Configurations.__get__logger().info("Saved configuration %s", nam)

    @staticmethod
    def remove_configuration(name: str):
        """
        :samp:`Remove the configuration with the given name`

        :param name: the name of the configuration to remove
        :return: **True** if the configuration was successfully removed, **False** otherwise
        """
        if name is None or name == "":
            raise ValueError("Invalid configuration name '%s'" % name)
        nam = os.path.splitext(os.path.basename(name))[0]
        config_file = os.path.join(Configurations.config_path(), nam + EXT)
        if os.path.exists(config_file):
            os.remove(config_file)
            Configurations.__get__logger().info("Removed configuration %s", nam)
            return True
        else:
            return False

    @staticmethod
    def resolve(path_or_name, paras: RunParameters=None) -> RunParameters:
        """
        :samp:`Read a configuration given as file path or saved name`

        :param str path_or_name: existing file or name of a saved configuration; None gives defaults
        :param paras: parameters to update
        :return: the parameters
        """
        if not path_or_name:
            return paras.copy() if paras else RunParameters()
        if os.path.isfile(path_or_name):
            return read_run_config(path_or_name, paras)
        if path_or_name in Configurations.list_configurations():
            return read_run_config(os.path.join(Configurations.config_path(), path_or_name + EXT), paras)
        raise ValueError("No configuration file or saved configuration named '%s'" % path_or_name)
