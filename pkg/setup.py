#!/usr/bin/env python3
# -*- coding: utf-8 -*-
from setuptools import setup
from fluidfields import version

setup(
    name='fluidfields-core',
    version=version.__version__,
    packages=['fluidfields.util', 'fluidfields.core', 'fluidfields.cli'],
    license='Apache License 2.0',
    description='Reconstruct smoke density and velocity fields from sparse multi-view videos',
    install_requires=['numpy', 'scipy', 'scikit-image>=0.19'],
    extras_require={'shell': ['gnureadline']},
    entry_points={'console_scripts': ['ffcli = fluidfields.cli.ffcli:main']}
)
