#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# fluidfields-core documentation build configuration file.
#
# This file is execfile()d with the current directory set to its containing dir.
#
__SPHINX_RTD_THEME__ = False
try:
    import sphinx_rtd_theme
    __SPHINX_RTD_THEME__ = True
except ImportError:
    pass
import os
import sys
sys.path.insert(0, os.path.abspath('.'))
sys.path.append("../")

if sys.version_info[0] < 3:
    print(sys.version_info)
    raise RuntimeError("Your Python has version 2. This project is Python 3.x.")

from fluidfields import version as ff_version


# Document __init__ methods, where most classes describe their parameters.
def skip(app, what, name, obj, skip, options):
    if name == "__init__":
        return False
    return skip


def setup(app):
    app.connect("autodoc-skip-member", skip)


# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.autosummary',
    'sphinx.ext.mathjax'
]

autodoc_member_order = 'bysource'
autosummary_generate = False
autodoc_mock_imports = ['gnureadline']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'fluidfields-core'
copyright = '2026, fluidfields-core developers'
author = 'fluidfields-core developers'

version = '.'.join(ff_version.__version__.split('.')[:2])
release = ff_version.__version__

language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store', '**/*test*', 'fluidfields/*/test/*']
pygments_style = 'sphinx'
todo_include_todos = False

# -- Options for HTML output ----------------------------------------------

if __SPHINX_RTD_THEME__:
    html_theme = "sphinx_rtd_theme"
    html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
else:
    html_theme = "alabaster"

html_static_path = []
htmlhelp_basename = 'fluidfields-coredoc'

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}
latex_documents = [
    (master_doc, 'fluidfields-core.tex', 'fluidfields-core Documentation', author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'fluidfields-core', 'fluidfields-core Documentation', [author], 1)
]

# -- Options for Texinfo output -------------------------------------------

texinfo_documents = [
    (master_doc, 'fluidfields-core', 'fluidfields-core Documentation', author, 'fluidfields-core',
     'Reconstruct smoke density and velocity fields from sparse multi-view videos.', 'Miscellaneous'),
]
