# Sphinx configuration for the gait-ssa documentation.

import glob
import os
import subprocess
import sys
from importlib.metadata import version as _dist_version

sys.path.insert(0, os.path.abspath("../.."))

project = "gait-ssa"
author = "the gait-ssa developers"
copyright = author
release = version = _dist_version("gait-ssa")

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.napoleon",
    "sphinxcontrib_trio",
    "sphinxcontrib.jquery",
]
master_doc = "index"
language = "en"
default_role = "obj"
highlight_language = "python3"

autodoc_member_order = "bysource"
autodoc_inherit_docstrings = False
napoleon_use_rtype = False

# array and tensor annotations have no intersphinx targets of their own
nitpicky = True
nitpick_ignore = [
    ("py:class", name)
    for name in ("None", "numpy.ndarray", "np.ndarray", "torch.Tensor", "os.PathLike")
]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "trio": ("https://trio.readthedocs.io/en/stable", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "torch": ("https://pytorch.org/docs/stable", None),
}

html_theme = "sphinx_rtd_theme"
html_theme_options = {"navigation_depth": 3}

# unreleased changes show up in the hosted history page
if "READTHEDOCS" in os.environ and glob.glob("../../newsfragments/*.*.rst"):
    subprocess.run(
        ["towncrier", "build", "--yes", "--version", version], cwd="../..", check=True
    )
