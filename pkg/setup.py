"""Build the optional Cython kernels.

The package works without them: ``facetraj._backend`` falls back to the
numpy/pure-Python kernels when ``facetraj._ckernels`` cannot be imported.
Set ``FACETRAJ_NO_EXT=1`` to skip the extension build entirely.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FACETRAJ_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "facetraj._ckernels",
                    ["src/facetraj/_ckernels.pyx"],
                    include_dirs=[np.get_include(), "src/facetraj"],
                    # no -ffast-math and no FMA contraction: backends must agree to rounding
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-math-errno"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
