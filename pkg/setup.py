"""Build the optional Cython kernels.

The package works without them: ``decentmem.kernels`` falls back to the
numpy implementation when the extension is missing.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("DECENTMEM_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "decentmem._kernels_c",
                    ["src/decentmem/_kernels_c.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"] if sys.platform != "win32" else ["/O2"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
