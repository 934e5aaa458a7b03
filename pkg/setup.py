"""Build script: compiles the optional fast kernels when Cython is available.

The package is fully functional without the extension; moekgc.kernels falls
back to the numpy implementation at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("MOEKGC_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "moekgc.kernels._fast",
                    ["src/moekgc/kernels/_fast.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
