"""Build hook for the optional compiled kernels.

Set PKG_NO_EXTENSION=1 to skip compilation entirely; the package then uses
the pure-Python kernels selected at import time.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PKG_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize
        from setuptools.extension import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "pkgraph._kernels._native",
                    ["src/pkgraph/_kernels/_native.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
