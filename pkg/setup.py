"""Build the optional Cython kernel module.

If Cython or a C compiler is unavailable the package installs without the
extension and ``dan.kernels`` falls back to the NumPy implementations.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DAN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dan._ckernels",
                    ["src/dan/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
