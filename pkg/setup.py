"""Build script for the compiled kernel extension.

The package works without the extension (a pure NumPy/Python fallback is
selected at import time); building it just makes the hot loops fast.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "condforge._kernels._native",
                ["src/condforge/_kernels/_native.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
