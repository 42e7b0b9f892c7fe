"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed. Set MASCARA_REQUIRE_EXT=1
to turn a build failure into a hard error.
"""

import os

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build environment without cython
    numpy = None
    cythonize = None


def extensions():
    if cythonize is None:
        if os.environ.get("MASCARA_REQUIRE_EXT") == "1":
            raise RuntimeError("Cython/numpy required to build the compiled kernels")
        return []
    ext = Extension(
        "mascara.grad._kernels",
        sources=["src/mascara/grad/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
