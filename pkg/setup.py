"""Build the optional Cython kernels; the package works without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("OPENBATH_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            "src/openbath/_ckernels.pyx",
            compiler_directives={"language_level": 3, "boundscheck": False, "wraparound": False, "cdivision": True},
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())
            # Smith-scaled complex division without the C99 inf/nan recovery path of __divdc3
            ext.extra_compile_args += ["-O3", "-fcx-fortran-rules"]
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
