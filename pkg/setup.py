"""Build script. Compiles the sweep kernel when Cython and a C compiler are
available; otherwise installs pure-Python only (the package falls back at
import time, see exitcert._kernels)."""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "exitcert._kernels._sweep",
                sources=["src/exitcert/_kernels/_sweep.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
