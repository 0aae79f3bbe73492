from setuptools import setup, Extension

import numpy as np

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sscirl._kernel",
                ["src/sscirl/_kernel.pyx"],
                include_dirs=[np.get_include()],
                # no FP contraction: the pure-Python fallback must be
                # bit-identical to the compiled kernel
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # no Cython available: install pure-Python only, kernel.py falls back
    ext_modules = []

setup(ext_modules=ext_modules)
