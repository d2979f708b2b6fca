import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("COCGAN_PURE_PYTHON"):
    ext_modules = cythonize(
        [
            Extension(
                "cocgan._kernels",
                ["src/cocgan/_kernels.pyx"],
                include_dirs=[np.get_include(), "src/cocgan"],
                # finite-math lets the float32 clamps in _fastmath.h vectorize
                extra_compile_args=["-O3", "-fno-trapping-math", "-ffinite-math-only", "-fno-signed-zeros"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
