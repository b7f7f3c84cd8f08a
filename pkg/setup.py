"""Build script: compiles the optional native kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed, never functionality.
"""

import os

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    if not os.path.exists("src/gastro3d/kernels/_native.pyx"):
        raise ImportError("no kernel sources")
    ext_modules = cythonize(
        [
            Extension(
                "gastro3d.kernels._native",
                sources=["src/gastro3d/kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
