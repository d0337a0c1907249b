from setuptools import setup, Extension

import numpy as np

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "microloc._kernels",
                ["src/microloc/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # pure-Python fallback is selected at import time
    extensions = []

setup(ext_modules=extensions)
