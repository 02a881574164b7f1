from setuptools import Extension, setup

import numpy as np
from Cython.Build import cythonize

ext = Extension(
    "dfp._ckernels",
    ["src/dfp/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(
    ext_modules=cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    ),
)
