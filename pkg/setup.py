import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SEMTOK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "semtok._kernels",
                    ["src/semtok/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps sums bitwise equal to numpy
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
