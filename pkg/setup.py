"""Build script for the optional compiled kernel core.

The compiled extension accelerates the convolution/pooling data-movement
kernels used by the CNN.  If it cannot be built (no compiler, no Cython),
the package still installs and falls back to the pure-numpy kernels at
import time.  Set JOBSIG_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("JOBSIG_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "jobsig.kernels._ckernels",
                    ["src/jobsig/kernels/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    # no -ffast-math: the compiled path must stay
                    # bit-compatible with the numpy fallback
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
