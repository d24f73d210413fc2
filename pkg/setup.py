import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SEGAN_PURE_PYTHON", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # build without the compiled core
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "segan._kernels._conv_ext",
                    ["src/segan/_kernels/_conv_ext.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
