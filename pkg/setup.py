"""Build script for the optional Cython bit-serial kernel.

The package works without the extension; ``bbnn_imc.kernels`` falls back to
the numpy implementation when the compiled module cannot be imported.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BBNN_IMC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "bbnn_imc.kernels._bitserial",
                    ["src/bbnn_imc/kernels/_bitserial.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
