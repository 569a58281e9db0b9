"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed build is downgraded to a warning.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "sregnn.kernels._ckernels",
        ["src/sregnn/kernels/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level=3)
except ImportError as exc:  # pragma: no cover - build-env dependent
    import warnings

    warnings.warn(f"Cython kernels not built ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)
