"""Build hook: compile the optional Cython kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so any failure here — missing compiler, missing
Cython — downgrades to a pure-Python install instead of aborting.
Set EXACTOED_SKIP_EXT=1 to skip the compile step explicitly.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("EXACTOED_SKIP_EXT", "0") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "exactoed._kernels",
                    ["src/exactoed/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - build-environment dependent
        print(f"exactoed: skipping compiled kernels ({exc}); using NumPy fallback")

setup(ext_modules=ext_modules)
