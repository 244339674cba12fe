"""Build the optional compiled engine kernel.

When Cython or a compiler is unavailable the package installs without it and
falls back to the pure-Python kernel at import time.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PIPEFLOW_NO_EXTENSIONS", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("pipeflow.engine._kernels",
                       [os.path.join("src", "pipeflow", "engine", "_kernels.pyx")],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
