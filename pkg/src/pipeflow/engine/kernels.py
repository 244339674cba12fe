"""Kernel backend selection.

The compiled extension is used when it is importable; setting
``PIPEFLOW_PURE_PYTHON=1`` forces the pure-Python version.
"""
import os

from . import _kernels_py

PURE_PYTHON_ENV = "PIPEFLOW_PURE_PYTHON"

python_backend = _kernels_py

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if os.environ.get(PURE_PYTHON_ENV, "") not in ("", "0") or compiled_backend is None:
    backend = python_backend
    BACKEND_NAME = "python"
else:
    backend = compiled_backend
    BACKEND_NAME = "cython"

conv_block = backend.conv_block
