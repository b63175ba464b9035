"""Kernel backend selection.

The compiled extension is preferred; set ``ABCNN_PURE_PYTHON=1`` to force
the numpy fallback (the benchmark and the backend-parity tests do this).
"""
import os

from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("ABCNN_PURE_PYTHON", "") in ("", "0"):
    _active = compiled_backend
else:
    _active = python_backend

BACKEND = _active.BACKEND
conv2d_forward = _active.conv2d_forward
conv2d_backward = _active.conv2d_backward
maxpool_forward = _active.maxpool_forward
maxpool_backward = _active.maxpool_backward
decode_212 = _active.decode_212
encode_212 = _active.encode_212
adam_update = _active.adam_update
