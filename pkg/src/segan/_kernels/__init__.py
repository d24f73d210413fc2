"""Convolution kernel backend, chosen once at import.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Set ``SEGAN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _conv_py

BACKENDS = {"python": _conv_py}

try:
    from . import _conv_ext
except ImportError:  # extension not built
    _conv_ext = None
else:
    BACKENDS["compiled"] = _conv_ext

if os.environ.get("SEGAN_PURE_PYTHON", "") not in ("", "0") or _conv_ext is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"

_active = BACKENDS[BACKEND]
conv2d_forward = _active.conv2d_forward
conv2d_backward = _active.conv2d_backward

__all__ = ["BACKEND", "BACKENDS", "conv2d_forward", "conv2d_backward"]
