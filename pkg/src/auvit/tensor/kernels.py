"""Kernel backend selection.

The compiled extension is used when it was built and ``AUVIT_PURE_PYTHON`` is
unset; otherwise the numpy implementation in :mod:`._pykernels` is used.
"""

import os

from . import _pykernels

if os.environ.get("AUVIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

dwconv3x3_forward = _impl.dwconv3x3_forward
dwconv3x3_backward = _impl.dwconv3x3_backward
