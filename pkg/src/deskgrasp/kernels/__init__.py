"""Backend dispatch for the hot numeric kernels.

``DESKGRASP_BACKEND=numpy`` forces the pure-numpy path; ``numba`` (or unset)
uses the compiled kernels when numba imports cleanly. The choice is made
once at import time. Both implementations share names and signatures, so
callers just do ``from deskgrasp.kernels import fk_chain``.
"""

from __future__ import annotations

import os
import warnings

from . import numpy_impl

_ENV = "DESKGRASP_BACKEND"
_NAMES = [
    "quat_mul", "quat_rotate", "fk_chain", "frame_world", "jacobian_chain",
    "sdf_world", "tip_contacts", "raycast_depth", "tactile_patch",
    "im2col", "col2im",
]

SHAPE_SPHERE = numpy_impl.SHAPE_SPHERE
SHAPE_BOX = numpy_impl.SHAPE_BOX
SHAPE_CYLINDER = numpy_impl.SHAPE_CYLINDER


def _pick():
    choice = os.environ.get(_ENV, "").strip().lower()
    if choice not in ("", "numpy", "numba"):
        raise ValueError(f"{_ENV} must be 'numpy' or 'numba', got {choice!r}")
    if choice == "numpy":
        return "numpy", numpy_impl
    try:
        from . import numba_impl
    except ImportError:
        if choice == "numba":
            warnings.warn(f"{_ENV}=numba but numba is unavailable; "
                          "falling back to numpy kernels")
        return "numpy", numpy_impl
    return "numba", numba_impl


BACKEND, _impl = _pick()

for _n in _NAMES:
    globals()[_n] = getattr(_impl, _n)

__all__ = ["BACKEND", "SHAPE_SPHERE", "SHAPE_BOX", "SHAPE_CYLINDER", *_NAMES]
