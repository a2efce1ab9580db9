"""Kernel backend selection.

The compiled extension is preferred. Set ``CARLAB_BACKEND=python`` to force
the numpy fallback, or ``CARLAB_BACKEND=compiled`` to make a missing
extension an import error instead of a silent downgrade.
"""

import logging
import os

from carlab.nn import _pykernels

log = logging.getLogger(__name__)

_choice = os.environ.get("CARLAB_BACKEND", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"CARLAB_BACKEND must be auto|compiled|python, got {_choice!r}")

_impl = _pykernels
if _choice != "python":
    try:
        from carlab.nn import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        log.info("compiled kernels unavailable; using numpy fallback")

BACKEND = _impl.BACKEND
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
meanpool2d = _impl.meanpool2d
upsample2d = _impl.upsample2d


def compiled_available():
    try:
        from carlab.nn import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name):
    """Return a kernel module by name (``"compiled"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        from carlab.nn import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
