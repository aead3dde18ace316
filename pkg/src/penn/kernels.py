"""Kernel backend selection.

The compiled extension is used when importable; setting ``PENN_PURE_PYTHON=1``
forces the numpy fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _kernels_py

if os.environ.get("PENN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

OK = _kernels_py.OK
ERR_GEOMETRY = _kernels_py.ERR_GEOMETRY
ERR_NONFINITE = _kernels_py.ERR_NONFINITE

physics_step = _impl.physics_step
phase_one_epoch = _impl.phase_one_epoch
sosfilt = _impl.sosfilt


def backend_module(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    from . import _kernels  # type: ignore[attr-defined]
    return _kernels
