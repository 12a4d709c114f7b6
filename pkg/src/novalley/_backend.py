"""Kernel backend selection.

The compiled extension is used when it imports; ``NOVALLEY_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _fallback

_REQUESTED = os.environ.get("NOVALLEY_BACKEND", "auto").lower()

kernels = _fallback
if _REQUESTED != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
    except ImportError:
        if _REQUESTED == "cython":
            raise


def available():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get(name=None):
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
