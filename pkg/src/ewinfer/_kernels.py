"""Select the walk kernel: compiled if available, else pure Python.

Set ``EWINFER_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _walk_py

BACKEND = "python"
walk = _walk_py.walk

if not os.environ.get("EWINFER_PURE_PYTHON"):
    try:
        from ._walk import walk  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass

DONE = _walk_py.DONE
NEEDS_SLOW_STEP = _walk_py.NEEDS_SLOW_STEP
NEEDS_REFRESH = _walk_py.NEEDS_REFRESH


def get_kernel(name: str | None = None):
    """Return ``(name, walk)`` for ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return BACKEND, walk
    if name == "python":
        return "python", _walk_py.walk
    if name == "cython":
        from ._walk import walk as compiled
        return "cython", compiled
    raise ValueError(f"unknown kernel backend {name!r}")
