"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
pure-Python ``_fallback`` takes over with identical semantics.
"""
import warnings

from . import _fallback as python_impl

try:
    from . import _core as cython_impl
except ImportError:  # pragma: no cover - depends on the build
    cython_impl = None
    warnings.warn(
        "nanopat._core extension not built; using the pure-Python kernels",
        RuntimeWarning,
        stacklevel=2,
    )

impl = cython_impl if cython_impl is not None else python_impl
BACKEND = "cython" if cython_impl is not None else "python"


def get(name=None):
    """Return the kernel module ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return impl
    if name == "python":
        return python_impl
    if name == "cython":
        if cython_impl is None:
            raise ImportError("compiled kernels are not available")
        return cython_impl
    raise ValueError(f"unknown backend {name!r}")
