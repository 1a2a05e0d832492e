"""Select the compiled kernels when importable, otherwise the numpy fallback.

``ROBUST_SEMIGROUP_BACKEND=python`` forces the fallback;
``ROBUST_SEMIGROUP_THREADS`` caps the OpenMP thread count (0 = automatic).
"""
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

KIND_BALL = _kernels_py.KIND_BALL
KIND_POWER = _kernels_py.KIND_POWER


def available() -> tuple[str, ...]:
    return ("compiled", "python") if _compiled is not None else ("python",)


def get(name: str | None = None):
    """Kernel module by name; ``None`` means the configured default."""
    name = name or os.environ.get("ROBUST_SEMIGROUP_BACKEND", "auto")
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("the compiled kernels are not built")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    return _compiled if _compiled is not None else _kernels_py


def threads() -> int:
    try:
        return max(0, int(os.environ.get("ROBUST_SEMIGROUP_THREADS", "0")))
    except ValueError:
        return 0
