"""Kernel backend selection.

The compiled module is used when importable unless ``VSSGP_BACKEND=python``
is set.  :func:`use` switches at runtime (benchmarks and tests compare both).
"""

import os

from vssgp import _kernels_py

try:
    from vssgp import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_num_threads = 1


def available():
    return tuple(_BACKENDS)


def _default():
    forced = os.environ.get("VSSGP_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise RuntimeError(f"VSSGP_BACKEND={forced!r} is not available; have {available()}")
        return forced
    return "compiled" if _compiled is not None else "python"


_active = _default()


def name():
    return _active


def use(backend, num_threads=None):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active, _num_threads
    if backend not in _BACKENDS:
        raise ValueError(f"backend {backend!r} not available; have {available()}")
    prev = _active
    _active = backend
    if num_threads is not None:
        _num_threads = max(1, int(num_threads))
    return prev


def moments(*args):
    if _active == "compiled":
        return _compiled.moments(*args, num_threads=_num_threads)
    return _kernels_py.moments(*args)


def moments_vjp(*args):
    if _active == "compiled":
        return _compiled.moments_vjp(*args, num_threads=_num_threads)
    return _kernels_py.moments_vjp(*args)
