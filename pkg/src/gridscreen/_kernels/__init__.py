"""Batched trajectory kernels with an optional compiled fast path.

The compiled extension is built from Cython when the toolchain allows;
otherwise the numpy implementation serves every call. Selection happens
once at import and can be forced with the ``GRIDSCREEN_KERNEL``
environment variable (``compiled`` or ``python``).
"""

import os

from . import _sweep_py

try:
    from . import _sweep_cy
except ImportError:
    _sweep_cy = None

_BACKENDS = {"python": _sweep_py}
if _sweep_cy is not None:
    _BACKENDS["compiled"] = _sweep_cy


class KernelError(Exception):
    pass


def available_backends():
    return tuple(sorted(_BACKENDS))


def default_backend():
    forced = os.environ.get("GRIDSCREEN_KERNEL", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise KernelError(
                f"GRIDSCREEN_KERNEL={forced!r} is not available; "
                f"built backends: {', '.join(available_backends())}"
            )
        return forced
    return "compiled" if "compiled" in _BACKENDS else "python"


def get_kernel(name=None):
    """Kernel module for ``name`` (default: best available backend)."""
    if name is None:
        name = default_backend()
    try:
        return _BACKENDS[name]
    except KeyError:
        raise KernelError(
            f"unknown kernel backend {name!r}; "
            f"built backends: {', '.join(available_backends())}"
        ) from None
