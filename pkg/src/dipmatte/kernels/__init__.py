"""Hot-loop kernels with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built at install time.
Set ``DIPMATTE_PURE_PYTHON=1`` to force the numpy implementations, or switch
at runtime with :func:`use_backend`.
"""

import contextlib
import os

from . import _numpy_kernels

try:
    if os.environ.get("DIPMATTE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("compiled kernels disabled by DIPMATTE_PURE_PYTHON")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"numpy": _numpy_kernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_active = _ckernels if _ckernels is not None else _numpy_kernels


def backend_name():
    return "cython" if _active is _ckernels else "numpy"


def set_backend(name):
    global _active
    try:
        _active = BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


@contextlib.contextmanager
def use_backend(name):
    prev = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def im2col(x, k, stride):
    """Reflect-padded patch matrix of shape ``(C*k*k, Ho*Wo)``."""
    return _active.im2col(x, k, stride)


def col2im(cols, c, h, w, k, stride):
    """Adjoint of :func:`im2col`; padded taps fold back onto their mirror pixels."""
    return _active.col2im(cols, c, h, w, k, stride)


def upsample2x(x):
    return _active.upsample2x(x)


def upsample2x_adjoint(g):
    return _active.upsample2x_adjoint(g)


def spatial_grad_l1(x):
    return _active.spatial_grad_l1(x)


def spatial_grad_l1_adjoint(x, g):
    return _active.spatial_grad_l1_adjoint(x, g)
