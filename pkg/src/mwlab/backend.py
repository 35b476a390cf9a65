"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built; otherwise
the numpy fallback is used. Set ``MWLAB_PURE=1`` to force the fallback.
"""
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

_compiled = None
if os.environ.get("MWLAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")
        _compiled = None

_active = _compiled if _compiled is not None else _fallback

# cyclic Jacobi beats batched LAPACK only for very small blocks (see benchmarks/)
_LAPACK_MIN_D = 3


def name():
    return "cython" if _active is _compiled and _compiled is not None else "numpy"


def available():
    """Names of the backends that can be selected in this process."""
    return ["numpy"] + (["cython"] if _compiled is not None else [])


def use(backend):
    """Select ``"cython"`` or ``"numpy"`` for subsequent calls."""
    global _active
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels were not built")
        _active = _compiled
    elif backend == "numpy":
        _active = _fallback
    else:
        raise ValueError(f"unknown backend {backend!r}")


def get(backend):
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels were not built")
        return _compiled
    if backend == "numpy":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def eigh_batch(a):
    """Ascending eigenvalues and eigenvectors of a (B, d, d) Hermitian stack."""
    if a.shape[-1] >= _LAPACK_MIN_D:
        return _fallback.eigh_batch(a)
    return _active.eigh_batch(a)


def sqrt_product_norm_batch(a, b):
    """``||sqrt(a[i]) @ sqrt(b[i])||_2`` for every i of two (B, d, d) HermPD stacks."""
    if a.shape[-1] >= _LAPACK_MIN_D:
        return _fallback.sqrt_product_norm_batch(a, b)
    return _active.sqrt_product_norm_batch(a, b)
