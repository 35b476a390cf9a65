"""Small-dimension Hermitian linear algebra.

Every decomposition symmetrizes its input as ``(a + a*)/2`` first. Functions
accept a single ``(d, d)`` matrix; the ``*_batch`` variants accept stacks of
shape ``(..., d, d)`` and are what the grid and tree code calls.
"""
import numpy as np

from . import backend

TOL_LIN = 1e-10
TOL_PSD = 1e-9
COND_CAP = 1e8


class NotHermitianError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


class IllConditionedError(ValueError):
    pass


def hermitian_part(a):
    a = np.asarray(a, dtype=np.complex128)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def _check_hermitian(a):
    h = hermitian_part(a)
    scale = np.maximum(np.abs(a).max(axis=(-2, -1)), 1.0)
    skew = np.abs(a - h).max(axis=(-2, -1))
    if np.any(skew > TOL_LIN * scale):
        raise NotHermitianError(f"asymmetry {float(np.max(skew / scale)):.3e} exceeds tol_lin")
    return h


def _eigh(a):
    a = np.asarray(a)
    d = a.shape[-1]
    flat = a.reshape(-1, d, d)
    w, v = backend.eigh_batch(flat)
    return w.reshape(a.shape[:-1]), v.reshape(a.shape)


def eigh_batch(a):
    """Ascending eigenvalues and eigenvectors of Hermitian stacks (symmetrized)."""
    return _eigh(_check_hermitian(a))


def _from_eig(w, v, fw):
    return (v * fw(w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def _positive_eig(a):
    w, v = eigh_batch(a)
    if np.any(~np.isfinite(w)):
        raise ValueError("non-finite matrix entries")
    if np.any(w[..., 0] <= 0.0):
        raise NotPositiveDefiniteError(f"non-positive eigenvalue {float(w[..., 0].min()):.3e}")
    return w, v


def sqrt_pd_batch(a):
    w, v = _positive_eig(a)
    return _from_eig(w, v, np.sqrt)


def sqrt_pd(a):
    """Principal square root of a Hermitian positive-definite matrix.

    Raises NotHermitianError if the input is not Hermitian within ``TOL_LIN``
    and NotPositiveDefiniteError if an eigenvalue is not strictly positive.
    """
    return sqrt_pd_batch(np.asarray(a)[None])[0]


def inv_sqrt_pd_batch(a):
    w, v = _positive_eig(a)
    return _from_eig(w, v, lambda x: 1.0 / np.sqrt(x))


def cond_batch(a):
    w, _ = _positive_eig(a)
    return w[..., -1] / w[..., 0]


def inverse_pd_batch(a, cond_cap=COND_CAP):
    w, v = _positive_eig(a)
    cond = w[..., -1] / w[..., 0]
    if np.any(cond > cond_cap):
        raise IllConditionedError(f"condition number {float(cond.max()):.3e} exceeds cap {cond_cap:.1e}")
    return hermitian_part(_from_eig(w, v, np.reciprocal))


def inverse_pd(a, cond_cap=COND_CAP):
    """Inverse of a HermPD matrix, refusing condition numbers above ``cond_cap``."""
    return inverse_pd_batch(np.asarray(a)[None], cond_cap)[0]


def expm_herm_batch(h):
    """Matrix exponential of Hermitian stacks; the result is HermPD."""
    w, v = eigh_batch(h)
    return hermitian_part(_from_eig(w, v, np.exp))


def spectral_norm_batch(a):
    a = np.asarray(a, dtype=np.complex128)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite matrix entries")
    gram = np.conj(np.swapaxes(a, -1, -2)) @ a
    w, _ = _eigh(hermitian_part(gram))
    return np.sqrt(np.clip(w[..., -1], 0.0, None))


def spectral_norm(a):
    """Largest singular value of a square complex matrix."""
    a = np.asarray(a, dtype=np.complex128)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite matrix entries")
    return float(np.linalg.norm(a, 2))


def sqrt_product_norm_batch(a, b):
    """``||sqrt_pd(a) @ sqrt_pd(b)||`` over matching stacks of HermPD matrices."""
    a = _check_hermitian(a)
    b = _check_hermitian(b)
    shape = a.shape[:-2]
    d = a.shape[-1]
    out = backend.sqrt_product_norm_batch(a.reshape(-1, d, d), b.reshape(-1, d, d))
    return out.reshape(shape)


def psd_check(a, tol=TOL_PSD):
    """True iff the Hermitian matrix has smallest eigenvalue >= -tol."""
    return bool(min_eig(a) >= -tol)


def min_eig(a):
    w, _ = eigh_batch(np.asarray(a)[None])
    return float(w[0, 0])


def canonical_frame(a):
    """Eigenvalues (descending) and a phase-fixed orthonormal eigenframe of ``a``.

    Each eigenvector's largest-modulus entry (lowest index on ties) is made
    real positive so the frame is reproducible. Also returns the smallest gap
    between consecutive eigenvalues.
    """
    w, v = eigh_batch(a)
    w = w[..., ::-1]
    v = v[..., ::-1]
    mags = np.abs(v)
    # argmax picks the first maximum; round so tiny noise cannot reorder ties
    idx = np.argmax(np.round(mags, 12), axis=-2)
    pivot = np.take_along_axis(v, idx[..., None, :], axis=-2)
    phase = pivot / np.abs(pivot)
    v = v / phase
    gap = np.abs(np.diff(w, axis=-1)).min(axis=-1) if w.shape[-1] > 1 else np.full(w.shape[:-1], np.inf)
    return w, v, gap
