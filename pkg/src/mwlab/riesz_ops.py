"""Riesz transforms and their signed squares as Fourier multipliers on the torus.

Axis labels are 1-based, as in ``R_1, ..., R_m``. Every multiplier
annihilates the zero frequency, so operators act on mean-zero fields.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from . import matlin
from .weight_field import VectorField

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SignPattern:
    subset: tuple
    signs: tuple

    def __post_init__(self):
        subset, signs = tuple(int(i) for i in self.subset), tuple(int(s) for s in self.signs)
        if len(subset) != len(signs) or not subset:
            raise ValueError("subset and signs must be non-empty and of equal length")
        if len(set(subset)) != len(subset) or min(subset) < 1:
            raise ValueError(f"axis indices must be distinct and >= 1, got {subset}")
        if any(s not in (-1, 1) for s in signs):
            raise ValueError(f"signs must be +1 or -1, got {signs}")
        object.__setattr__(self, "subset", subset)
        object.__setattr__(self, "signs", signs)

    def label(self):
        return " ".join(f"{'+' if s > 0 else '-'}R{i}^2" for i, s in zip(self.subset, self.signs))


def sign_patterns(m):
    """All non-empty signed subsets of ``{1..m}``: 2 for m = 1, 8 for m = 2."""
    out = []
    for size in range(1, m + 1):
        for subset in itertools.combinations(range(1, m + 1), size):
            for signs in itertools.product((1, -1), repeat=size):
                out.append(SignPattern(subset, signs))
    return out


@dataclass(frozen=True)
class MultiplierOp:
    """Fourier multiplier with ``symbol(xi)``; ``xi`` has shape ``(m, ...)``."""

    symbol: object
    name: str = "T"
    real_symbol: bool = True

    def evaluate(self, grid):
        xi = grid.frequencies()
        if len(xi) < self._min_dim:
            raise ValueError(f"{self.name} needs ambient dimension >= {self._min_dim}")
        sq = (xi**2).sum(axis=0)
        safe = np.where(sq == 0, 1.0, sq)
        vals = np.asarray(self.symbol(xi, safe), dtype=np.complex128)
        vals = np.where(sq == 0, 0.0, vals)
        return vals

    @property
    def _min_dim(self):
        return getattr(self.symbol, "min_dim", 1)

    def adjoint(self):
        sym = self.symbol

        def conj_symbol(xi, sq):
            return np.conj(sym(xi, sq))

        conj_symbol.min_dim = self._min_dim
        return MultiplierOp(conj_symbol, f"{self.name}*", self.real_symbol)


def _with_dim(fn, m):
    fn.min_dim = m
    return fn


def riesz(i):
    """``R_i`` with symbol ``-i xi_i / |xi|``."""
    return MultiplierOp(_with_dim(lambda xi, sq: -1j * xi[i - 1] / np.sqrt(sq), i), f"R{i}", real_symbol=False)


def riesz_square(i):
    """``R_i^2`` with symbol ``-xi_i^2 / |xi|^2``."""
    return MultiplierOp(_with_dim(lambda xi, sq: -xi[i - 1] ** 2 / sq, i), f"R{i}^2")


def signed_sum(pattern):
    """``sum_k sigma_k R_{j_k}^2`` with symbol ``-sum sigma_k xi_{j_k}^2 / |xi|^2``."""
    subset, signs = pattern.subset, pattern.signs

    def symbol(xi, sq):
        return -sum(s * xi[j - 1] ** 2 for j, s in zip(subset, signs)) / sq

    return MultiplierOp(_with_dim(symbol, max(subset)), pattern.label())


def sum_of_squares(m):
    return signed_sum(SignPattern(tuple(range(1, m + 1)), (1,) * m))


def _apply_raw(symbol_vals, values, m):
    axes = tuple(range(m))
    hat = np.fft.fftn(values, axes=axes)
    return np.fft.ifftn(hat * symbol_vals.reshape(symbol_vals.shape + (1,) * (hat.ndim - m)), axes=axes)


def apply_multiplier(op, f):
    """Apply ``op`` componentwise to a vector field; the mean is annihilated."""
    return VectorField(f.grid, _apply_raw(op.evaluate(f.grid), f.values, f.grid.m))


def unweighted_norm(op, grid):
    """Operator norm on unweighted L^2 of the grid: ``max |symbol|`` over the nonzero lattice."""
    vals = np.abs(op.evaluate(grid))
    return float(vals.max())


def riesz_square_quadratic_form(op, phi, psi):
    """``h^m sum_p (op(phi)(p), psi(p))``, conjugate-linear in ``psi``."""
    if phi.grid != psi.grid:
        raise ValueError("fields live on different grids")
    t_phi = apply_multiplier(op, phi).values
    return complex(phi.grid.cell * np.sum(t_phi * np.conj(psi.values)))


class _Conjugated:
    """``S = W^(1/2) T W^(-1/2)`` on the subspace where ``W^(-1/2) u`` has zero mean."""

    def __init__(self, op, w):
        self.grid = w.grid
        self.m = w.grid.m
        self.sym = op.evaluate(w.grid)
        self.sym_adj = np.conj(self.sym)
        flat = w.flat()
        self.half = matlin.sqrt_pd_batch(flat).reshape(w.values.shape)
        self.inv_half = matlin.inv_sqrt_pd_batch(flat).reshape(w.values.shape)
        d = w.d
        # constraint vectors W^(-1/2) e_c, orthonormalized
        cols = np.moveaxis(self.inv_half, -1, 0).reshape(d, -1)
        q, _ = np.linalg.qr(cols.T)
        self.constraint = q.T.reshape((d,) + w.values.shape[:-1])

    def project(self, u):
        coeffs = np.tensordot(np.conj(self.constraint), u, axes=u.ndim)
        return u - np.tensordot(coeffs, self.constraint, axes=1) if np.ndim(coeffs) else u - coeffs * self.constraint[0]

    def _mul(self, mats, u):
        return np.einsum("...ij,...j->...i", mats, u)

    def forward(self, u):
        return self._mul(self.half, _apply_raw(self.sym, self._mul(self.inv_half, self.project(u)), self.m))

    def adjoint(self, v):
        return self.project(self._mul(self.inv_half, _apply_raw(self.sym_adj, self._mul(self.half, v), self.m)))


def conjugated_operator(op, w):
    return _Conjugated(op, w)


def _project(basis, u):
    coeffs = np.array([np.vdot(b, u) for b in basis])
    return u - np.tensordot(coeffs, basis, axes=1)


@dataclass
class NormEstimate:
    value: float
    iterations: int
    gap: float
    converged: bool

    def __float__(self):
        return self.value


def weighted_norm_estimate(op, w, iters=2000, tol=1e-8, restarts=3, seed=0):
    """Power iteration on ``S* S`` with independent random restarts; max taken.

    Iteration stops once the Rayleigh-quotient increment, scaled by the
    observed contraction ``1 - r``, drops below ``tol``. For a well separated
    top singular value this is the plain increment test.
    """
    s = conjugated_operator(op, w)
    d = w.d
    shape = w.values.shape[:-1]
    basis = s.constraint.reshape(d, -1)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        x = _project(basis, x.reshape(-1)).reshape(shape)
        x /= np.linalg.norm(x)
        rq_old = -np.inf
        gap = prev_gap = np.inf
        for it in range(1, iters + 1):
            sx = s.forward(x)
            rq = float(np.vdot(sx, sx).real)
            gap = abs(rq - rq_old)
            # remaining error of a linearly converging sequence is gap * r / (1 - r)
            rate = min(gap / prev_gap, 0.9999) if np.isfinite(prev_gap) and prev_gap > 0 else 0.0
            if gap < tol * (1.0 - rate):
                break
            rq_old, prev_gap = rq, gap
            y = s.adjoint(sx)
            ny = np.linalg.norm(y)
            if ny == 0:
                rq, gap = 0.0, 0.0
                break
            x = y / ny
        est = NormEstimate(float(np.sqrt(max(rq, 0.0))), it, gap, gap < tol)
        if best is None or est.value > best.value:
            best = est
    return best


def lanczos_norm_estimate(op, w, iters=2000, tol=1e-8, seed=0):
    """Top eigenvalue of ``S* S`` by implicitly restarted Lanczos (ARPACK).

    Used when the top of the spectrum is clustered, where plain power
    iteration converges sublinearly. ``gap`` is the residual norm of the
    returned Ritz pair.
    """
    s = conjugated_operator(op, w)
    shape = w.values.shape[:-1]
    size = int(np.prod(shape))

    def normal(v):
        u = v.reshape(shape)
        return s.adjoint(s.forward(u)).reshape(-1)

    lin = LinearOperator((size, size), matvec=normal, dtype=complex)
    rng = np.random.default_rng(seed)
    v0 = s.project((rng.normal(size=shape) + 1j * rng.normal(size=shape))).reshape(-1)
    try:
        vals, vecs = eigsh(lin, k=1, which="LA", v0=v0, maxiter=iters, tol=tol, ncv=min(size - 1, 40))
    except ArpackNoConvergence:
        return NormEstimate(float("nan"), iters, float("inf"), False)
    lam = float(vals[0])
    resid = float(np.linalg.norm(normal(vecs[:, 0]) - lam * vecs[:, 0]))
    return NormEstimate(float(np.sqrt(max(lam, 0.0))), iters, resid, True)


def weighted_norm(op, w, iters=2000, tol=1e-8, restarts=3, seed=0, method="lanczos"):
    """Estimate ``||op||`` on ``L^2(W)`` restricted to mean-zero fields.

    ``method="power"`` runs the restarted power iteration of
    :func:`weighted_norm_estimate`; the default ``"lanczos"`` solves the same
    eigenproblem with ARPACK, which stays fast when the top singular values
    cluster. Raises ConvergenceError if ``tol`` is not reached within
    ``iters`` iterations; the message carries the last gap.
    """
    if method == "power":
        est = weighted_norm_estimate(op, w, iters, tol, restarts, seed)
    elif method == "lanczos":
        est = lanczos_norm_estimate(op, w, iters, tol, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not est.converged:
        raise ConvergenceError(f"{method} iteration did not converge in {iters} steps (last gap {est.gap:.3e})")
    return est.value


def weighted_norm_sup(w, patterns=None, **kwargs):
    """Largest weighted norm over signed sums of squared Riesz transforms."""
    patterns = patterns if patterns is not None else sign_patterns(w.grid.m)
    rows = [(p, weighted_norm(signed_sum(p), w, **kwargs)) for p in patterns]
    return max(rows, key=lambda r: r[1]), rows
