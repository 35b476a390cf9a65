"""Heat extensions on the torus and the heat A2 characteristic.

The heat kernel is applied as the exact dual-lattice multiplier
``exp(-t |xi|^2)``, i.e. the periodized Gaussian. It has unit mass, so
constants are fixed points and the identity weight has characteristic 1.
"""
from dataclasses import dataclass, field

import numpy as np

from . import matlin
from .weight_field import VectorField, WeightField


class AliasingError(ValueError):
    """A heat slice of a positive weight lost positivity on the grid."""


@dataclass(frozen=True)
class TimeGrid:
    """Log-spaced nodes in ``[t_min, t_max]`` with trapezoid weights in ``log t``.

    ``sum(weights * F(nodes))`` approximates ``int F dt`` over the range. The
    trapezoid rule in ``u = log t`` converges spectrally for the bell-shaped
    integrands ``t F(t)`` met here. With ``head=True`` the first weight also
    carries ``t_min``, a one-point rule for ``int_0^t_min F dt``.
    """

    t_min: float
    t_max: float
    count: int = 96
    head: bool = False
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.t_min <= self.t_max:
            raise ValueError("need 0 < t_min <= t_max")
        if self.count < 2 and self.t_min < self.t_max:
            raise ValueError("need at least two nodes")
        u = np.linspace(np.log(self.t_min), np.log(self.t_max), self.count)
        nodes = np.exp(u)
        du = u[1] - u[0] if self.count > 1 else 0.0
        log_w = np.full(self.count, du)
        log_w[[0, -1]] *= 0.5
        weights = log_w * nodes
        if self.head:
            weights[0] += self.t_min
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def log_weights(self):
        """Trapezoid weights in the variable ``log t``; they sum to ``log(t_max/t_min)``."""
        w = self.weights.copy()
        if self.head:
            w[0] -= self.t_min
        return w / self.nodes

    @property
    def du(self):
        return float(np.log(self.t_max / self.t_min) / (self.count - 1))

    @classmethod
    def for_characteristic(cls, grid, count=48):
        """``[h^2/4, L^2]``: below, slices equal the data; above, they are constant."""
        return cls(grid.h**2 / 4, grid.L**2, count)

    @classmethod
    def for_integrals(cls, grid, count=96):
        """Half-line quadrature for gradient pairings, reaching far below ``h^2``."""
        return cls(1e-6 * grid.h**2, grid.L**2, count, head=True)

    def doubled(self):
        return TimeGrid(self.t_min, self.t_max, 2 * self.count - 1, self.head)


@dataclass(frozen=True, eq=False)
class HeatSlice:
    t: float
    field: object

    @property
    def values(self):
        return getattr(self.field, "values", self.field)


def _fft(values, m):
    return np.fft.fftn(values, axes=tuple(range(m)))


def _ifft(values, m):
    return np.fft.ifftn(values, axes=tuple(range(m)))


def _expand(mult, ndim):
    return mult.reshape(mult.shape + (1,) * (ndim - mult.ndim))


def heat_values(values, grid, t):
    """Heat slice of raw grid samples (trailing axes are fiber components)."""
    if not t > 0:
        raise ValueError(f"heat time must be positive, got {t}")
    values = np.asarray(values)
    out = _damp(_fft(values, grid.m), grid, t)
    return out.real if np.isrealobj(values) else out


def heat_slice(data, t, grid=None):
    """Heat extension of a WeightField, VectorField or scalar grid array at height ``t``.

    Scalar arrays need ``grid``. Matrix slices are re-symmetrized; the result
    for a WeightField is a raw Hermitian array since its inverse is not needed.
    """
    if isinstance(data, WeightField):
        vals = matlin.hermitian_part(heat_values(data.values, data.grid, t))
        return HeatSlice(t, vals)
    if isinstance(data, VectorField):
        return HeatSlice(t, VectorField(data.grid, heat_values(data.values, data.grid, t)))
    if grid is None:
        raise ValueError("scalar heat slices need a grid")
    return HeatSlice(t, heat_values(data, grid, t))


def fourier_phases(grid, points):
    """Trigonometric-interpolation basis at arbitrary points, shape ``(P, n^m)``.

    The Nyquist column uses ``cos`` so real (Hermitian) data interpolate to
    real (Hermitian) values.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = 2 * np.pi * np.fft.fftfreq(grid.n, d=grid.h)
    nyq = grid.n // 2
    factors = []
    for ax in range(grid.m):
        ph = np.exp(1j * points[:, ax, None] * k[None, :])
        ph[:, nyq] = np.cos(points[:, ax] * k[nyq])
        factors.append(ph)
    if grid.m == 1:
        basis = factors[0]
    else:
        basis = (factors[0][:, :, None] * factors[1][:, None, :]).reshape(len(points), -1)
    return basis / grid.size


def heat_at(values, grid, points, t, hat=None):
    """Heat extension of grid samples evaluated at arbitrary points ``(P, m)``.

    Pass a precomputed spectrum as ``hat`` (with ``values=None``) to reuse it;
    the result is then complex.
    """
    if hat is None:
        values = np.asarray(values)
        hat = _fft(values, grid.m)
    damped = hat * _expand(np.exp(-t * grid.freq_sq()), hat.ndim)
    flat = damped.reshape((grid.size,) + hat.shape[grid.m:])
    basis = fourier_phases(grid, points)
    out = np.tensordot(basis, flat, axes=(1, 0))
    return out.real if values is not None and np.isrealobj(values) else out


@dataclass
class CharacteristicResult:
    value: float
    x: np.ndarray
    t: float
    history: list

    def __float__(self):
        return self.value


def _damp(hat, grid, t):
    return _ifft(hat * _expand(np.exp(-t * grid.freq_sq()), hat.ndim), grid.m)


def _slice_pair(w_hat, v_hat, grid, t):
    return matlin.hermitian_part(_damp(w_hat, grid, t)), matlin.hermitian_part(_damp(v_hat, grid, t))


def _check_slice(wh, vh, t):
    d = wh.shape[-1]
    lo_w = matlin.eigh_batch(wh.reshape(-1, d, d))[0][:, 0]
    lo_v = matlin.eigh_batch(vh.reshape(-1, d, d))[0][:, 0]
    if lo_w.min() <= 0 or lo_v.min() <= 0:
        raise AliasingError(f"heat slice at t={t:.3e} is not positive definite; refine the grid")


def _pointwise(w_hat, v_hat, grid, points, t):
    wh = matlin.hermitian_part(heat_at(None, grid, points, t, hat=w_hat))
    vh = matlin.hermitian_part(heat_at(None, grid, points, t, hat=v_hat))
    return matlin.sqrt_product_norm_batch(wh, vh)


def heat_a2_search(w, tgrid=None, refine=2, local_points=9):
    """Grid maximum of ``||(W^h)^(1/2) ((W^-1)^h)^(1/2)||`` plus local refinement.

    Each refinement round evaluates a ``local_points`` lattice in ``(x, log t)``
    around the incumbent maximizer, then shrinks the window fourfold. The
    returned value never decreases across rounds; ``history`` records each
    round's maximum.
    """
    grid = w.grid
    if tgrid is None:
        tgrid = TimeGrid.for_characteristic(grid)
    w_hat = _fft(w.values, grid.m)
    v_hat = _fft(w.inverse_values, grid.m)
    best, best_idx, best_t = -np.inf, None, None
    for t in tgrid.nodes:
        wh, vh = _slice_pair(w_hat, v_hat, grid, t)
        _check_slice(wh, vh, t)
        norms = matlin.sqrt_product_norm_batch(wh, vh)
        i = int(np.argmax(norms))
        if norms.flat[i] > best:
            best, best_idx, best_t = float(norms.flat[i]), i, float(t)
    x_best = np.array(np.unravel_index(best_idx, grid.shape), dtype=float) * grid.h
    history = [best]
    half_x, half_u = grid.h, tgrid.du if tgrid.count > 1 else 0.0
    u_lo, u_hi = np.log(tgrid.t_min), np.log(tgrid.t_max)
    for _ in range(refine):
        offs = np.linspace(-1, 1, local_points)
        xs = np.stack(np.meshgrid(*([offs * half_x] * grid.m), indexing="ij"), -1).reshape(-1, grid.m)
        pts = np.mod(x_best + xs, grid.L)
        us = np.unique(np.clip(np.log(best_t) + offs * half_u, u_lo, u_hi))
        for u in us:
            vals = _pointwise(w_hat, v_hat, grid, pts, float(np.exp(u)))
            i = int(np.argmax(vals))
            if vals[i] > best:
                best, x_best, best_t = float(vals[i]), pts[i].copy(), float(np.exp(u))
        history.append(best)
        half_x /= 4
        half_u /= 4
    return CharacteristicResult(best, x_best, best_t, history)


def heat_a2_characteristic(w, tgrid=None, refine=2):
    """Heat A2 characteristic of a weight on the torus, approximated from below."""
    return heat_a2_search(w, tgrid, refine).value


def pairing_values(w, f):
    """Pointwise ``(W(x) f(x), f(x))``, real and nonnegative."""
    if w.grid != f.grid:
        raise ValueError("weight and vector field live on different grids")
    wf = np.einsum("...ij,...j->...i", w.values, f.values)
    return np.einsum("...i,...i->...", wf, np.conj(f.values)).real


def heat_pairing_field(w, f, t):
    """Heat slice at height ``t`` of the scalar field ``(W f, f)``."""
    vals = pairing_values(w, f)
    return HeatSlice(t, heat_values(vals, w.grid, t))
