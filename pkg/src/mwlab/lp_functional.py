"""Littlewood-Paley gradient pairing of heat extensions, and its duality with R_i^2.

Spatial derivatives of heat extensions are taken spectrally with the
multiplier ``i xi_k exp(-t |xi|^2)``; time integrals use a TimeGrid whose
head weight covers ``(0, t_min]``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import matlin
from .bellman_probe import BellmanPoint, in_domain
from .heat_ext import TimeGrid, heat_a2_characteristic, heat_at, pairing_values
from .riesz_ops import riesz_square, riesz_square_quadratic_form

MEAN_TOL = 1e-12
TAIL_FRACTION = 0.01


class NonzeroMeanError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


@dataclass
class LPReport:
    lhs: float
    rhs_f: float
    rhs_g: float
    ratio: float
    tail_bound: float
    mean_f: np.ndarray = field(default=None, repr=False)
    mean_g: np.ndarray = field(default=None, repr=False)


def _check_mean(f, label):
    mean = f.mean
    constant_part = np.linalg.norm(mean) * np.sqrt(f.grid.L**f.grid.m)
    if constant_part > MEAN_TOL * max(f.norm(), np.finfo(float).tiny):
        raise NonzeroMeanError(f"{label} has nonzero mean {np.linalg.norm(mean):.3e}; remove it first")
    return mean


def _grad_hat(f):
    axes = tuple(range(f.grid.m))
    hat = np.fft.fftn(f.values, axes=axes)
    xi = f.grid.frequencies()
    return hat, xi


def _grad_at(hat, xi, grid, t):
    """``d_k f^h(., t)`` for every axis k, shape ``(m,) + grid + (d,)``."""
    damp = np.exp(-t * (xi**2).sum(axis=0))
    axes = tuple(range(1, grid.m + 1))
    mult = (1j * xi * damp)[..., None]
    return np.fft.ifftn(mult * hat[None], axes=axes)


def _pairing_profile(f, g, tgrid, signed=False, axis=None):
    """Per-node ``h^m sum_p sum_k (d_k f^h, d_k g^h)``; absolute values inside unless signed."""
    grid = f.grid
    fh, xi = _grad_hat(f)
    gh, _ = _grad_hat(g)
    prof = np.empty(tgrid.count, dtype=complex if signed else float)
    for j, t in enumerate(tgrid.nodes):
        df = _grad_at(fh, xi, grid, t)
        dg = _grad_at(gh, xi, grid, t)
        if axis is not None:
            df, dg = df[axis - 1 : axis], dg[axis - 1 : axis]
        inner = np.sum(df * np.conj(dg), axis=-1)
        prof[j] = grid.cell * (inner.sum() if signed else np.abs(inner).sum())
    return prof


def _tail(f, g, t_max, axis=None):
    """Bound on ``2 int_{t_max}^inf sum_k int |(d_k f^h, d_k g^h)| dx dt``.

    Each mode decays at least like ``exp(-2 (t - t_max) xi_min^2)``, and
    Cauchy-Schwarz in ``x`` bounds each axis term by the product of L^2 norms.
    """
    grid = f.grid
    xi_min = 2 * np.pi / grid.L
    fh, xi = _grad_hat(f)
    gh, _ = _grad_hat(g)
    df = _grad_at(fh, xi, grid, t_max)
    dg = _grad_at(gh, xi, grid, t_max)
    if axis is not None:
        df, dg = df[axis - 1 : axis], dg[axis - 1 : axis]
    red = tuple(range(1, df.ndim))
    nf = np.sqrt(grid.cell * np.sum(np.abs(df) ** 2, axis=red))
    ng = np.sqrt(grid.cell * np.sum(np.abs(dg) ** 2, axis=red))
    return float(2 * np.sum(nf * ng) / (2 * xi_min**2))


def lp_lhs(f, g, tgrid=None):
    """``2 int int sum_k |(d_k f^h, d_k g^h)| dx dt`` and its truncation bound.

    Returns ``(value, tail_bound)``. The bound adds the analytic tail beyond
    ``t_max`` to the head contribution below ``t_min``.
    """
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    _check_mean(f, "f")
    _check_mean(g, "g")
    tgrid = tgrid or TimeGrid.for_integrals(f.grid)
    prof = _pairing_profile(f, g, tgrid)
    value = float(2 * np.dot(tgrid.weights, prof))
    tail = _tail(f, g, tgrid.t_max)
    if tgrid.head:
        tail += 2 * tgrid.t_min * float(prof[0])
    if tail > TAIL_FRACTION * value and tail > 1e-300:
        raise TruncationError(f"truncation bound {tail:.3e} exceeds 1% of {value:.3e}; increase t_max")
    return value, tail


def weighted_norm_of(w, f):
    """``||f||_{2,W} = sqrt(h^m sum_p (W f, f))``."""
    return float(np.sqrt(w.grid.cell * np.sum(pairing_values(w, f))))


def lp_report(w, f, g, tgrid=None):
    """Both sides of the weighted Littlewood-Paley estimate for one pair."""
    lhs, tail = lp_lhs(f, g, tgrid)
    nf = weighted_norm_of(w, f)
    ng = weighted_norm_of(w.inverse(), g)
    ratio = lhs / (nf * ng) if nf * ng > 0 else 0.0
    return LPReport(lhs, nf, ng, ratio, tail, f.mean, g.mean)


@dataclass
class DualityReport:
    multiplier_side: float
    heat_side: float
    residual: float
    passed: bool


DUALITY_TOL = 1e-3


def duality_check(phi, psi, i, tgrid=None):
    """Compare ``int R_i^2 phi . psi`` with ``-2 int int d_i phi^h . d_i psi^h``.

    The first side is an FFT multiplier, the second a time quadrature of heat
    gradients; neither reuses the other's code path.
    """
    _check_mean(phi, "phi")
    _check_mean(psi, "psi")
    tgrid = tgrid or TimeGrid.for_integrals(phi.grid)
    lhs = riesz_square_quadratic_form(riesz_square(i), phi, psi)
    prof = _pairing_profile(phi, psi, tgrid, signed=True, axis=i)
    rhs = -2 * complex(np.dot(tgrid.weights, prof))
    floor = 1e-12 * max(phi.norm() * psi.norm(), np.finfo(float).tiny)
    lhs_r, rhs_r = lhs.real, rhs.real
    residual = abs(lhs - rhs) / max(abs(lhs), abs(rhs), floor)
    return DualityReport(lhs_r, rhs_r, float(residual), bool(residual < DUALITY_TOL))


@dataclass
class TrajectoryReport:
    delta: float
    samples: int
    violations: list
    worst_margins: dict

    @property
    def ok(self):
        return not self.violations


def _nonnegative(value, hat):
    """Clamp interpolation ringing below zero, up to ``TOL_PSD`` of the data scale."""
    scale = float(np.abs(hat).sum()) / hat.size
    if value < 0 and value >= -matlin.TOL_PSD * max(scale, np.finfo(float).tiny):
        return 0.0
    return float(value)


def bellman_point_at(w, f, g, x, t, spectra=None):
    """Assemble ``((Wf,f)^h, (W^-1 g,g)^h, f^h, g^h, W^h, (W^-1)^h)`` at ``(x, t)``."""
    grid = w.grid
    spectra = spectra or _trajectory_spectra(w, f, g)
    pt = np.atleast_2d(x)
    big_x = _nonnegative(heat_at(None, grid, pt, t, hat=spectra["X"]).real[0], spectra["X"])
    big_y = _nonnegative(heat_at(None, grid, pt, t, hat=spectra["Y"]).real[0], spectra["Y"])
    xv = heat_at(None, grid, pt, t, hat=spectra["f"])[0]
    yv = heat_at(None, grid, pt, t, hat=spectra["g"])[0]
    r = matlin.hermitian_part(heat_at(None, grid, pt, t, hat=spectra["W"])[0])
    s = matlin.hermitian_part(heat_at(None, grid, pt, t, hat=spectra["V"])[0])
    return BellmanPoint(big_x, big_y, xv, yv, r, s)


def _trajectory_spectra(w, f, g):
    axes = tuple(range(w.grid.m))
    fft = lambda v: np.fft.fftn(v, axes=axes)  # noqa: E731
    return {
        "X": fft(pairing_values(w, f)),
        "Y": fft(pairing_values(w.inverse(), g)),
        "f": fft(f.values),
        "g": fft(g.values),
        "W": fft(w.values),
        "V": fft(w.inverse_values),
    }


def bellman_trajectory(w, f, g, samples, delta=None, refine=6):
    """Check that the heat trajectory ``v(x, t)`` stays in the domain ``D_delta``.

    ``delta`` defaults to the heat characteristic of ``w`` minus one. Samples
    failing any constraint beyond ``TOL_PSD`` are listed in ``violations``.
    """
    if delta is None:
        delta = heat_a2_characteristic(w, refine=refine) - 1.0
    delta = max(delta, 0.0)
    spectra = _trajectory_spectra(w, f, g)
    worst = {"x_psd": np.inf, "y_psd": np.inf, "norm_lower": np.inf, "norm_upper": np.inf}
    violations = []
    for x, t in samples:
        p = bellman_point_at(w, f, g, np.asarray(x, dtype=float), float(t), spectra)
        res = in_domain(p, delta)
        for key in worst:
            worst[key] = min(worst[key], getattr(res, key))
        if not res.inside:
            violations.append((tuple(np.atleast_1d(x)), float(t), res))
    return TrajectoryReport(delta, len(samples), violations, worst)
