"""Domain ``D_delta``, witness configurations, and the concatenation step.

The Bellman function is a supremum over configurations (weight tree, f, g)
with prescribed averages. It is never built; instead each configuration gives
a lower bound for it, and the size and midpoint-concavity properties are
checked on those lower bounds.

Points are ordered ``(X, Y, x, y, r, s)``. Here ``x`` is constrained by ``s`` and
``y`` by ``r``: ``|(x, e)|^2 <= X (s e, e)`` and ``|(y, e)|^2 <= Y (r e, e)`` for
every ``e``. These are the semidefinite conditions ``X s - x x* >= 0`` and
``Y r - y y* >= 0``.
"""
from dataclasses import dataclass

import numpy as np

from . import matlin
from .dyadic_mart import HaarExpansion, build_tree, dual_bilinear_sum, dyadic_a2
from .weight_field import family_leaves


@dataclass(frozen=True, eq=False)
class BellmanPoint:
    X: float
    Y: float
    x: np.ndarray
    y: np.ndarray
    r: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "r", "s"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.complex128))
        if self.X < 0 or self.Y < 0:
            raise ValueError("X and Y must be nonnegative")

    def average(self, other):
        return BellmanPoint(0.5 * (self.X + other.X), 0.5 * (self.Y + other.Y), 0.5 * (self.x + other.x),
                            0.5 * (self.y + other.y), 0.5 * (self.r + other.r), 0.5 * (self.s + other.s))

    def conjugated(self, u):
        uh = np.conj(u.T)
        return BellmanPoint(self.X, self.Y, u @ self.x, u @ self.y, u @ self.r @ uh, u @ self.s @ uh)


@dataclass(frozen=True)
class DomainCheck:
    inside: bool
    x_psd: float
    y_psd: float
    norm_lower: float
    norm_upper: float
    norm: float


def in_domain(p, delta, tol=matlin.TOL_PSD):
    """Membership of ``p`` in ``D_delta`` with the margin of each constraint.

    Margins are smallest eigenvalues of ``X s - x x*`` and ``Y r - y y*`` and the
    distances of ``||r^(1/2) s^(1/2)||`` from 1 and from ``1 + delta``; all are
    nonnegative inside the domain.
    """
    mx = matlin.min_eig(p.X * p.s - np.outer(p.x, np.conj(p.x)))
    my = matlin.min_eig(p.Y * p.r - np.outer(p.y, np.conj(p.y)))
    norm = float(matlin.sqrt_product_norm_batch(p.r[None], p.s[None])[0])
    lower, upper = norm - 1.0, 1.0 + delta - norm
    inside = mx >= -tol and my >= -tol and lower >= -tol and upper >= -tol
    return DomainCheck(bool(inside), mx, my, lower, upper, norm)


@dataclass(frozen=True, eq=False)
class WitnessConfig:
    leaves: np.ndarray
    f: HaarExpansion
    g: HaarExpansion

    @property
    def tree(self):
        t = self.__dict__.get("_tree")
        if t is None:
            t = build_tree(self.leaves)
            object.__setattr__(self, "_tree", t)
        return t

    @property
    def depth(self):
        return self.f.depth

    def point(self):
        """Derived ``(X, Y, x, y, r, s)`` with ``J = [0, 1)``."""
        t = self.tree
        fl, gl = self.f.to_leaves(), self.g.to_leaves()
        inv = matlin.inverse_pd_batch(t.leaves)
        big_x = float(np.mean(np.einsum("pi,pij,pj->p", np.conj(fl), t.leaves, fl).real))
        big_y = float(np.mean(np.einsum("pi,pij,pj->p", np.conj(gl), inv, gl).real))
        r, s = t.root()
        return BellmanPoint(big_x, big_y, self.f.mean, self.g.mean, r, s)

    def delta(self):
        return dyadic_a2(self.tree) - 1.0


def witness_value(cfg):
    """Lower bound for the Bellman function at ``cfg.point()``."""
    return dual_bilinear_sum(cfg.tree, cfg.f, cfg.g)


class DomainError(ValueError):
    def __init__(self, message, check):
        super().__init__(message)
        self.check = check


def concat_witnesses(plus, minus, delta=None):
    """Place ``plus`` on the right half and ``minus`` on the left half of ``[0, 1)``.

    The derived point of the result is the average of the two input points.
    ``delta`` defaults to the larger of the inputs' deltas; DomainError is
    raised (with margins) if the averaged point is outside ``D_delta``.
    """
    if plus.depth != minus.depth or plus.f.d != minus.f.d:
        raise ValueError("witnesses must share depth and fiber dimension")
    if delta is None:
        delta = max(plus.delta(), minus.delta(), 0.0)
    avg = plus.point().average(minus.point())
    check = in_domain(avg, delta)
    if not check.inside:
        raise DomainError("averaged point lies outside D_delta", check)
    leaves = np.concatenate([minus.leaves, plus.leaves])
    f = HaarExpansion.from_leaves(np.concatenate([minus.f.to_leaves(), plus.f.to_leaves()]))
    g = HaarExpansion.from_leaves(np.concatenate([minus.g.to_leaves(), plus.g.to_leaves()]))
    return WitnessConfig(leaves, f, g)


def embed_deeper(cfg):
    """The same configuration at depth ``N + 1`` (each leaf split into equal halves)."""
    leaves = np.repeat(cfg.leaves, 2, axis=0)
    f = HaarExpansion.from_leaves(np.repeat(cfg.f.to_leaves(), 2, axis=0))
    g = HaarExpansion.from_leaves(np.repeat(cfg.g.to_leaves(), 2, axis=0))
    return WitnessConfig(leaves, f, g)


def random_expansion(depth, d, rng):
    n = 2**depth
    vals = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    return HaarExpansion.from_leaves(vals)


def random_witness(leaves, rng, aligned=None):
    """Random f, g on the given leaves, normalized to ``X = Y = 1``.

    With ``aligned`` set, ``f`` is mean-zero and ``g`` is the mean-zero part of
    ``W f`` plus that fraction of independent noise; such pairs come close to
    the extremal ratio.
    """
    depth, d = int(np.log2(len(leaves))), leaves.shape[-1]
    f = random_expansion(depth, d, rng)
    if aligned is None:
        g = random_expansion(depth, d, rng)
    else:
        f = f.mean_zero()
        fl = f.to_leaves()
        noise = random_expansion(depth, d, rng).mean_zero().to_leaves()
        gl = np.einsum("pij,pj->pi", leaves, fl) + aligned * np.linalg.norm(fl) / np.linalg.norm(noise) * noise
        g = HaarExpansion.from_leaves(gl).mean_zero()
    cfg = WitnessConfig(leaves, f, g)
    p = cfg.point()
    return WitnessConfig(leaves, f.scaled(1 / np.sqrt(p.X)), g.scaled(1 / np.sqrt(p.Y)))


class SamplerError(RuntimeError):
    pass


def sample_leaves(delta, depth, d, rng, family="random_smooth", retries=40):
    """Random tree leaves with ``delta / 4 < dyadic_a2 - 1 <= delta``.

    A random seed fixes the family member; ``eps`` is then bisected so the
    tree's characteristic lands in the band.
    """
    for _ in range(retries):
        seed = int(rng.integers(2**31))
        cutoff = int(rng.integers(1, 4))

        def excess(eps):
            return dyadic_a2(build_tree(family_leaves(family, [eps, seed, cutoff], depth, d))) - 1.0

        lo, hi = 0.0, 0.1
        while excess(hi) <= delta and hi < 50:
            lo, hi = hi, 2 * hi
        target = delta * rng.uniform(0.25, 1.0)
        if excess(hi) <= target:
            continue
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if excess(mid) <= target:
                lo = mid
            else:
                hi = mid
        leaves = family_leaves(family, [lo, seed, cutoff], depth, d)
        got = dyadic_a2(build_tree(leaves)) - 1.0
        if delta / 4 < got <= delta:
            return leaves
    raise SamplerError(f"could not hit the band ({delta / 4}, {delta}] after {retries} tries")


@dataclass
class SweepRow:
    delta: float
    max_ratio: float
    c_delta: float
    exhaustive: bool
    samples: int


def size_bound_sweep(delta_grid, per_delta_samples, seed=0, depth=3, d=2):
    """Largest ``value / sqrt(X Y)`` over random witnesses with ``dyadic_a2 - 1 <= delta``.

    Half the witnesses pair ``f`` with an independent ``g``, half with
    ``g`` close to ``W f``. ``c_delta = (max_ratio - 1) / sqrt(delta)``. The
    sweep samples configurations, so ``exhaustive`` is always False.
    """
    rows = []
    for i, delta in enumerate(delta_grid):
        if not 0 < delta <= 0.5:
            raise ValueError("delta values must lie in (0, 0.5]")
        rng = np.random.default_rng([seed, i])
        best = 0.0
        for k in range(per_delta_samples):
            leaves = sample_leaves(delta, depth, d, rng)
            cfg = random_witness(leaves, rng, aligned=None if k % 2 else rng.uniform(0, 0.3))
            p = cfg.point()
            best = max(best, witness_value(cfg) / np.sqrt(p.X * p.Y))
        rows.append(SweepRow(float(delta), float(best), float((best - 1) / np.sqrt(delta)), False, per_delta_samples))
    return rows
