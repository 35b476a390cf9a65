"""Dyadic martingale transforms with matrix weights on ``[0, 1)``.

Nodes are addressed by ``(level, index)``: level ``j`` holds ``2^j`` intervals
of length ``2^-j``, and the children of ``(j, k)`` are ``(j+1, 2k)`` (left,
``I-``) and ``(j+1, 2k+1)`` (right, ``I+``).

Haar functions are ``h_I = (chi_{I+} - chi_{I-}) / sqrt|I|``, so a Haar
coefficient ``c_I = (f, h_I)`` and the jump ``Delta_I f = <f>_{I+} - <f>_{I-}``
are related by ``Delta_I f = 2 c_I / sqrt|I|``. Fiber pairings are linear in
the first argument and conjugate-linear in the second.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from . import matlin
from .weight_field import dyadic_leaf_weight

DENSE_MAX_DEPTH = 8
DENSE_MAX_DIM = 4
EXHAUSTIVE_BITS = 16
EIGEN_GAP_FLAG = 1e-8


@dataclass(frozen=True, eq=False)
class DyadicWeightTree:
    depth: int
    leaves: np.ndarray
    averages: list
    inverse_averages: list
    eigenvalues: list
    frames: list
    min_gap: float

    @property
    def d(self):
        return self.leaves.shape[-1]

    @property
    def degenerate(self):
        """True when some eigen-gap fell below ``EIGEN_GAP_FLAG``, making frames a convention."""
        return self.min_gap < EIGEN_GAP_FLAG

    def node_count(self):
        return 2**self.depth - 1

    def root(self):
        return self.averages[0][0], self.inverse_averages[0][0]


def _level_means(leaves):
    levels = [leaves]
    while levels[0].shape[0] > 1:
        cur = levels[0]
        levels.insert(0, 0.5 * (cur[0::2] + cur[1::2]))
    return levels


def build_tree(leaves):
    """Averages, inverse averages and canonical eigenframes over the dyadic tree."""
    leaves = dyadic_leaf_weight(leaves)
    depth = int(np.log2(leaves.shape[0]))
    inv = matlin.inverse_pd_batch(leaves)
    avgs = _level_means(leaves)
    inv_avgs = _level_means(inv)
    eigvals, frames, gaps = [], [], [np.inf]
    for j in range(depth):
        w, v, gap = matlin.canonical_frame(avgs[j])
        eigvals.append(w)
        frames.append(v)
        gaps.append(float(np.min(gap)))
    return DyadicWeightTree(depth, leaves, avgs, inv_avgs, eigvals, frames, min(gaps))


def dyadic_a2(tree):
    """``max_I ||<W>_I^(1/2) <W^-1>_I^(1/2)||`` over every node, leaves included."""
    return float(max(matlin.sqrt_product_norm_batch(a, b).max() for a, b in zip(tree.averages, tree.inverse_averages)))


@dataclass(frozen=True, eq=False)
class HaarExpansion:
    depth: int
    mean: np.ndarray
    coeffs: list  # coeffs[j] has shape (2^j, d)

    @property
    def d(self):
        return self.mean.shape[-1]

    @classmethod
    def from_leaves(cls, values):
        values = np.asarray(values, dtype=np.complex128)
        if values.ndim == 1:
            values = values[:, None]
        n = values.shape[0]
        if n < 1 or n & (n - 1):
            raise ValueError("need 2^N leaf values")
        depth = int(np.log2(n))
        means = _level_means(values)
        coeffs = []
        for j in range(depth):
            size = 2.0**-j
            delta = means[j + 1][1::2] - means[j + 1][0::2]
            coeffs.append(0.5 * np.sqrt(size) * delta)
        return cls(depth, means[0][0], coeffs)

    def to_leaves(self):
        n = 2**self.depth
        out = np.tile(self.mean, (n, 1)).astype(np.complex128)
        for j, c in enumerate(self.coeffs):
            block = n >> j
            amp = c / np.sqrt(2.0**-j)
            signs = np.concatenate([-np.ones(block // 2), np.ones(block // 2)])
            out += (amp[:, None, :] * signs[None, :, None]).reshape(n, -1)
        return out

    def jumps(self, j):
        """``Delta_I f`` for every node on level ``j``."""
        return 2 * self.coeffs[j] / np.sqrt(2.0**-j)

    def norm_sq(self):
        return float(np.sum(np.abs(self.mean) ** 2) + sum(np.sum(np.abs(c) ** 2) for c in self.coeffs))

    def mean_zero(self):
        return HaarExpansion(self.depth, np.zeros_like(self.mean), self.coeffs)

    def scaled(self, a):
        return HaarExpansion(self.depth, a * self.mean, [a * c for c in self.coeffs])


@dataclass(frozen=True, eq=False)
class DyadicSignPattern:
    signs: list  # signs[j] has shape (2^j, d), entries +-1

    def __post_init__(self):
        for s in self.signs:
            if not np.all(np.abs(s) == 1):
                raise ValueError("signs must be +1 or -1")

    @property
    def depth(self):
        return len(self.signs)

    def flat(self):
        return np.concatenate([s.reshape(-1) for s in self.signs])

    @classmethod
    def from_flat(cls, bits, depth, d):
        bits = np.asarray(bits)
        out, pos = [], 0
        for j in range(depth):
            size = 2**j * d
            out.append(bits[pos : pos + size].reshape(2**j, d).astype(int))
            pos += size
        return cls(out)

    @classmethod
    def constant(cls, depth, d, sign=1):
        return cls([np.full((2**j, d), sign, dtype=int) for j in range(depth)])

    @classmethod
    def random(cls, depth, d, rng):
        return cls([rng.choice([-1, 1], size=(2**j, d)) for j in range(depth)])


def _check_compatible(tree, *others):
    for o in others:
        if o.depth != tree.depth:
            raise ValueError(f"depth mismatch: tree {tree.depth}, operand {o.depth}")
        if getattr(o, "d", tree.d) != tree.d and not isinstance(o, DyadicSignPattern):
            raise ValueError(f"fiber dimension mismatch: tree {tree.d}, operand {o.d}")
    for o in others:
        if isinstance(o, DyadicSignPattern) and any(s.shape[-1] != tree.d for s in o.signs):
            raise ValueError("sign pattern fiber dimension does not match the tree")


def martingale_apply(tree, sigma, f):
    """``M_sigma^W f``: flip each eigenframe component of each Haar coefficient by ``sigma_I^k``."""
    _check_compatible(tree, sigma, f)
    out = []
    for j in range(tree.depth):
        e = tree.frames[j]
        comp = np.einsum("nik,ni->nk", np.conj(e), f.coeffs[j])
        out.append(np.einsum("nik,nk->ni", e, sigma.signs[j] * comp))
    return HaarExpansion(tree.depth, np.zeros_like(f.mean), out)


def haar_matrix(depth):
    """Orthonormal Haar analysis matrix on ``2^depth`` leaves (mean row first)."""
    n = 2**depth
    rows = [np.full(n, 1 / np.sqrt(n))]
    for j in range(depth):
        block = n >> j
        for k in range(2**j):
            row = np.zeros(n)
            row[k * block : k * block + block // 2] = -1
            row[k * block + block // 2 : (k + 1) * block] = 1
            rows.append(row / np.sqrt(block))
    return np.array(rows)


def _projector_basis(tree):
    """Matrices ``W^(1/2) P_{I,k} W^(-1/2)`` on the leaf space, one per (node, k).

    ``P_{I,k}`` is the orthogonal projection onto ``h_I e_I^k``; the weighted
    martingale transform is ``sum sigma_I^k`` times these.
    """
    n, d = 2**tree.depth, tree.d
    haar = haar_matrix(tree.depth)
    half = matlin.sqrt_pd_batch(tree.leaves)
    inv_half = matlin.inv_sqrt_pd_batch(tree.leaves)
    left = np.zeros((n * d, n * d), dtype=np.complex128)
    right = np.zeros_like(left)
    for p in range(n):
        left[p * d : (p + 1) * d, p * d : (p + 1) * d] = half[p]
        right[p * d : (p + 1) * d, p * d : (p + 1) * d] = inv_half[p]
    mats = []
    row = 1
    for j in range(tree.depth):
        for k in range(2**j):
            h = haar[row]
            row += 1
            for q in range(d):
                vec = np.kron(h, tree.frames[j][k][:, q])
                mats.append(left @ np.outer(vec, np.conj(vec)) @ right)
    return np.array(mats)


def _check_dense(tree):
    if tree.depth > DENSE_MAX_DEPTH or tree.d > DENSE_MAX_DIM:
        raise ValueError(f"dense assembly capped at depth {DENSE_MAX_DEPTH}, d {DENSE_MAX_DIM}")


def weighted_operator_matrix(tree, sigma):
    """Dense ``W^(1/2) M_sigma^W W^(-1/2)`` on the ``d 2^N`` leaf space."""
    _check_dense(tree)
    _check_compatible(tree, sigma)
    basis = _projector_basis(tree)
    return np.tensordot(sigma.flat().astype(float), basis, axes=1)


def weighted_norm_exact(tree, sigma):
    """``||M_sigma^W||_{L^2(W)}`` on the finite tree, by dense SVD."""
    return float(np.linalg.norm(weighted_operator_matrix(tree, sigma), 2))


@dataclass
class SupResult:
    value: float
    pattern: DyadicSignPattern
    exhaustive: bool
    evaluated: int


def _norms_for(basis, patterns):
    mats = np.tensordot(patterns.astype(float), basis, axes=1)
    return np.linalg.svd(mats, compute_uv=False)[:, 0]


def sup_sigma_norm(tree, budget=256, seed=0, chunk=2048):
    """Largest ``weighted_norm_exact`` over sign patterns.

    Exhaustive when there are at most ``2^16`` patterns (the global sign flip
    is skipped since it leaves the norm unchanged); otherwise ``budget`` random
    patterns followed by greedy single-flip ascent from the best one.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    _check_dense(tree)
    bits = tree.node_count() * tree.d
    if bits == 0:
        return SupResult(0.0, DyadicSignPattern([]), True, 0)
    basis = _projector_basis(tree)
    if bits <= EXHAUSTIVE_BITS:
        best_val, best_pat, count = -np.inf, None, 0
        free = bits - 1
        for start in range(0, 2**free, chunk):
            idx = np.arange(start, min(start + chunk, 2**free))
            pats = np.ones((idx.size, bits), dtype=int)
            for b in range(free):
                pats[:, b + 1] = 1 - 2 * ((idx >> b) & 1)
            vals = _norms_for(basis, pats)
            i = int(np.argmax(vals))
            count += idx.size
            if vals[i] > best_val:
                best_val, best_pat = float(vals[i]), pats[i].copy()
        return SupResult(best_val, DyadicSignPattern.from_flat(best_pat, tree.depth, tree.d), True, count)
    rng = np.random.default_rng(seed)
    pats = rng.choice([-1, 1], size=(budget, bits))
    vals = _norms_for(basis, pats)
    i = int(np.argmax(vals))
    best_val, best_pat = float(vals[i]), pats[i].copy()
    count = budget
    improved = True
    while improved:
        improved = False
        flips = np.tile(best_pat, (bits, 1))
        flips[np.arange(bits), np.arange(bits)] *= -1
        vals = _norms_for(basis, flips)
        count += bits
        i = int(np.argmax(vals))
        if vals[i] > best_val * (1 + 1e-13):
            best_val, best_pat, improved = float(vals[i]), flips[i].copy(), True
    return SupResult(best_val, DyadicSignPattern.from_flat(best_pat, tree.depth, tree.d), False, count)


def all_sign_patterns(depth, d):
    bits = (2**depth - 1) * d
    for combo in itertools.product((1, -1), repeat=bits):
        yield DyadicSignPattern.from_flat(np.array(combo), depth, d)


def dual_bilinear_sum(tree, f, g):
    """``(1/4) sum_I |(Delta_I f, Delta_I g)| |I|`` over the tree on ``J = [0, 1)``."""
    _check_compatible(tree, f, g)
    total = 0.0
    for j in range(tree.depth):
        df, dg = f.jumps(j), g.jumps(j)
        total += 0.25 * 2.0**-j * float(np.abs(np.sum(df * np.conj(dg), axis=-1)).sum())
    return total


def frame_pairing_sum(tree, f, g):
    """``(1/4) sum_I sum_k |(Delta_I f, e_I^k)| |(Delta_I g, e_I^k)| |I|``.

    It bounds ``|(M_sigma^W f, g)|`` for every sign pattern, with equality for
    the best pattern when each frame product is real, and dominates
    ``dual_bilinear_sum`` node by node.
    """
    _check_compatible(tree, f, g)
    total = 0.0
    for j in range(tree.depth):
        e = tree.frames[j]
        cf = np.abs(np.einsum("nik,ni->nk", np.conj(e), f.jumps(j)))
        cg = np.abs(np.einsum("nik,ni->nk", np.conj(e), g.jumps(j)))
        total += 0.25 * 2.0**-j * float(np.sum(cf * cg))
    return total


def pairing(f, g):
    """``(f, g)_{L^2[0,1)}`` from Haar coefficients."""
    val = np.vdot(g.mean, f.mean)
    for cf, cg in zip(f.coeffs, g.coeffs):
        val += np.sum(cf * np.conj(cg))
    return complex(val)
