"""Matrix weights and vector fields sampled on a periodic grid ``[0, L)^m``.

Weights are built as exponentials of Hermitian fields, so positivity holds by
construction and the condition number is controlled by the family parameter.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matlin

FAMILIES = ("identity", "scalar_oscillation", "diagonal_exp", "rotated_diagonal", "random_smooth")

MAGIC = b"MWLF"
FORMAT_VERSION = 1
# magic, version u32, m u32, n u32, L f64, d u32, count u64
_HEADER = struct.Struct("<4sIIIdIQ")


class FieldFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    m: int
    n: int
    L: float = 1.0

    def __post_init__(self):
        if self.m not in (1, 2):
            raise ValueError(f"ambient dimension must be 1 or 2, got {self.m}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError("torus side length must be positive")

    @property
    def h(self):
        return self.L / self.n

    @property
    def shape(self):
        return (self.n,) * self.m

    @property
    def size(self):
        return self.n**self.m

    @property
    def cell(self):
        """Quadrature weight ``h^m`` of one grid point."""
        return self.h**self.m

    def axis(self):
        return np.arange(self.n) * self.h

    def points(self):
        """Grid coordinates, shape ``(n, ..., n, m)``."""
        axes = np.meshgrid(*([self.axis()] * self.m), indexing="ij")
        return np.stack(axes, axis=-1)

    def frequencies(self):
        """Dual-lattice frequencies ``2 pi k / L`` per axis, shape ``(m, n, ..., n)``."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        return np.stack(np.meshgrid(*([k] * self.m), indexing="ij"), axis=0)

    def freq_sq(self):
        return (self.frequencies() ** 2).sum(axis=0)

    def refined(self, factor=2):
        return GridSpec(self.m, self.n * factor, self.L)

    def to_dict(self):
        return {"m": self.m, "n": self.n, "L": self.L}


@dataclass(frozen=True, eq=False)
class WeightField:
    grid: GridSpec
    values: np.ndarray
    inverse_values: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape[: self.grid.m] != self.grid.shape or vals.ndim != self.grid.m + 2:
            raise ValueError(f"weight samples of shape {vals.shape} do not match grid {self.grid.shape}")
        vals = matlin.hermitian_part(vals)
        inv = self.inverse_values
        if inv is None:
            inv = matlin.inverse_pd_batch(vals)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "inverse_values", np.asarray(inv, dtype=np.complex128))

    @property
    def d(self):
        return self.values.shape[-1]

    def flat(self):
        return self.values.reshape(-1, self.d, self.d)

    def inverse(self):
        """The field ``W^{-1}`` as a weight in its own right."""
        return WeightField(self.grid, self.inverse_values, self.values)

    def scaled(self, c):
        return WeightField(self.grid, c * self.values, self.inverse_values / c)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape[: self.grid.m] != self.grid.shape or vals.ndim != self.grid.m + 1:
            raise ValueError(f"vector samples of shape {vals.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("vector field has non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def d(self):
        return self.values.shape[-1]

    @property
    def mean(self):
        return self.values.reshape(-1, self.d).mean(axis=0)

    def mean_zero(self):
        return VectorField(self.grid, self.values - self.mean)

    def norm(self):
        return float(np.sqrt(self.grid.cell * np.sum(np.abs(self.values) ** 2)))

    def __add__(self, other):
        return VectorField(self.grid, self.values + other.values)

    def __mul__(self, c):
        return VectorField(self.grid, c * self.values)

    __rmul__ = __mul__


def _rotation(theta, d):
    u = np.eye(d, dtype=np.complex128)
    c, s = np.cos(theta), np.sin(theta)
    u[0, 0], u[0, 1], u[1, 0], u[1, 1] = c, -s, s, c
    return u


def _random_modes(m, cutoff):
    rng = range(-cutoff, cutoff + 1)
    if m == 1:
        return [(k,) for k in range(1, cutoff + 1)]
    return [(k1, k2) for k1 in rng for k2 in rng if k1 > 0 or (k1 == 0 and k2 > 0)]


def family_values(name, params, points, d, L=1.0):
    """Evaluate a weight family at arbitrary points.

    ``points`` has shape ``(..., m)``; the result has shape ``(..., d, d)``.
    ``params`` per family: scalar_oscillation ``(eps,)``, diagonal_exp ``(eps,)``,
    rotated_diagonal ``(eps, theta)``, random_smooth ``(eps, seed, cutoff)``.
    """
    points = np.asarray(points, dtype=float)
    params = list(params or [])
    base = points.shape[:-1]
    phase = 2 * np.pi * points[..., 0] / L
    if name == "identity":
        return np.broadcast_to(np.eye(d, dtype=np.complex128), base + (d, d)).copy()
    if name == "scalar_oscillation":
        (eps,) = params
        if not abs(eps) < 1:
            raise ValueError("scalar_oscillation needs |eps| < 1 to stay positive")
        return (1 + eps * np.sin(phase))[..., None, None] * np.eye(d)
    if name in ("diagonal_exp", "rotated_diagonal"):
        eps = params[0]
        diag = np.zeros(base + (d,))
        diag[..., 0] = eps * np.sin(phase)
        if d > 1:
            diag[..., 1] = -eps * np.sin(phase)
        out = np.zeros(base + (d, d), dtype=np.complex128)
        idx = np.arange(d)
        out[..., idx, idx] = np.exp(diag)
        if name == "rotated_diagonal":
            if d < 2:
                raise ValueError("rotated_diagonal needs d >= 2")
            u = _rotation(params[1], d)
            out = u @ out @ np.conj(u.T)
        return out
    if name == "random_smooth":
        eps, seed, cutoff = params
        modes = _random_modes(points.shape[-1], int(cutoff))
        rng = np.random.default_rng(int(seed))
        coef = (rng.normal(size=(len(modes), d, d)) + 1j * rng.normal(size=(len(modes), d, d))) / np.sqrt(2)
        coef *= eps / np.sqrt(len(modes))
        herm = np.zeros(base + (d, d), dtype=np.complex128)
        for k, a in zip(modes, coef):
            wave = np.exp(2j * np.pi * (points @ np.asarray(k, dtype=float)) / L)[..., None, None]
            herm += a * wave + np.conj(a.T) * np.conj(wave)
        return matlin.expm_herm_batch(herm)
    raise ValueError(f"unknown weight family {name!r}; expected one of {FAMILIES}")


def make_family(name, params, grid, d):
    """Sample a named weight family on ``grid``."""
    return WeightField(grid, family_values(name, params, grid.points(), d, grid.L))


def _periodic_gaussian(grid, center, width, images=2):
    pts = grid.points()
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.m,))
    prof = np.zeros(grid.shape)
    shifts = np.arange(-images, images + 1) * grid.L
    for offs in np.stack(np.meshgrid(*([shifts] * grid.m), indexing="ij"), -1).reshape(-1, grid.m):
        r2 = ((pts - center + offs) ** 2).sum(axis=-1)
        prof += np.exp(-r2 / (2 * width**2))
    return prof


def bump_vector_field(center, width, direction, grid):
    """Periodized Gaussian bump ``direction * exp(-|x - center|^2 / (2 width^2))``.

    The width must lie in ``[3h, L/8]``: narrower bumps are not resolved and
    wider ones wrap around the torus noticeably.
    """
    if not (3 * grid.h - 1e-12 <= width <= grid.L / 8 + 1e-12):
        raise ValueError(f"bump width {width} outside resolvable band [{3 * grid.h}, {grid.L / 8}]")
    direction = np.atleast_1d(np.asarray(direction, dtype=np.complex128))
    prof = _periodic_gaussian(grid, center, width)
    return VectorField(grid, prof[..., None] * direction)


def zero_field(grid, d):
    return VectorField(grid, np.zeros(grid.shape + (d,), dtype=np.complex128))


def random_bump_field(grid, d, rng, count=3, min_width=None, max_width=None):
    """Sum of ``count`` bumps with random centers, widths and complex directions."""
    lo = min_width if min_width is not None else 3 * grid.h
    hi = max_width if max_width is not None else grid.L / 8
    out = zero_field(grid, d)
    for _ in range(count):
        center = rng.uniform(0, grid.L, size=grid.m)
        width = rng.uniform(lo, hi)
        direction = rng.normal(size=d) + 1j * rng.normal(size=d)
        out = out + bump_vector_field(center, width, direction, grid)
    return out


def save_field(field_, path):
    """Write a WeightField in the MWLF binary format plus a JSON sidecar."""
    path = Path(path)
    g = field_.grid
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, g.m, g.n, float(g.L), field_.d, g.size)
    body = np.ascontiguousarray(field_.values, dtype="<c16").tobytes()
    path.write_bytes(header + body)
    meta = {"magic": MAGIC.decode(), "version": FORMAT_VERSION, "m": g.m, "n": g.n, "L": g.L,
            "d": field_.d, "count": g.size, "dtype": "complex128-le", "order": "row-major"}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_field(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FieldFormatError("malformed header: file too short")
    magic, version, m, n, L, d, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FieldFormatError(f"malformed header: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"malformed header: unsupported version {version}")
    try:
        grid = GridSpec(m, n, L)
    except ValueError as exc:
        raise FieldFormatError(f"malformed header: {exc}") from exc
    if count != grid.size or d < 1:
        raise FieldFormatError("malformed header: count does not match grid")
    expected = _HEADER.size + count * d * d * 16
    if len(raw) != expected:
        raise FieldFormatError(f"malformed body: expected {expected} bytes, got {len(raw)}")
    vals = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).astype(np.complex128)
    vals = vals.reshape(grid.shape + (d, d))
    try:
        return WeightField(grid, vals)
    except (matlin.NotPositiveDefiniteError, matlin.NotHermitianError, matlin.IllConditionedError) as exc:
        raise FieldFormatError(f"non-PD sample: {exc}") from exc


def dyadic_leaf_weight(leaf_values):
    """Validate ``2^N`` HermPD leaf values, ordered left to right on ``[0, 1)``."""
    leaves = np.asarray(leaf_values, dtype=np.complex128)
    count = leaves.shape[0]
    if count < 1 or count & (count - 1) or leaves.ndim != 3 or leaves.shape[1] != leaves.shape[2]:
        raise ValueError(f"need 2^N square leaf matrices, got shape {leaves.shape}")
    leaves = matlin.hermitian_part(leaves)
    matlin.inverse_pd_batch(leaves)
    return leaves


def family_leaves(name, params, depth, d):
    """A family sampled at the ``2^depth`` dyadic leaf centers of ``[0, 1)``."""
    centers = (np.arange(2**depth) + 0.5) / 2**depth
    return dyadic_leaf_weight(family_values(name, params, centers[:, None], d, 1.0))


def leaves_from_field(field_):
    """Use the samples of a one-dimensional field as dyadic leaves."""
    if field_.grid.m != 1:
        raise ValueError("dyadic leaves need an m = 1 field")
    return dyadic_leaf_weight(field_.values)
