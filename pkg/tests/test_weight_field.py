import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwlab import matlin
from mwlab.dyadic_mart import build_tree
from mwlab.weight_field import (
    FAMILIES,
    FieldFormatError,
    GridSpec,
    WeightField,
    bump_vector_field,
    family_leaves,
    load_field,
    make_family,
    save_field,
)
from oracles import random_hpd

FAMILY_PARAMS = {
    "identity": [],
    "scalar_oscillation": [0.3],
    "diagonal_exp": [0.5],
    "rotated_diagonal": [0.5, 0.4],
    "random_smooth": [0.4, 3, 2],
}


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        GridSpec(1, 12, 1.0)
    with pytest.raises(ValueError):
        GridSpec(3, 16, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 16, 0.0)


def test_scalar_oscillation_zero_is_identity():
    w = make_family("scalar_oscillation", [0.0], GridSpec(1, 16), 2)
    assert np.allclose(w.values, np.eye(2))


def test_diagonal_exp_inverse_residual():
    w = make_family("diagonal_exp", [0.1], GridSpec(1, 64), 2)
    assert np.abs(w.values @ w.inverse_values - np.eye(2)).max() < 1e-10


@pytest.mark.parametrize("name", FAMILIES)
@pytest.mark.parametrize("m", [1, 2])
def test_families_are_hpd_and_deterministic(name, m):
    grid = GridSpec(m, 16)
    w = make_family(name, FAMILY_PARAMS[name], grid, 2)
    flat = w.flat()
    assert np.allclose(flat, np.conj(np.swapaxes(flat, 1, 2)))
    assert np.linalg.eigvalsh(flat).min() > 0
    assert matlin.cond_batch(flat).max() <= matlin.COND_CAP
    assert np.abs(flat @ w.inverse().flat() - np.eye(2)).max() < 1e-10
    again = make_family(name, FAMILY_PARAMS[name], grid, 2)
    assert np.array_equal(w.values, again.values)


def test_scalar_family_commutes_with_inverse():
    w = make_family("scalar_oscillation", [0.6], GridSpec(1, 32), 3)
    a, b = w.flat(), w.inverse().flat()
    assert np.abs(a @ b - b @ a).max() < 1e-14


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown weight family"):
        make_family("lognormal", [], GridSpec(1, 16), 2)


def test_bump_zero_direction():
    f = bump_vector_field([0.5], 0.05, [0.0, 0.0], GridSpec(1, 64))
    assert not np.any(f.values)


def test_bump_width_band():
    grid = GridSpec(1, 64)
    with pytest.raises(ValueError):
        bump_vector_field([0.5], grid.h, [1.0], grid)
    with pytest.raises(ValueError):
        bump_vector_field([0.5], 0.2, [1.0], grid)


def test_bump_linearity():
    grid = GridSpec(1, 128)
    a = bump_vector_field([0.2], 0.04, [1.0, 2j], grid)
    b = bump_vector_field([0.7], 0.04, [-1.0, 0.5], grid)
    both = (a + b).values
    direct = a.values + b.values
    assert np.abs(both - direct).max() < 1e-12


@pytest.mark.parametrize("m", [1, 2])
def test_bump_mass_matches_gaussian_integral(m):
    grid = GridSpec(m, 256 if m == 1 else 64)
    width = grid.L / 10
    f = bump_vector_field([0.3] * m, width, [1.0], grid)
    mass = grid.cell * f.values.sum().real
    assert mass == pytest.approx((np.sqrt(2 * np.pi) * width) ** m, abs=1e-8)


def test_save_load_identity_round_trip(tmp_path):
    w = make_family("identity", [], GridSpec(1, 16), 2)
    path = save_field(w, tmp_path / "id.mwlf")
    back = load_field(path)
    assert back.grid == w.grid and np.array_equal(back.values, w.values)
    meta = json.loads((tmp_path / "id.mwlf.json").read_text())
    assert meta["magic"] == "MWLF" and meta["d"] == 2 and meta["count"] == 16


def test_save_load_bit_exact(tmp_path):
    w = make_family("random_smooth", [0.2, 7, 3], GridSpec(2, 16), 3)
    path = save_field(w, tmp_path / "r.mwlf")
    raw = path.read_bytes()
    back = load_field(path)
    assert back.values.tobytes() == w.values.astype("<c16").tobytes()
    save_field(back, tmp_path / "r2.mwlf")
    assert (tmp_path / "r2.mwlf").read_bytes() == raw


def test_load_rejects_zero_sample(tmp_path):
    w = make_family("identity", [], GridSpec(1, 8), 2)
    path = save_field(w, tmp_path / "z.mwlf")
    raw = bytearray(path.read_bytes())
    header = struct.calcsize("<4sIIIdIQ")
    raw[header : header + 64] = bytes(64)
    path.write_bytes(bytes(raw))
    with pytest.raises(FieldFormatError, match="non-PD sample"):
        load_field(path)


@pytest.mark.parametrize("mutate", ["magic", "version", "truncate", "count"])
def test_load_rejects_malformed_header(tmp_path, mutate):
    w = make_family("identity", [], GridSpec(1, 8), 2)
    path = save_field(w, tmp_path / "h.mwlf")
    raw = bytearray(path.read_bytes())
    if mutate == "magic":
        raw[:4] = b"XXXX"
    elif mutate == "version":
        raw[4:8] = struct.pack("<I", 9)
    elif mutate == "truncate":
        raw = raw[:20]
    else:
        raw[28:36] = struct.pack("<Q", 7)
    path.write_bytes(bytes(raw))
    with pytest.raises(FieldFormatError, match="malformed"):
        load_field(path)


def test_weight_field_shape_checked():
    with pytest.raises(ValueError):
        WeightField(GridSpec(1, 16), np.broadcast_to(np.eye(2), (8, 2, 2)))


def test_identity_leaves_give_constant_tree():
    tree = build_tree(family_leaves("identity", [], 3, 2))
    for level in tree.averages + tree.inverse_averages:
        assert np.allclose(level, np.eye(2))


def test_two_leaf_tree_averages():
    eps = 0.3
    tree = build_tree(np.array([(1 + eps) * np.eye(2), (1 - eps) * np.eye(2)]))
    assert tree.depth == 1
    assert np.allclose(tree.averages[0][0], np.eye(2))
    assert np.allclose(tree.inverse_averages[0][0], 0.5 * (1 / (1 + eps) + 1 / (1 - eps)) * np.eye(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_root_average_is_arithmetic_mean(seed):
    rng = np.random.default_rng(seed)
    leaves = np.array([random_hpd(rng, 2) for _ in range(16)])
    tree = build_tree(leaves)
    assert np.abs(tree.averages[0][0] - leaves.mean(axis=0)).max() < 1e-10
    assert np.abs(tree.inverse_averages[0][0] - np.linalg.inv(leaves).mean(axis=0)).max() < 1e-9
