import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from mwlab import harness, matlin
from mwlab.bellman_probe import (
    BellmanPoint,
    DomainError,
    SamplerError,
    WitnessConfig,
    concat_witnesses,
    embed_deeper,
    in_domain,
    random_witness,
    sample_leaves,
    size_bound_sweep,
    witness_value,
)
from mwlab.dyadic_mart import HaarExpansion, build_tree, dyadic_a2
from mwlab.weight_field import family_leaves
from oracles import random_hpd, sampled_direction_margins

seeds = st.integers(min_value=0, max_value=2**32 - 1)
E1 = np.array([1.0, 0.0])
ZERO = np.zeros(2)
ID = np.eye(2)


def _leaves(rng, depth, d=2):
    return np.array([random_hpd(rng, d, cond=8) for _ in range(2**depth)])


def test_domain_examples():
    inner = in_domain(BellmanPoint(1, 1, ZERO, ZERO, ID, ID), 0.3)
    assert inner.inside and inner.norm_lower == pytest.approx(0.0, abs=1e-14)
    edge = in_domain(BellmanPoint(1, 1, E1, ZERO, ID, ID), 0.3)
    assert edge.inside and edge.x_psd == pytest.approx(0.0, abs=1e-14)
    out = in_domain(BellmanPoint(1, 1, 2 * E1, ZERO, ID, ID), 0.3)
    assert not out.inside and out.x_psd == pytest.approx(-3.0)


def test_domain_norm_constraint():
    s = np.diag([1.2, 1.0])
    assert in_domain(BellmanPoint(1, 1, ZERO, ZERO, ID, s), 0.3).inside
    check = in_domain(BellmanPoint(1, 1, ZERO, ZERO, ID, s), 0.05)
    assert not check.inside and check.norm_upper < 0
    # r^(1/2) s^(1/2) shorter than 1 is outside for every delta
    assert not in_domain(BellmanPoint(1, 1, ZERO, ZERO, ID, 0.5 * ID), 10.0).inside


def test_negative_mass_rejected():
    with pytest.raises(ValueError):
        BellmanPoint(-1, 1, ZERO, ZERO, ID, ID)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_domain_unitary_invariance(seed):
    rng = np.random.default_rng(seed)
    r, s = random_hpd(rng, 3), random_hpd(rng, 3)
    p = BellmanPoint(2.0, 3.0, rng.normal(size=3) + 1j * rng.normal(size=3), rng.normal(size=3), r, s)
    u = unitary_group.rvs(3, random_state=rng)
    a, b = in_domain(p, 0.5), in_domain(p.conjugated(u), 0.5)
    assert a.inside == b.inside
    for name in ("x_psd", "y_psd", "norm_lower", "norm_upper"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_domain_margins_against_direction_sampling(seed):
    rng = np.random.default_rng(seed)
    r, s = random_hpd(rng, 2), random_hpd(rng, 2)
    x, y = rng.normal(size=2) + 1j * rng.normal(size=2), rng.normal(size=2)
    p = BellmanPoint(1.5, 0.7, x, y, r, s)
    check = in_domain(p, 1.0)
    mx, my = sampled_direction_margins(p.X, p.Y, p.x, p.y, p.r, p.s, rng)
    # the eigenvalue margin is the infimum over unit directions
    assert mx >= check.x_psd - 1e-12 and my >= check.y_psd - 1e-12
    assert mx < check.x_psd + 0.05 * (1 + abs(check.x_psd))
    assert my < check.y_psd + 0.05 * (1 + abs(check.y_psd))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(min_value=1, max_value=4))
def test_witness_point_lies_in_domain(seed, depth):
    rng = np.random.default_rng(seed)
    cfg = random_witness(_leaves(rng, depth), rng)
    check = in_domain(cfg.point(), cfg.delta())
    assert check.inside, check


def test_witness_value_examples():
    rng = np.random.default_rng(0)
    leaves = _leaves(rng, 3)
    f = HaarExpansion.from_leaves(rng.normal(size=(8, 2)))
    g = HaarExpansion.from_leaves(np.tile([1.0, -2.0], (8, 1)))
    assert witness_value(WitnessConfig(leaves, f, g)) == 0.0
    v = np.array([1.0, 1j])
    single = HaarExpansion.from_leaves(np.array([-v, v]))
    assert witness_value(WitnessConfig(np.array([ID, ID]), single, single)) == pytest.approx(2.0)


def test_identity_tree_ratio_at_most_one():
    rng = np.random.default_rng(1)
    leaves = family_leaves("identity", [], 3, 2)
    for k in range(50):
        cfg = random_witness(leaves, rng, aligned=None if k % 2 else 0.1)
        p = cfg.point()
        assert witness_value(cfg) <= np.sqrt(p.X * p.Y) * (1 + 1e-12)


def _root_term(plus, minus):
    dx = plus.point().x - minus.point().x
    dy = plus.point().y - minus.point().y
    return dx, dy


def test_concat_equal_inputs():
    rng = np.random.default_rng(2)
    a = random_witness(_leaves(rng, 2), rng)
    c = concat_witnesses(a, a)
    p, q = a.point(), c.point()
    assert q.X == pytest.approx(p.X) and q.Y == pytest.approx(p.Y)
    assert np.allclose(q.x, p.x) and np.allclose(q.r, p.r) and np.allclose(q.s, p.s)
    assert witness_value(c) == pytest.approx(witness_value(a), rel=1e-12)


def test_concat_equal_means_averages_values():
    rng = np.random.default_rng(3)
    leaves = _leaves(rng, 2)
    a, b = random_witness(leaves, rng), random_witness(leaves, rng)
    # shift b so its means agree with a
    shift_f = a.f.mean - b.f.mean
    shift_g = a.g.mean - b.g.mean
    b = WitnessConfig(leaves, HaarExpansion.from_leaves(b.f.to_leaves() + shift_f),
                      HaarExpansion.from_leaves(b.g.to_leaves() + shift_g))
    c = concat_witnesses(a, b, delta=10.0)
    assert witness_value(c) == pytest.approx(0.5 * (witness_value(a) + witness_value(b)), rel=1e-12)


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_concat_midpoint_inequality(depth):
    rng = np.random.default_rng(depth)
    for _ in range(25):
        a, b = random_witness(_leaves(rng, depth), rng), random_witness(_leaves(rng, depth), rng)
        try:
            c = concat_witnesses(a, b, delta=max(a.delta(), b.delta()) + 100.0)
        except DomainError:
            continue
        va, vb, vc = witness_value(a), witness_value(b), witness_value(c)
        dx, dy = _root_term(a, b)
        # the halves keep their values at half the length; the new root term is 1/4 |(dx, dy)|
        assert vc == pytest.approx(0.5 * va + 0.5 * vb + 0.25 * abs(np.vdot(dy, dx)), abs=matlin.TOL_LIN)
        assert np.allclose(c.point().X, 0.5 * (a.point().X + b.point().X))


def test_concat_rejects_point_outside_domain():
    d = 2
    f = HaarExpansion.from_leaves(np.array([[1.0, 0.0], [-1.0, 0.5]]))
    plus = WitnessConfig(np.array([2 * np.eye(d)] * 2), f, f)
    minus = WitnessConfig(np.array([0.5 * np.eye(d)] * 2), f, f)
    assert plus.delta() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DomainError) as info:
        concat_witnesses(plus, minus)
    assert info.value.check.norm_upper < 0


def test_concat_shape_mismatch():
    rng = np.random.default_rng(4)
    a, b = random_witness(_leaves(rng, 1), rng), random_witness(_leaves(rng, 2), rng)
    with pytest.raises(ValueError):
        concat_witnesses(a, b)


def test_embed_deeper_preserves_point_and_value():
    rng = np.random.default_rng(5)
    cfg = random_witness(_leaves(rng, 3), rng)
    deep = embed_deeper(cfg)
    assert deep.depth == cfg.depth + 1
    assert witness_value(deep) == pytest.approx(witness_value(cfg), rel=1e-12)
    p, q = cfg.point(), deep.point()
    assert q.X == pytest.approx(p.X) and np.allclose(q.s, p.s)
    assert deep.delta() == pytest.approx(cfg.delta(), abs=1e-12)


def test_sample_leaves_hits_band():
    rng = np.random.default_rng(6)
    for delta in (0.01, 0.09, 0.25):
        excess = dyadic_a2(build_tree(sample_leaves(delta, 3, 2, rng))) - 1
        assert delta / 4 < excess <= delta


def test_sampler_error_when_band_unreachable():
    with pytest.raises(SamplerError, match="band"):
        sample_leaves(0.1, 3, 2, np.random.default_rng(0), family="identity", retries=2)


def test_size_bound_sweep_rows():
    rows = size_bound_sweep([0.04, 0.16], 6, seed=3, depth=2)
    assert [r.delta for r in rows] == [0.04, 0.16]
    for r in rows:
        assert r.samples == 6 and not r.exhaustive
        assert r.c_delta == pytest.approx((r.max_ratio - 1) / np.sqrt(r.delta))
        assert r.max_ratio > 0
    assert size_bound_sweep([0.04, 0.16], 6, seed=3, depth=2) == rows
    with pytest.raises(ValueError):
        size_bound_sweep([0.7], 2)


def test_size_bound_with_fitted_constant():
    cfg = harness.ExperimentConfig.from_dict({"experiment": "martingale", "depth": 3, "budget": 64,
                                              "family": {"name": "random_smooth", "params": [0.0, 7, 2]},
                                              "eps_grid": [0.05, 0.1, 0.15, 0.2, 0.3, 0.4]})
    rows = harness.martingale_rows(cfg)
    c = harness.fit_constant([(np.sqrt(r["dyadic_a2"] - 1), r["sup_norm"] - 1) for r in rows]).fitted_c
    rng = np.random.default_rng(11)
    for k in range(40):
        w = random_witness(sample_leaves(0.1, 3, 2, rng), rng, aligned=None if k % 2 else 0.1)
        p = w.point()
        assert witness_value(w) <= (1 + c * np.sqrt(0.1)) * np.sqrt(p.X * p.Y)
