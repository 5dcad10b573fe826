import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpa_pos.dist import discrete, emd, point_mass, uniform
from fpa_pos.equilibria import (
    LAMBDA_STAR,
    BidderStrategy,
    BidSystem,
    FlatCompetingCDFError,
    FocalProfile,
    IndependentStrategy,
    MonopolistError,
    approx_transform,
    bid_of_t,
    bid_to_value,
    detect_monopolist,
    efficient_joint_strategy,
    focal_correlated,
    focal_independent,
    focal_to_json,
    implicit_bid_h,
    implicit_cdf_h,
    solve_bid_ode,
)
from fpa_pos.instances import (
    TieBreakRule,
    build_correlated_instance,
    build_independent_instance,
    product_instance,
)

ATOM_N8 = 0.926155432398205391  # (4/e^2)^(1/8), mpmath


@pytest.fixture(scope="module")
def focal05():
    inst = build_independent_instance(0.05)
    return inst, focal_independent(inst)


@pytest.fixture(scope="module")
def corr01():
    inst = build_correlated_instance(0.1)
    return inst, focal_correlated(inst)


def low_value(t, n):
    return 1 - (n - (t - 1)) / (n * t - (t - 1)) * t**2 * math.exp(2 - 2 * t)


def test_lambda_star():
    assert LAMBDA_STAR == pytest.approx(0.4586588670535492, abs=1e-15)


def test_focal_bid_cdf_endpoints(focal05):
    _, fp = focal05
    bs = fp.bid_system
    assert bs.bids[0].cdf(0.0) == pytest.approx(0.25, abs=1e-15)
    assert bs.bids[0].cdf(LAMBDA_STAR) == 1.0
    assert bs.gamma == 0.0
    assert bs.lam == pytest.approx(LAMBDA_STAR, abs=1e-15)


def test_low_bid_cdf_at_zero_n8():
    inst = build_independent_instance(0.1, n=8)
    bs = focal_independent(inst).bid_system
    assert bs.bids[1].cdf(0.0) == pytest.approx(ATOM_N8, abs=1e-14)
    assert bs.bids[1].cdf(LAMBDA_STAR) == 1.0


def test_high_bid_cdf_solves_implicit_equation(focal05):
    _, fp = focal05
    b = np.linspace(0.0, LAMBDA_STAR, 200)
    bh = fp.bid_system.bids[0].cdf(b)
    np.testing.assert_allclose(implicit_bid_h(bh), b, atol=1e-12)
    assert np.all((bh >= 0.25 - 1e-15) & (bh <= 1.0))


def test_implicit_inverse_with_eps():
    b = np.linspace(0.0, LAMBDA_STAR, 50)
    s = implicit_cdf_h(b, 0.05)
    np.testing.assert_allclose(implicit_bid_h(s, 0.05), b, atol=1e-12)
    assert s[0] == pytest.approx((0.25 - 0.05) / 0.95, abs=1e-12)


def test_low_bid_cdf_closed_form(focal05):
    inst, fp = focal05
    b = np.linspace(0.0, LAMBDA_STAR, 300)
    closed = ((1 - LAMBDA_STAR) / (1 - b)) ** (1 / inst.n_param)
    np.testing.assert_allclose(fp.bid_system.bids[1].cdf(b), closed, atol=1e-12)


def test_first_order_is_product(focal05):
    inst, fp = focal05
    bs = fp.bid_system
    b = np.linspace(0.0, LAMBDA_STAR, 100)
    prod = bs.bids[0].cdf(b) * bs.bids[1].cdf(b) ** inst.n_param
    np.testing.assert_allclose(bs.first_order_cdf(b), prod, atol=1e-10)
    assert bs.first_order_cdf(0.0) == pytest.approx(1 / math.e**2, abs=1e-14)


def test_phi_high_is_one(focal05):
    _, fp = focal05
    b = np.linspace(0.01, LAMBDA_STAR - 0.01, 50)
    np.testing.assert_array_equal(fp.bid_system.bid_to_value(0, b), 1.0)
    np.testing.assert_allclose(bid_to_value(fp.bid_system, 0, b, numeric=True), 1.0, atol=1e-8)


def test_phi_low_at_t_one_and_a_half(focal05):
    inst, fp = focal05
    n = inst.n_param
    b = bid_of_t(1.5)
    expected = 1 - (n - 0.5) / (1.5 * n - 0.5) * 2.25 / math.e
    assert fp.bid_system.bid_to_value(1, b) == pytest.approx(expected, abs=1e-12)
    assert bid_to_value(fp.bid_system, 1, b, numeric=True) == pytest.approx(expected, abs=1e-7)


def test_phi_inverts_low_strategy(focal05):
    inst, fp = focal05
    t = np.linspace(1.0, 2.0, 1000)
    v = np.array([low_value(x, inst.n_param) for x in t])
    np.testing.assert_allclose(fp.bid_system.bid_to_value(1, fp.strategy[1].curve_bid(t)), v, atol=1e-9)


def test_phi_monotone_on_grid(focal05):
    _, fp = focal05
    b = np.linspace(0.0, LAMBDA_STAR, 1002)[1:-1]
    assert np.all(np.diff(fp.bid_system.bid_to_value(1, b)) > 0)
    assert np.all(np.diff(bid_to_value(fp.bid_system, 1, b, numeric=True)) > 0)


def test_phi_linear_competition():
    bs = BidSystem.from_product([uniform(0, 0.5), uniform(0, 0.5)])
    b = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(bid_to_value(bs, 0, b), 2 * b, atol=1e-9)


def test_flat_competing_cdf_raises():
    bs = BidSystem.from_product([discrete([0.0, 0.5], [0.5, 0.5]), discrete([0.0, 0.5], [0.5, 0.5])])
    with pytest.raises(FlatCompetingCDFError):
        bid_to_value(bs, 0, 0.25)


def test_focal_correlated_strategies(corr01):
    _, fp = corr01
    assert fp.strategy[0].bid_dist(1.0).atom_list()[0].point == 0.0
    assert fp.strategy[1].bid_dist(0.3).atom_list()[0].point == 0.3
    assert fp.bid_system.gamma == 0.0
    assert fp.bid_system.lam == pytest.approx(1 - 1 / math.e)


def test_correlated_competition_of_high_is_value_cdf(corr01):
    inst, fp = corr01
    b = np.linspace(0, 1 - 1 / math.e, 50)
    np.testing.assert_allclose(fp.bid_system.competing_cdf(0, b), inst.marginals[1].cdf(b), atol=1e-15)


def test_high_utility_maximised_at_zero(corr01):
    inst, fp = corr01
    b = np.linspace(0, 1 - 1 / math.e, 1000)
    u = (1 - b) * fp.bid_system.competing_cdf(0, b)
    assert np.argmax(u) == 0
    assert np.all(u[1:] < u[0])


def test_wrong_family_rejected():
    with pytest.raises(ValueError):
        focal_independent(build_correlated_instance(0.1))
    with pytest.raises(ValueError):
        focal_correlated(build_independent_instance(0.1))


def test_monopolist(focal05, corr01):
    assert detect_monopolist(*focal05) == 0
    assert detect_monopolist(*corr01) == 0
    inst = product_instance([uniform(0, 1), uniform(0, 1)])
    s = BidderStrategy(inst.marginals[0], (), lambda t: np.asarray(t) * 1.0)
    strat = IndependentStrategy((s, BidderStrategy(inst.marginals[1], (), lambda t: np.asarray(t) * 1.0)))
    fp = FocalProfile(inst, strat, BidSystem.from_strategy(inst, strat), "custom")
    assert detect_monopolist(inst, fp) is None


def test_two_monopolists_rejected():
    inst = product_instance([point_mass(1.0), point_mass(1.0)])
    s = [BidderStrategy(d, ((1.0, point_mass(0.0)),)) for d in inst.marginals]
    strat = IndependentStrategy(tuple(s))
    fp = FocalProfile(inst, strat, BidSystem.from_strategy(inst, strat), "custom")
    with pytest.raises(MonopolistError):
        detect_monopolist(inst, fp)


def _table_profile():
    vals = discrete([0.1, 0.3, 0.8], [0.3, 0.3, 0.4])
    inst = product_instance([vals, vals])
    s = BidderStrategy(vals, ((0.1, point_mass(0.3)), (0.3, point_mass(0.3)), (0.8, point_mass(0.5))))
    strat = IndependentStrategy((s, s))
    return inst, FocalProfile(inst, strat, BidSystem.from_strategy(inst, strat), "custom")


@pytest.mark.parametrize("value, bid", [(0.1, 0.29), (0.3, 0.295), (0.8, 0.5)])
def test_transform_table(value, bid):
    inst, fp = _table_profile()
    assert fp.bid_system.gamma == 0.3
    s_star = approx_transform(inst, fp, 0.01)
    assert s_star[0].bid_dist(value).atom_list()[0].point == pytest.approx(bid, abs=1e-15)
    assert s_star.meta["pre_shift"] == 0.0


def test_transform_pre_shift(focal05):
    inst, fp = focal05
    d = 0.01
    s_star = approx_transform(inst, fp, d)
    assert s_star.meta["pre_shift"] == d
    assert s_star[0].bid_dist(0.0).atom_list()[0].point == pytest.approx(d / 2)
    assert s_star[1].bid_dist(0.0).atom_list()[0].point == pytest.approx(d / 2)
    high = s_star[0].bid_dist(1.0)
    assert high.atom_list()[0].point == pytest.approx(d)
    t = np.linspace(1, 2, 20)[1:]  # t = 1 is the zero value, shaded to d/2
    np.testing.assert_allclose(s_star[1].curve_bid(t), bid_of_t(t) + d, atol=1e-15)


def test_transform_rejects_nonpositive_delta(focal05):
    with pytest.raises(ValueError):
        approx_transform(*focal05, 0.0)


@pytest.mark.parametrize("delta", [0.01, 0.001])
def test_transform_per_value_emd(focal05, delta):
    inst, fp = focal05
    s_star = approx_transform(inst, fp, delta)
    vals = [0.0, 1.0]
    for v in vals:
        assert emd(fp.strategy[0].bid_dist(v), s_star[0].bid_dist(v), np.inf) <= delta + 1e-12
    c = inst.marginals[1].continuous
    for v in [0.0, *c.point_fn(np.linspace(1, 2, 30))]:
        assert emd(fp.strategy[1].bid_dist(v), s_star[1].bid_dist(v), np.inf) <= delta + 1e-12


@pytest.mark.parametrize(
    "values, delta, bids",
    [
        ([0.9, 0.4, 0.7], 0.01, [0.7, 0.39, 0.69]),
        ([0.6, 0.6, 0.6], 0.05, [0.6, 0.55, 0.55]),
        ([0.5, 0.5], 0.1, [0.5, 0.4]),
        ([0.3], 0.1, [0.0]),
        ([0.004, 0.001, 0.0], 0.01, [0.004, 0.0, 0.0]),
        ([0.2, 0.001], 0.01, [0.005, 0.0]),
    ],
)
def test_efficient_examples(values, delta, bids):
    out = efficient_joint_strategy(delta).bids(np.array([values]))[0]
    np.testing.assert_allclose(out, bids, atol=1e-15)


@given(
    st.lists(st.sampled_from([0.0, 0.001, 0.3, 0.5, 0.7, 1.0]), min_size=1, max_size=6),
    st.floats(0.001, 0.2),
    st.sampled_from(["lowest", "uniform", "favor_h"]),
)
def test_efficient_allocates_to_top_value(values, delta, rule):
    v = np.array([values])
    bids = efficient_joint_strategy(delta).bids(v)
    assert np.all(bids >= 0)
    w = TieBreakRule.parse(rule).choose(bids, np.array([0.5]))[0]
    assert v[0, w] == v.max()


def test_ode_matches_closed_forms():
    inst = build_independent_instance(0.05)
    bs = solve_bid_ode(inst, 10_000)
    tab = bs.tables
    assert abs(tab["lambda"] - LAMBDA_STAR) <= 1e-8
    assert abs(tab["B_H"][0] - 0.25) <= 1e-8
    assert np.max(np.abs(tab["B_H"] - tab["t"] ** 2 / 4)) <= 1e-8
    closed = ((1 - LAMBDA_STAR) / (1 - tab["b"])) ** (1 / inst.n_param)
    assert np.max(np.abs(tab["B_L"] - closed)) <= 1e-8
    b = np.linspace(0.01, 0.45, 20)
    np.testing.assert_allclose(bid_to_value(bs, 0, b), 1.0, atol=1e-6)


def test_ode_grid_too_small():
    with pytest.raises(ValueError):
        solve_bid_ode(build_independent_instance(0.05), 8)


def test_export(focal05, corr01):
    data = focal_to_json(focal05[1], 11)
    assert len(data["b"]) == 11 and data["B_H"][0] == pytest.approx(0.25) and data["B_L"][-1] == 1.0
    assert focal_to_json(corr01[1], 5)["kind"] == "correlated"


def test_shifted_strategy_changes_bids(focal05):
    inst, fp = focal05
    moved = fp.strategy.shifted([1], 0.05)
    assert moved[1].bid_dist(0.0).atom_list()[0].point == 0.05
    assert moved[2] is fp.strategy[2]
