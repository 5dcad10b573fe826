import csv
import io
import math

import numpy as np
import pytest

from fpa_pos.dist import discrete, uniform
from fpa_pos.equilibria import efficient_joint_strategy, focal_profile
from fpa_pos.instances import (
    build_correlated_instance,
    build_independent_instance,
    point_mass_instance,
    product_instance,
)
from fpa_pos.welfare import (
    BOUND_CORRELATED,
    BOUND_INDEPENDENT,
    CSV_COLUMNS,
    auction_welfare_formula,
    auction_welfare_mc,
    efficiency_gap_mc,
    efficiency_table,
    independent_upper_bound,
    optimal_welfare,
    reports_to_csv,
    simulate_auctions,
)

# Oracle: mpmath at 30 digits, integrating over the curve parameter with
# numerical derivatives, and (correlated) integrating 1 - V_L directly.
INDEPENDENT = {
    0.1: (0.92546902391604127, 0.814497060273180139, 0.880091109723702077),
    0.05: (0.962603044144880294, 0.839536907528592524, 0.872152766018299414),
    0.01: (0.992500371677797541, 0.859632399568987902, 0.866128037932923299),
    0.001: (0.999249591185953225, 0.864161336344875917, 0.864810297614684391),
}
CORRELATED = {
    0.5: (0.578622534919746868, 0.446538216896641177, 0.771726280862142067),
    0.1: (0.923215157253981063, 0.614962024407354349, 0.66610910747663911),
    0.01: (0.99260615791246732, 0.631012471206858658, 0.635712831495958043),
    0.001: (0.999263873780443873, 0.632016199754832701, 0.632481786181032252),
}


def test_bound_constants():
    assert BOUND_INDEPENDENT == pytest.approx(1 - math.exp(-2), abs=1e-15)
    assert BOUND_CORRELATED == pytest.approx(1 - math.exp(-1), abs=1e-15)


@pytest.mark.parametrize("eps", sorted(INDEPENDENT))
def test_independent_frozen(eps):
    opt, fpa, ratio = INDEPENDENT[eps]
    rep = efficiency_table("independent", [eps])[0]
    assert rep.opt == pytest.approx(opt, abs=1e-10)
    assert rep.fpa == pytest.approx(fpa, abs=1e-10)
    assert rep.ratio == pytest.approx(ratio, abs=1e-10)
    assert rep.method == "closed_form"


@pytest.mark.parametrize("eps", sorted(CORRELATED))
def test_correlated_frozen(eps):
    opt, fpa, ratio = CORRELATED[eps]
    rep = efficiency_table("correlated", [eps])[0]
    assert rep.opt == pytest.approx(opt, abs=1e-10)
    assert rep.fpa == pytest.approx(fpa, abs=1e-10)
    assert rep.ratio == pytest.approx(ratio, abs=1e-10)


@pytest.mark.parametrize("eps", sorted(INDEPENDENT))
def test_independent_ratio_band(eps):
    rep = efficiency_table("independent", [eps])[0]
    assert BOUND_INDEPENDENT <= rep.ratio <= independent_upper_bound(eps)
    assert rep.gap == pytest.approx(rep.ratio - BOUND_INDEPENDENT)


def test_ratio_decreases_with_eps():
    eps = [0.1, 0.05, 0.01, 0.001]
    for fam in ("independent", "correlated"):
        r = [x.ratio for x in efficiency_table(fam, eps)]
        assert all(a > b for a, b in zip(r, r[1:]))


def test_correlated_auction_welfare_below_bound():
    for rep in efficiency_table("correlated", [0.5, 0.1, 0.01, 0.001]):
        assert rep.fpa <= BOUND_CORRELATED
    assert efficiency_table("correlated", [0.001])[0].ratio == pytest.approx(BOUND_CORRELATED, abs=5e-3)


def test_correlated_formula_against_direct_integral():
    from scipy.integrate import quad

    eps = 0.2
    inst = build_correlated_instance(eps)
    c = eps + 1 / math.e
    atom = c / (eps + 1)
    ev, _ = quad(lambda x: 1 - c / (eps + 1 - x), 0, 1 - 1 / math.e)
    assert auction_welfare_formula(inst, focal_profile(inst)) == pytest.approx((1 - eps) * atom + ev, abs=1e-12)


def test_formula_rejects_other_instance():
    fp = focal_profile(build_independent_instance(0.1))
    with pytest.raises(ValueError):
        auction_welfare_formula(build_independent_instance(0.05), fp)


@pytest.mark.parametrize("family", ["independent", "correlated"])
def test_monte_carlo_within_three_sigma(family):
    inst = build_independent_instance(0.1) if family == "independent" else build_correlated_instance(0.1)
    fp = focal_profile(inst)
    fpa, se = auction_welfare_mc(inst, fp, None, 200_000, 5)
    assert abs(fpa - auction_welfare_formula(inst, fp)) <= 3 * se
    opt, se_opt = optimal_welfare(inst, "monte_carlo", 200_000, 5)
    assert abs(opt - optimal_welfare(inst)) <= 3 * se_opt


def test_stderr_halves_when_samples_quadruple():
    inst = build_independent_instance(0.1)
    fp = focal_profile(inst)
    _, se1 = auction_welfare_mc(inst, fp, None, 50_000, 9)
    _, se4 = auction_welfare_mc(inst, fp, None, 200_000, 9)
    assert 0.45 <= se4 / se1 <= 0.55


def test_point_mass_instance():
    inst = point_mass_instance([0.3, 0.7, 0.5])
    assert optimal_welfare(inst) == pytest.approx(0.7, abs=1e-15)
    vals = np.vstack([v for v, _, _ in simulate_auctions(inst, efficient_joint_strategy(0.01), None, 10)])
    assert np.all(vals == [0.3, 0.7, 0.5])


def test_generic_expected_max():
    inst = product_instance([uniform(0, 1), uniform(0, 1)])
    assert optimal_welfare(inst) == pytest.approx(2 / 3, abs=1e-10)
    inst = product_instance([discrete([0.0, 1.0], [0.5, 0.5]), uniform(0, 1)])
    assert optimal_welfare(inst) == pytest.approx(0.5 + 0.25, abs=1e-10)


def test_unknown_method():
    with pytest.raises(ValueError):
        optimal_welfare(build_independent_instance(0.1), "magic")


@pytest.mark.parametrize("base", ["independent", "correlated"])
def test_efficient_joint_ratio_is_one(base):
    rep = efficiency_table("bce", [0.1], samples=20_000, seed=2, base_family=base)[0]
    assert rep.ratio == 1.0
    assert rep.reference_bound == 1.0
    inst = build_independent_instance(0.1) if base == "independent" else build_correlated_instance(0.1)
    assert efficiency_gap_mc(inst, efficient_joint_strategy(0.01), None, 20_000, 2) == 0.0


def test_simulation_reproducible():
    inst = build_independent_instance(0.05)
    fp = focal_profile(inst)
    assert auction_welfare_mc(inst, fp, None, 10_000, 3) == auction_welfare_mc(inst, fp, None, 10_000, 3)
    assert auction_welfare_mc(inst, fp, None, 10_000, 3) != auction_welfare_mc(inst, fp, None, 10_000, 4)


def test_simulate_rejects_no_samples():
    inst = build_independent_instance(0.1)
    with pytest.raises(ValueError):
        next(simulate_auctions(inst, focal_profile(inst), None, 0))


def test_csv_rows():
    reps = efficiency_table("independent", [0.1, 0.01])
    rows = list(csv.DictReader(io.StringIO(reports_to_csv(reps))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [float(r["eps"]) for r in rows] == [0.1, 0.01]
    assert float(rows[0]["ratio"]) == pytest.approx(INDEPENDENT[0.1][2], abs=1e-11)
    assert rows[0]["stderr"] == ""


def test_point_mass_values_have_zero_stderr():
    inst = point_mass_instance([0.2, 0.9])
    mean, se = auction_welfare_mc(inst, efficient_joint_strategy(0.01), None, 1000, 0)
    assert mean == 0.9 and se == 0.0
