"""Headline claims, each checked at its stated tolerance."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dist import emd
from .equilibria import (
    LAMBDA_STAR,
    approx_transform,
    efficient_joint_strategy,
    focal_correlated,
    focal_independent,
    solve_bid_ode,
)
from .instances import TieBreakRule, build_correlated_instance, build_independent_instance
from .properties import run_suites
from .verify import interim_utility, verify_bce, verify_bcce, verify_bne, verify_universal_approx, win_model
from .welfare import (
    BOUND_CORRELATED,
    BOUND_INDEPENDENT,
    auction_welfare_mc,
    efficiency_gap_mc,
    efficiency_table,
    independent_upper_bound,
)

EMD_SLACK = 1e-12
ADVERSARIAL_RULES = (TieBreakRule.favor_at_zero(0), TieBreakRule.lowest_index(), TieBreakRule.uniform())


@dataclass
class ClaimResult:
    claim: str
    target: float
    tolerance: float
    computed: float
    passed: bool
    runtime: float = 0.0
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _timed(fn: Callable[[], ClaimResult]) -> ClaimResult:
    t0 = time.perf_counter()
    res = fn()
    res.runtime = time.perf_counter() - t0
    return res


def claim_pos_independent(eps: float = 1e-3) -> ClaimResult:
    rep = efficiency_table("independent", [eps])[0]
    hi = independent_upper_bound(eps)
    ok = BOUND_INDEPENDENT - 5e-7 <= rep.ratio <= hi
    return ClaimResult(
        "pos-independent", 0.864665, hi - 0.864665, rep.ratio, ok,
        detail={"opt": rep.opt, "fpa": rep.fpa, "band": [0.864665, 0.865667]},
    )


def claim_pos_correlated() -> ClaimResult:
    reps = efficiency_table("correlated", [0.5, 0.1, 0.01, 1e-3])
    last = reps[-1]
    below = all(r.fpa <= BOUND_CORRELATED for r in reps)
    ok = abs(last.ratio - BOUND_CORRELATED) <= 0.005 and below
    return ClaimResult(
        "pos-correlated", BOUND_CORRELATED, 0.005, last.ratio, ok,
        detail={"fpa": {str(r.eps): r.fpa for r in reps}, "fpa_below_bound": below},
    )


def claim_bne_independent(eps_list=(0.05, 0.01), grids=(512, 4096)) -> ClaimResult:
    worst, flat = 0.0, 0.0
    for eps in eps_list:
        inst = build_independent_instance(eps)
        fp = focal_independent(inst)
        rep = verify_bne(inst, fp, grids[0], grids[1], 1e-6)
        worst = max(worst, rep.max_regret)
        b = np.linspace(0.0, LAMBDA_STAR, 1000)
        u = interim_utility(win_model(inst, fp.strategy, 0), 1.0, b)
        flat = max(flat, float(np.max(np.abs(u - 4.0 / math.e**2))))
    ok = worst <= 1e-6 and flat <= 1e-8
    return ClaimResult("bne-independent", 0.0, 1e-6, worst, ok, detail={"u_H_deviation": flat})


def claim_bne_correlated(eps: float = 0.1) -> ClaimResult:
    inst = build_correlated_instance(eps)
    rep = verify_bne(inst, focal_correlated(inst), 512, 4096, 1e-9)
    low = max(rep.regret_of(1), rep.regret_of(2))
    high = rep.regret_of(0)
    ok = low == 0.0 and high <= 1e-9
    return ClaimResult("bne-correlated", 0.0, 1e-9, high, ok, detail={"regret_L": low, "regret_H": high})


def _per_value_emd(inst, fp, s_star, points: int = 64) -> float:
    worst = 0.0
    seen = set()
    for k, s in enumerate(fp.strategy.bidders):
        if id(s) in seen:
            continue
        seen.add(id(s))
        vals = [a.point for a in s.values.atoms]
        c = s.values.continuous
        if c is not None:
            vals += list(c.point_fn(np.linspace(c.t_lo, c.t_hi, points)))
        for v in vals:
            worst = max(worst, emd(s.bid_dist(float(v)), s_star[k].bid_dist(float(v)), np.inf))
    return worst


def claim_approx_transform(eps: float = 0.05, deltas=(0.01, 0.001), samples: int = 1_000_000, seed: int = 7) -> ClaimResult:
    inst = build_independent_instance(eps)
    fp = focal_independent(inst)
    base, base_se = auction_welfare_mc(inst, fp, None, samples, seed)
    detail: dict = {"welfare_original": base}
    ok = True
    worst_ratio = 0.0
    for delta in deltas:
        s_star = approx_transform(inst, fp, delta)
        e = _per_value_emd(inst, fp, s_star)
        ok &= e <= delta + EMD_SLACK
        for rule in ADVERSARIAL_RULES:
            w, se = auction_welfare_mc(inst, s_star, rule, samples, seed)
            diff = abs(w - base)
            ok &= diff <= 3.0 * math.hypot(se, base_se)
            detail[f"welfare[{delta:g},{rule.kind}]"] = w
        rep = verify_universal_approx(inst, s_star, delta, ADVERSARIAL_RULES)
        ok &= rep.passed
        worst_ratio = max(worst_ratio, rep.max_regret / delta)
        detail[f"emd_inf[{delta:g}]"] = e
        detail[f"regret[{delta:g}]"] = rep.max_regret
    return ClaimResult("approx-transform", 1.0, 0.0, worst_ratio, bool(ok), detail=detail)


def claim_efficient_joint(eps: float = 0.1, samples: int = 1_000_000, seed: int = 11, delta: float = 0.01) -> ClaimResult:
    js = efficient_joint_strategy(delta)
    gaps, detail, ok = [], {}, True
    for inst in (build_independent_instance(eps), build_correlated_instance(eps)):
        gap = efficiency_gap_mc(inst, js, None, samples, seed)
        bce = verify_bce(inst, js, 16, delta, seed=seed)
        bcce = verify_bcce(inst, js, 16, delta, seed=seed)
        gaps.append(gap)
        ok &= gap == 0.0 and bce.passed and bcce.passed and bcce.max_regret <= bce.max_regret
        detail[inst.family] = {"gap": gap, "bce_regret": bce.max_regret, "bcce_regret": bcce.max_regret}
    return ClaimResult("efficient-joint", 0.0, 0.0, max(gaps), bool(ok), detail=detail)


def claim_ode(eps: float = 0.05, grid: int = 10_000) -> ClaimResult:
    inst = build_independent_instance(eps)
    bs = solve_bid_ode(inst, grid)
    tab, n = bs.tables, inst.n_param
    err_h = float(np.max(np.abs(tab["B_H"] - tab["t"] ** 2 / 4.0)))
    err_l = float(np.max(np.abs(tab["B_L"] - ((1.0 - LAMBDA_STAR) / (1.0 - tab["b"])) ** (1.0 / n))))
    err_lam = abs(tab["lambda"] - LAMBDA_STAR)
    worst = max(err_h, err_l, err_lam)
    return ClaimResult(
        "ode-crosscheck", 0.0, 1e-8, worst, worst <= 1e-8,
        detail={"B_H": err_h, "B_L": err_l, "lambda": err_lam},
    )


def claim_properties(cases: int = 100, seed: int = 0) -> ClaimResult:
    fails = run_suites(cases, seed)
    total = sum(fails.values())
    return ClaimResult("property-suites", 0.0, 0.0, float(total), total == 0, detail=fails)


CLAIMS: dict[str, Callable[[], ClaimResult]] = {
    "pos-independent": claim_pos_independent,
    "pos-correlated": claim_pos_correlated,
    "bne-independent": claim_bne_independent,
    "bne-correlated": claim_bne_correlated,
    "approx-transform": claim_approx_transform,
    "efficient-joint": claim_efficient_joint,
    "ode-crosscheck": claim_ode,
    "property-suites": claim_properties,
}


def reproduce(claims=None) -> list[ClaimResult]:
    names = list(CLAIMS) if not claims else list(claims)
    unknown = [c for c in names if c not in CLAIMS]
    if unknown:
        raise KeyError(f"unknown claim(s): {', '.join(unknown)}")
    return [_timed(CLAIMS[c]) for c in names]
