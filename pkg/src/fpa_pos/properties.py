"""Randomised invariant checks shared by the test-suite and ``reproduce``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .dist import Dist1D, Distribution, discrete, emd, mixture, point_mass, uniform
from .equilibria import bid_to_value, efficient_joint_strategy, focal_independent
from .instances import TieBreakRule, build_independent_instance, product_instance
from .verify import verify_bce, verify_bcce

GALOIS_TOL = 1e-9


def random_distribution(rng: np.random.Generator) -> Distribution:
    """A random point mass, discrete law, uniform, or mixture of these on [0, 1]."""
    kind = rng.integers(4)
    if kind == 0:
        return point_mass(float(rng.random()))
    if kind == 1:
        k = int(rng.integers(1, 6))
        pts = np.unique(np.round(rng.random(k), 6))
        w = rng.random(len(pts)) + 0.05
        return discrete(pts, w / w.sum())
    if kind == 2:
        lo, hi = np.sort(rng.random(2))
        return uniform(float(lo), float(lo + max(hi - lo, 1e-3)))
    parts = [random_distribution(rng) for _ in range(int(rng.integers(2, 4)))]
    w = rng.random(len(parts)) + 0.05
    return mixture(list(zip(w / w.sum(), parts)))


def check_monotone_cdf(d: Distribution) -> bool:
    x = np.linspace(-0.1, 1.1, 513)
    f = d.cdf(x)
    return bool(np.all(np.diff(f) >= -1e-15) and f[0] >= 0.0 and f[-1] <= 1.0 + 1e-12)


def check_normalized(d: Distribution) -> bool:
    return bool(abs(float(d.cdf(np.array(d.support_hi))) - 1.0) <= 1e-12 and float(d.cdf(np.array(d.support_lo - 1e-9))) == 0.0)


def check_emd_order(d1: Distribution, d2: Distribution) -> bool:
    e1, e2, einf = emd(d1, d2, 1, grid=4001), emd(d1, d2, 2, grid=4001), emd(d1, d2, np.inf, grid=4001)
    return bool(e1 <= e2 + 1e-12 and e2 <= einf + 1e-12)


def check_galois(d: Distribution, rng: np.random.Generator, points: int = 64) -> bool:
    """quantile(q) <= x exactly when q <= cdf(x), away from floating-point ties."""
    q = rng.random(points)
    x = rng.uniform(d.support_lo - 0.05, d.support_hi + 0.05, points)
    lhs = d.quantile(q)[:, None] <= x[None, :]
    cdf = d.cdf(x)[None, :]
    rhs = q[:, None] <= cdf
    clear = np.abs(q[:, None] - cdf) > GALOIS_TOL
    return bool(np.all((lhs == rhs) | ~clear))


def check_tie_argmax(rng: np.random.Generator) -> bool:
    n = int(rng.integers(1, 7))
    bids = rng.integers(0, 3, size=(32, n)).astype(float) * 0.5
    rules = [TieBreakRule.lowest_index(), TieBreakRule.uniform(), TieBreakRule.favor_at_zero(int(rng.integers(n)))]
    rules.append(TieBreakRule.table(list(rng.permutation(n))))
    for rule in rules:
        w = rule.choose(bids, rng.random(len(bids)))
        if not np.all(bids[np.arange(len(bids)), w] == bids.max(axis=1)):
            return False
    return True


def check_phi_monotone(rng: np.random.Generator) -> bool:
    eps = float(rng.uniform(0.01, 0.124))
    fp = focal_independent(build_independent_instance(eps))
    bs = fp.bid_system
    b = np.sort(rng.uniform(0.01, bs.lam - 0.01, 32))
    closed = bs.bid_to_value(1, b)
    numeric = bid_to_value(bs, 1, b, numeric=True)
    return bool(np.all(np.diff(closed) > 0) and np.all(np.diff(numeric) > 0))


def check_bcce_below_bce(rng: np.random.Generator) -> bool:
    n = int(rng.integers(2, 4))
    margins = []
    for _ in range(n):
        k = int(rng.integers(1, 4))
        pts = np.unique(np.round(rng.random(k), 3))
        w = rng.random(len(pts)) + 0.1
        margins.append(discrete(pts, w / w.sum()))
    inst = product_instance(margins)
    delta = float(rng.uniform(0.0, 0.1))
    js = efficient_joint_strategy(delta)
    seed = int(rng.integers(1 << 31))
    bce = verify_bce(inst, js, 4, delta, samples=400, seed=seed, bid_grid=33)
    bcce = verify_bcce(inst, js, 4, delta, samples=400, seed=seed, bid_grid=33)
    return bcce.max_regret <= bce.max_regret + 1e-12


def _dist_case(check: Callable[[Distribution], bool]) -> Callable[[np.random.Generator], bool]:
    return lambda rng: check(random_distribution(rng))


SUITES: dict[str, Callable[[np.random.Generator], bool]] = {
    "monotone_cdf": _dist_case(check_monotone_cdf),
    "mass_normalization": _dist_case(check_normalized),
    "emd_order": lambda rng: check_emd_order(random_distribution(rng), random_distribution(rng)),
    "galois_quantile": lambda rng: check_galois(random_distribution(rng), rng),
    "tie_break_argmax": check_tie_argmax,
    "phi_monotone": check_phi_monotone,
    "bcce_below_bce": check_bcce_below_bce,
}


def run_suites(cases: int = 100, seed: int = 0) -> dict[str, int]:
    """Number of failing cases per suite."""
    out = {}
    for k, (name, check) in enumerate(SUITES.items()):
        rng = np.random.default_rng([seed, k])
        out[name] = sum(not check(rng) for _ in range(cases))
    return out
