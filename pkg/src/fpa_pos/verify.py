"""Approximate-equilibrium checks: exact interim utilities, deviation scans, Monte Carlo."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist import Dist1D, Distribution, Mixture
from .equilibria import (
    BidSystem,
    FocalProfile,
    IndependentStrategy,
    JointStrategy,
    competing_sources,
    product_of,
)
from .instances import Instance, TieBreakRule, sample_values

CURVE_PANELS = 4096
MAX_CELLS = 64


@dataclass(frozen=True)
class WinModel:
    """Interim allocation of one bidder against independent competing sources."""

    bidder: int
    sources: tuple
    rule: TieBreakRule

    def atom_points(self) -> list[float]:
        return sorted({p for s in self.sources for p in s.atom_points()})

    def tie_mass(self, p: float) -> float:
        return self.rule.tie_win_mass(self.bidder, p, self.sources)

    def left(self, b) -> np.ndarray:
        return product_of(self.sources, "cdf_left", b)

    def win_prob(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        out = self.left(b)
        for p in self.atom_points():
            hit = b == p
            if np.any(hit):
                out = np.where(hit, out + self.tie_mass(p), out)
        return np.clip(out, 0.0, 1.0)


def win_model(inst: Instance, strategy: IndependentStrategy, i: int, value: float | None = None) -> WinModel:
    return WinModel(i, tuple(competing_sources(inst, strategy, i, value)), inst.tie_rule)


def interim_utility(w: WinModel, v, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("bids must be nonnegative")
    return (np.asarray(v, dtype=float) - b) * w.win_prob(b)


def expected_utility(w: WinModel, v: float, bids: Distribution, panels: int = CURVE_PANELS) -> float:
    """E[u(v, b)] for b drawn from ``bids``: atoms exactly, curve parts by a midpoint Stieltjes sum."""
    if isinstance(bids, Mixture):
        return sum(wt * expected_utility(w, v, c, panels) for wt, c in bids.components)
    assert isinstance(bids, Dist1D)
    total = 0.0
    if bids.atoms:
        pts = np.array([a.point for a in bids.atoms])
        total += float(np.dot([a.mass for a in bids.atoms], interim_utility(w, v, pts)))
    c = bids.continuous
    if c is not None:
        t = np.linspace(c.t_lo, c.t_hi, panels + 1)
        mid = 0.5 * (t[1:] + t[:-1])
        total += float(np.dot(np.diff(c.cdf_fn(t)), interim_utility(w, v, c.point_fn(mid))))
    return total


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class BidderRegret:
    bidder: int
    name: str
    max_regret: float
    value: float
    bid: float
    deviation: float
    stderr: float = 0.0


@dataclass(frozen=True)
class RegretReport:
    rows: tuple[BidderRegret, ...]
    method: str
    delta_target: float
    mc_stderr: float | None = None
    rule: str | None = None
    details: dict = field(default_factory=dict, compare=False)

    @property
    def max_regret(self) -> float:
        return max((r.max_regret for r in self.rows), default=0.0)

    @property
    def worst(self) -> BidderRegret | None:
        return max(self.rows, key=lambda r: r.max_regret, default=None)

    @property
    def passed(self) -> bool:
        slack = 3.0 * (self.mc_stderr or 0.0)
        return self.max_regret <= self.delta_target + slack

    def regret_of(self, bidder: int) -> float:
        return next(r.max_regret for r in self.rows if r.bidder == bidder)

    def to_json(self) -> dict:
        def num(x):
            return None if x is None or not math.isfinite(x) else float(x)

        return {
            "method": self.method,
            "rule": self.rule,
            "delta_target": num(self.delta_target),
            "mc_stderr": num(self.mc_stderr),
            "max_regret": num(self.max_regret),
            "passed": self.passed,
            "bidders": [
                {
                    "bidder": r.bidder,
                    "name": r.name,
                    "max_regret": num(r.max_regret),
                    "witness": {"value": num(r.value), "bid": num(r.bid), "deviation": num(r.deviation)},
                    "stderr": num(r.stderr),
                }
                for r in self.rows
            ],
            **{k: v for k, v in self.details.items()},
        }


# --------------------------------------------------------------------------
# exact BNE scan


def _value_points(values: Dist1D, count: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Grid values on the support: atom points first, then points of the curve (with parameters)."""
    atoms = np.array([a.point for a in values.atoms])
    c = values.continuous
    if c is None:
        return atoms, None
    t = np.linspace(c.t_lo, c.t_hi, count)
    return atoms, t


def _deviation_grid(bs: BidSystem, w: WinModel, bid_grid: int, extra: Sequence[float]) -> np.ndarray:
    top = bs.lam + max(0.01, 0.02 * bs.lam)
    atoms = w.atom_points()
    cands = [np.linspace(0.0, top, bid_grid), [0.0, bs.gamma, bs.lam], atoms]
    cands.append([np.nextafter(p, np.inf) for p in atoms])
    cands.append(list(extra))
    g = np.unique(np.concatenate([np.asarray(c, dtype=float).ravel() for c in cands]))
    return g[g >= 0.0]


def _scan(w: WinModel, values: np.ndarray, current: np.ndarray, dev: np.ndarray):
    """Regret per value: best deviation utility minus current utility."""
    x = w.win_prob(dev)
    best_idx = np.empty(len(values), dtype=int)
    best = np.empty(len(values))
    for lo in range(0, len(values), 256):
        v = values[lo : lo + 256, None]
        u = (v - dev[None, :]) * x[None, :]
        j = u.argmax(axis=1)
        best_idx[lo : lo + 256] = j
        best[lo : lo + 256] = u[np.arange(len(j)), j]
    return best - current, dev[best_idx]


def _as_profile(inst: Instance, profile) -> tuple[IndependentStrategy, BidSystem]:
    if isinstance(profile, FocalProfile):
        if profile.instance.family != inst.family or profile.instance.n_bidders != inst.n_bidders:
            raise ValueError("profile was built for a different instance")
        return profile.strategy, profile.bid_system
    if isinstance(profile, IndependentStrategy):
        if len(profile) != inst.n_bidders:
            raise ValueError("strategy size does not match the instance")
        return profile, BidSystem.from_strategy(inst, profile)
    raise TypeError("verify_bne needs a FocalProfile or IndependentStrategy")


def verify_bne(
    inst: Instance,
    fp,
    value_grid: int = 512,
    bid_grid: int = 4096,
    delta: float = 1e-6,
    bidders: Sequence[int] | None = None,
) -> RegretReport:
    """Grid-scan regret of an independent strategy profile under the instance's tie rule.

    Utilities are exact given the competing bid distributions; for bidders
    sharing a value draw the competing model conditions on that value.
    """
    strategy, bs = _as_profile(inst, fp)
    rows = []
    for i in bidders if bidders is not None else range(inst.n_bidders):
        s = strategy[i]
        shared = len(inst.block_of(i)) > 1
        atoms, t = _value_points(s.values, value_grid)
        best = BidderRegret(i, inst.names[i], -np.inf, np.nan, np.nan, np.nan)

        def consider(reg, dev_at, vals, bids):
            nonlocal best
            j = int(np.argmax(reg))
            if reg[j] > best.max_regret:
                best = BidderRegret(i, inst.names[i], float(reg[j]), float(vals[j]), float(bids[j]), float(dev_at[j]))

        if not shared:
            w = win_model(inst, strategy, i)
            for p in atoms:
                d = s.bid_dist(p)
                cur = expected_utility(w, p, d)
                dev = _deviation_grid(bs, w, bid_grid, [a.point for a in d.atom_list()] + [d.support_lo, d.support_hi])
                reg, at = _scan(w, np.array([p]), np.array([cur]), dev)
                consider(reg, at, [p], [d.support_lo if d.is_point_mass else np.nan])
            if t is not None:
                c = s.values.continuous
                vals, cur_bids = c.point_fn(t), s.curve_bid(t)
                cur = interim_utility(w, vals, cur_bids)
                dev = _deviation_grid(bs, w, bid_grid, cur_bids)
                reg, at = _scan(w, vals, cur, dev)
                consider(reg, at, vals, cur_bids)
        else:
            pts = list(atoms)
            if t is not None:
                pts += list(s.values.continuous.point_fn(t))
            for p in pts:
                w = win_model(inst, strategy, i, value=float(p))
                d = s.bid_dist(float(p))
                cur = expected_utility(w, p, d)
                dev = _deviation_grid(bs, w, bid_grid, [a.point for a in d.atom_list()])
                reg, at = _scan(w, np.array([p]), np.array([cur]), dev)
                consider(reg, at, [p], [d.support_lo if d.is_point_mass else np.nan])
        best = BidderRegret(i, best.name, max(best.max_regret, 0.0), best.value, best.bid, best.deviation)
        rows.append(best)
    return RegretReport(tuple(rows), "closed_form" if not inst.is_correlated else "grid_scan", delta, None, inst.tie_rule.kind)


def verify_universal_approx(
    inst: Instance,
    s_star: IndependentStrategy,
    delta: float,
    adversarial_rules: Sequence[TieBreakRule],
    value_grid: int = 512,
    bid_grid: int = 4096,
) -> RegretReport:
    """Worst regret of ``s_star`` over several tie rules."""
    if not adversarial_rules:
        raise ValueError("need at least one tie rule")
    reports = [verify_bne(inst.with_rule(r), s_star, value_grid, bid_grid, delta) for r in adversarial_rules]
    worst = max(reports, key=lambda r: r.max_regret)
    per_rule = {r.rule: r.max_regret for r in reports}
    return RegretReport(worst.rows, worst.method, delta, None, worst.rule, {"per_rule": per_rule})


# --------------------------------------------------------------------------
# Monte Carlo checks for joint strategies


def _conditional_profiles(inst: Instance, i: int, v: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    vals = sample_values(inst, rng.random((samples, len(inst.blocks))))
    for k in inst.block_of(i):
        vals[:, k] = v
    return vals


def _deviation_wins(rule: TieBreakRule, bids: np.ndarray, i: int, dev: np.ndarray) -> np.ndarray:
    """(samples, deviations) expected allocation of bidder i after bidding each deviation."""
    others = np.delete(bids, i, axis=1)
    m = others.max(axis=1) if others.shape[1] else np.full(len(bids), -np.inf)
    wins = (dev[None, :] > m[:, None]).astype(float)
    for j in np.flatnonzero(np.isin(dev, m)):
        rows = np.flatnonzero(m == dev[j])
        moved = bids[rows].copy()
        moved[:, i] = dev[j]
        wins[rows, j] = rule.win_probabilities(moved)[:, i]
    return wins


def _cells(rec: np.ndarray, max_cells: int) -> np.ndarray:
    edges = np.unique(np.quantile(rec, np.linspace(0.0, 1.0, max_cells + 1)[1:-1]))
    return np.searchsorted(edges, rec, side="left")


def _joint_regret(
    inst: Instance,
    js: JointStrategy,
    value_grid: int,
    delta: float,
    samples: int,
    seed: int,
    bid_grid: int,
    coarse: bool,
) -> RegretReport:
    rule = inst.tie_rule
    children = np.random.SeedSequence(seed).spawn(inst.n_bidders)
    vmax = max(d.support_hi for d in inst.marginals)
    rows = []
    for i in range(inst.n_bidders):
        rng = np.random.default_rng(children[i])
        atoms, t = _value_points(inst.marginals[i], value_grid)
        pts = list(atoms)
        if t is not None:
            pts += list(inst.marginals[i].continuous.point_fn(t))
        best = BidderRegret(i, inst.names[i], -np.inf, np.nan, np.nan, np.nan)
        for v in pts:
            vals = _conditional_profiles(inst, i, float(v), samples, rng)
            bids = js.bids(vals, rng.random(vals.shape))
            rec = bids[:, i]
            cur = (v - rec) * rule.win_probabilities(bids)[:, i]
            small = [0.0, delta / 2, v]
            dev = np.unique(np.concatenate([np.linspace(0.0, vmax, bid_grid), small, np.nextafter(small, np.inf)]))
            gain = (v - dev)[None, :] * _deviation_wins(rule, bids, i, dev) - cur[:, None]
            cells = np.zeros(len(rec), dtype=int) if coarse else _cells(rec, MAX_CELLS)
            order = np.argsort(cells, kind="stable")
            starts = np.flatnonzero(np.r_[True, np.diff(cells[order]) != 0])
            counts = np.diff(np.r_[starts, len(order)])
            means = np.add.reduceat(gain[order], starts, axis=0) / counts[:, None]
            c, j = np.unravel_index(int(means.argmax()), means.shape)
            if means[c, j] > best.max_regret:
                rows_c = order[starts[c] : starts[c] + counts[c]]
                g = gain[rows_c, j]
                se = float(g.std(ddof=1) / math.sqrt(len(g))) if len(g) > 1 else 0.0
                rb = float(np.median(rec[rows_c]))
                best = BidderRegret(i, inst.names[i], float(means[c, j]), float(v), rb, float(dev[j]), se)
        rows.append(BidderRegret(i, best.name, max(best.max_regret, 0.0), best.value, best.bid, best.deviation, best.stderr))
    worst = max(rows, key=lambda r: r.max_regret)
    return RegretReport(tuple(rows), "monte_carlo", delta, worst.stderr, rule.kind, {"samples": samples, "seed": seed})


def verify_bce(
    inst: Instance,
    js: JointStrategy,
    value_grid: int = 16,
    delta: float = 0.01,
    samples: int = 20_000,
    seed: int = 0,
    bid_grid: int = 257,
) -> RegretReport:
    """Regret conditioned on own value and (binned) recommended bid."""
    if math.isinf(delta):
        return RegretReport((), "monte_carlo", delta)
    return _joint_regret(inst, js, value_grid, delta, samples, seed, bid_grid, coarse=False)


def verify_bcce(
    inst: Instance,
    js: JointStrategy,
    value_grid: int = 16,
    delta: float = 0.01,
    samples: int = 20_000,
    seed: int = 0,
    bid_grid: int = 257,
) -> RegretReport:
    """Regret conditioned on own value only.

    Uses the same draws and deviation candidates as :func:`verify_bce` for
    equal arguments, so its regret never exceeds the BCE regret.
    """
    if math.isinf(delta):
        return RegretReport((), "monte_carlo", delta)
    return _joint_regret(inst, js, value_grid, delta, samples, seed, bid_grid, coarse=True)
