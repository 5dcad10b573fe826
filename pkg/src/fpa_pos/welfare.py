"""Optimal and auction welfare, efficiency ratios."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate

from .equilibria import FocalProfile, IndependentStrategy, JointStrategy, efficient_joint_strategy, focal_profile
from .instances import (
    Instance,
    TieBreakRule,
    build_correlated_instance,
    build_independent_instance,
    sample_values,
)

BOUND_INDEPENDENT = 0.864664716763387  # 1 - 1/e^2
BOUND_CORRELATED = 0.632120558828558  # 1 - 1/e
CHUNK = 1 << 16
CELLS_PER_CHUNK = 1 << 22
CSV_COLUMNS = ("family", "eps", "opt", "fpa", "ratio", "bound", "gap", "method", "stderr")


def independent_upper_bound(eps: float) -> float:
    """Upper end of the ratio band: (1 - (1-eps)/e^2) / (1-eps)."""
    return (1.0 - (1.0 - eps) / math.e**2) / (1.0 - eps)


@dataclass(frozen=True)
class WelfareReport:
    family: str
    eps: float
    opt: float
    fpa: float
    opt_method: str
    fpa_method: str
    reference_bound: float
    mc_stderr: float | None = None

    @property
    def ratio(self) -> float:
        return self.fpa / self.opt

    @property
    def gap(self) -> float:
        return self.ratio - self.reference_bound

    @property
    def method(self) -> str:
        if self.opt_method == self.fpa_method:
            return self.opt_method
        return f"{self.opt_method}/{self.fpa_method}"

    def row(self) -> dict:
        return {
            "family": self.family,
            "eps": self.eps,
            "opt": self.opt,
            "fpa": self.fpa,
            "ratio": self.ratio,
            "bound": self.reference_bound,
            "gap": self.gap,
            "method": self.method,
            "stderr": self.mc_stderr,
        }

    def to_json(self) -> dict:
        return {**asdict(self), "ratio": self.ratio, "gap": self.gap}


# --------------------------------------------------------------------------
# closed forms


def _correlated_mean_low(eps: float) -> float:
    return (1.0 - 1.0 / math.e) - (eps + 1.0 / math.e) * math.log((eps + 1.0) / (eps + 1.0 / math.e))


def _independent_value(t, n):
    return 1.0 - (n - (t - 1.0)) / (n * t - (t - 1.0)) * t**2 * math.exp(2.0 - 2.0 * t)


def _quad(fn, lo, hi) -> float:
    val, _ = integrate.quad(fn, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(val)


def _expected_max_numeric(inst: Instance) -> float:
    """E[max v] = lo + integral of (1 - prod over blocks of F_block) above the lowest support point."""
    reps = [inst.marginals[b[0]] for b in inst.blocks]
    lo = min(d.support_lo for d in reps)
    hi = max(d.support_hi for d in reps)
    if hi <= lo:
        return lo
    breaks = sorted({a.point for d in reps for a in d.atom_list() if lo < a.point < hi})

    def f(x):
        return 1.0 - float(np.prod([d.cdf(np.array(x)) for d in reps]))

    edges = [lo, *breaks, hi]
    return lo + sum(_quad(f, a, b) for a, b in zip(edges[:-1], edges[1:]))


def optimal_welfare(inst: Instance, method: str = "closed_form", samples: int = 100_000, seed: int = 0):
    """Expected highest value.

    ``closed_form`` returns a float; ``monte_carlo`` returns (mean, stderr).
    """
    if method == "monte_carlo":
        total = _Accumulator()
        for vals in _value_chunks(inst, samples, seed):
            total.add(vals.max(axis=1))
        return total.result()
    if method != "closed_form":
        raise ValueError(f"unknown method {method!r}")
    eps = inst.eps
    if inst.family == "correlated":
        return (1.0 - eps) + eps * _correlated_mean_low(eps)
    if inst.family == "independent":
        n = inst.n_param
        top = 1.0 - (2 * n - 2) / (2 * n - 1) * 2.0 / math.e**2
        # integral of F_L^n over [0, top], by parts in the curve parameter
        tail = _quad(lambda t: _independent_value(t, n) * 8.0 * math.exp(2 * t - 4) * (t - 1.0) / t**3, 1.0, 2.0)
        return 1.0 - eps * (top - tail) - eps * (1.0 - top)
    return _expected_max_numeric(inst)


def auction_welfare_formula(inst: Instance, fp: FocalProfile) -> float:
    """Expected winner value of the focal equilibrium.

    For the independent family this integrates, over the curve parameter t,
    the atom term E[v_H | bid 0] times the first-order CDF at 0 plus each
    bidder's bid-to-value weighted by its log-CDF slope and the first-order
    CDF.
    """
    if fp.instance is not inst and (fp.instance.family, fp.instance.eps) != (inst.family, inst.eps):
        raise ValueError("profile was built for a different instance")
    eps = inst.eps
    if fp.kind == "correlated":
        c = eps + 1.0 / math.e
        return 1.0 - 1.0 / math.e - c * (2 * eps / (1 + eps) - math.log((math.e * eps + 1) / (eps + 1)))
    if fp.kind != "independent":
        raise ValueError(f"no welfare formula for profile kind {fp.kind!r}")
    n = inst.n_param
    atom_term = (1.0 - 4.0 * eps) / math.e**2
    body = _quad(
        lambda t: (2.0 / t + (2.0 - 2.0 / t) * _independent_value(t, n)) * math.exp(2 * t - 4), 1.0, 2.0
    )
    return atom_term + body


# --------------------------------------------------------------------------
# simulation


class _Accumulator:
    """Running mean and standard error, shifted by the first observation for stability."""

    def __init__(self):
        self.n = 0
        self.shift = None
        self.s = 0.0
        self.s2 = 0.0

    def add(self, x: np.ndarray) -> None:
        if len(x) == 0:
            return
        if self.shift is None:
            self.shift = float(x[0])
        d = x - self.shift
        self.n += len(x)
        self.s += float(d.sum())
        self.s2 += float(np.square(d).sum())

    def result(self) -> tuple[float, float]:
        m = self.s / self.n
        mean = self.shift + m
        if self.n < 2:
            return mean, 0.0
        var = max(self.s2 / self.n - m**2, 0.0) * self.n / (self.n - 1)
        return mean, math.sqrt(var / self.n)


def _streams(seed: int):
    values, bids, ties = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(values), np.random.default_rng(bids), np.random.default_rng(ties)


def _chunk_rows(inst: Instance, chunk: int) -> int:
    return max(1024, min(chunk, CELLS_PER_CHUNK // inst.n_bidders))


def _value_chunks(inst: Instance, samples: int, seed: int, chunk: int = CHUNK) -> Iterator[np.ndarray]:
    rv, _, _ = _streams(seed)
    chunk = _chunk_rows(inst, chunk)
    for lo in range(0, samples, chunk):
        m = min(chunk, samples - lo)
        yield sample_values(inst, rv.random((m, len(inst.blocks))))


def _as_bidder(strategy):
    if isinstance(strategy, FocalProfile):
        return strategy.strategy
    if isinstance(strategy, (IndependentStrategy, JointStrategy)):
        return strategy
    raise TypeError("strategy must be a FocalProfile, IndependentStrategy or JointStrategy")


def simulate_auctions(
    inst: Instance,
    strategy,
    rule: TieBreakRule | None = None,
    samples: int = 100_000,
    seed: int = 0,
    chunk: int = CHUNK,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (values, bids, winner) chunks.

    Values, bid randomisation and tie draws come from separate substreams
    of ``seed``, so different strategies or rules see the same values.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    rule = rule or inst.tie_rule
    play = _as_bidder(strategy)
    rv, rb, rt = _streams(seed)
    n = inst.n_bidders
    chunk = _chunk_rows(inst, chunk)
    for lo in range(0, samples, chunk):
        m = min(chunk, samples - lo)
        vals = sample_values(inst, rv.random((m, len(inst.blocks))))
        bids = play.bids(vals, rb.random((m, n)))
        winner = rule.choose(bids, rt.random(m))
        yield vals, bids, winner


def auction_welfare_mc(
    inst: Instance,
    strategy,
    rule: TieBreakRule | None = None,
    samples: int = 100_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean winner value and its standard error."""
    acc = _Accumulator()
    for vals, _, winner in simulate_auctions(inst, strategy, rule, samples, seed):
        acc.add(vals[np.arange(len(winner)), winner])
    return acc.result()


def efficiency_gap_mc(inst: Instance, strategy, rule: TieBreakRule | None = None, samples: int = 100_000, seed: int = 0):
    """Largest per-sample shortfall max(values) - winner value, with the sample count."""
    worst = 0.0
    for vals, _, winner in simulate_auctions(inst, strategy, rule, samples, seed):
        worst = max(worst, float(np.max(vals.max(axis=1) - vals[np.arange(len(winner)), winner])))
    return worst


# --------------------------------------------------------------------------
# tables


def build_family(family: str, eps: float) -> Instance:
    if family == "independent":
        return build_independent_instance(eps)
    if family == "correlated":
        return build_correlated_instance(eps)
    raise ValueError(f"unknown family {family!r}")


def efficiency_table(
    family: str,
    eps_list: Sequence[float],
    samples: int | None = None,
    seed: int = 0,
    base_family: str = "independent",
    delta: float = 0.01,
) -> list[WelfareReport]:
    """Welfare reports per eps.

    ``independent`` and ``correlated`` use the closed forms (or Monte Carlo
    when ``samples`` is given); ``bce`` simulates the fully efficient joint
    strategy on ``base_family`` with coupled draws.
    """
    out = []
    for eps in eps_list:
        if family == "bce":
            inst = build_family(base_family, eps)
            n = samples or 100_000
            opt, se_opt = optimal_welfare(inst, "monte_carlo", n, seed)
            fpa, se_fpa = auction_welfare_mc(inst, efficient_joint_strategy(delta), None, n, seed)
            out.append(WelfareReport("bce", eps, opt, fpa, "monte_carlo", "monte_carlo", 1.0, max(se_opt, se_fpa)))
            continue
        inst = build_family(family, eps)
        bound = BOUND_INDEPENDENT if family == "independent" else BOUND_CORRELATED
        if samples:
            fp = focal_profile(inst)
            opt, se_opt = optimal_welfare(inst, "monte_carlo", samples, seed)
            fpa, se_fpa = auction_welfare_mc(inst, fp, None, samples, seed)
            out.append(WelfareReport(family, eps, opt, fpa, "monte_carlo", "monte_carlo", bound, max(se_opt, se_fpa)))
        else:
            fp = focal_profile(inst)
            opt = optimal_welfare(inst)
            fpa = auction_welfare_formula(inst, fp)
            out.append(WelfareReport(family, eps, opt, fpa, "closed_form", "closed_form", bound))
    return out


def reports_to_csv(reports: Sequence[WelfareReport], fmt: str = "%.12g") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([fmt % row[c] if isinstance(row[c], float) else ("" if row[c] is None else row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()
