"""Focal equilibria of the tight instances and derived bid systems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .dist import (
    Atom,
    Dist1D,
    Distribution,
    MonotoneCurve,
    Mixture,
    bisect_increasing,
    mixture,
    point_mass,
)
from .instances import Instance

LAMBDA_STAR = 1.0 - 4.0 / math.e**2
CLASS_TOL = 1e-12
FD_STEP = 1e-6


class FlatCompetingCDFError(ValueError):
    """Competing bid CDF has (numerically) zero slope."""


class MonopolistError(RuntimeError):
    """More than one bidder qualifies as a monopolist."""


# --------------------------------------------------------------------------
# implicit equation for the high bidder's bid distribution


def implicit_bid_h(cdf_value, eps: float = 0.0) -> np.ndarray:
    """Bid b at which S reaches ``cdf_value`` in b = 1 - 4X e^{2-4 sqrt X}, X = eps + (1-eps) S."""
    x = eps + (1.0 - eps) * np.asarray(cdf_value, dtype=float)
    return 1.0 - 4.0 * x * np.exp(2.0 - 4.0 * np.sqrt(x))


def implicit_cdf_h(b, eps: float = 0.0) -> np.ndarray:
    """Invert :func:`implicit_bid_h` in S by bisection on [1 - (3/4)/(1-eps), 1]."""
    s_lo = 1.0 - 0.75 / (1.0 - eps)
    b = np.asarray(b, dtype=float)
    s = bisect_increasing(lambda s: implicit_bid_h(s, eps), np.clip(b, 0.0, LAMBDA_STAR), s_lo, 1.0, upper=True)
    # the curve is flat at b = 0, so pin the atom instead of trusting rounding
    s = np.where(b == 0.0, s_lo, s)
    return np.where(b < 0.0, 0.0, np.where(b >= LAMBDA_STAR, 1.0, s))


def _check_implicit_monotone(points: int = 1000) -> None:
    bids = implicit_bid_h(np.linspace(0.25, 1.0, points))
    if not np.all(np.diff(bids) > 0):
        raise RuntimeError("b -> 1 - 4B e^{2-4 sqrt B} is not increasing on [1/4, 1]")


_check_implicit_monotone()


def bid_of_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return 1.0 - t**2 * np.exp(2.0 - 2.0 * t)


# --------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class BidderStrategy:
    """Map from a bidder's value to a bid distribution.

    Value atoms get explicit bid distributions (possibly mixed); the
    continuous value part bids deterministically, ``curve_bid(t)`` being the
    bid at the value curve's parameter ``t``.
    """

    values: Dist1D
    atom_bids: tuple[tuple[float, Distribution], ...] = ()
    curve_bid: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    bid_curve_kind: tuple[str, dict] | None = field(default=None, compare=False)

    def __post_init__(self):
        have = {p for p, _ in self.atom_bids}
        for a in self.values.atoms:
            if a.point not in have:
                raise ValueError(f"no bid distribution for value atom {a.point}")
        if (self.values.continuous is None) != (self.curve_bid is None):
            raise ValueError("curve_bid must be given exactly when values have a continuous part")

    def bid_dist(self, v: float) -> Distribution:
        for p, d in self.atom_bids:
            if abs(v - p) <= CLASS_TOL:
                return d
        c = self.values.continuous
        if c is None or not (c.point_lo - CLASS_TOL <= v <= c.point_hi + CLASS_TOL):
            raise ValueError(f"value {v} outside the support")
        return point_mass(float(self.curve_bid(c.param_at_point(np.array(v)))))

    def bids_for_values(self, v, u=None) -> np.ndarray:
        """Sampled bids for an array of values; ``u`` drives mixed bid draws."""
        v = np.asarray(v, dtype=float)
        out = np.full(v.shape, np.nan)
        atom_mask = np.zeros(v.shape, dtype=bool)
        for p, d in self.atom_bids:
            m = v == p
            if not np.any(m):
                continue
            atom_mask |= m
            if d.is_point_mass:
                out[m] = d.atom_list()[0].point
            else:
                if u is None:
                    raise ValueError("mixed bids need uniforms")
                out[m] = d.quantile(np.asarray(u, dtype=float)[m])
        rest = ~atom_mask
        if np.any(rest):
            c = self.values.continuous
            if c is None:
                raise ValueError("value outside the atoms of a discrete value distribution")
            out[rest] = self.curve_bid(c.param_at_point(v[rest]))
        return out

    @property
    def is_pure(self) -> bool:
        return all(d.is_point_mass for _, d in self.atom_bids)

    @cached_property
    def marginal(self) -> Distribution:
        """Bid distribution induced by the value distribution."""
        c = self.values.continuous
        curve = None
        if c is not None:
            if self.bid_curve_kind is not None:
                kind, params = self.bid_curve_kind
                curve = MonotoneCurve.named(kind, c.t_lo, c.t_hi, **params)
            else:
                curve = MonotoneCurve(c.t_lo, c.t_hi, self.curve_bid, c.cdf_fn)
        masses = {a.point: a.mass for a in self.values.atoms}
        if self.is_pure:
            atoms = [Atom(d.atom_list()[0].point, masses[p]) for p, d in self.atom_bids]
            return Dist1D.build(atoms, curve)
        parts: list[tuple[float, Distribution]] = [(masses[p], d) for p, d in self.atom_bids]
        if curve is not None:
            lo, m = curve.cdf_lo, curve.mass
            norm = MonotoneCurve(curve.t_lo, curve.t_hi, curve.point_fn, lambda t: (c.cdf_fn(t) - lo) / m)
            parts.append((m, Dist1D.build([], norm)))
        return mixture(parts)

    def shifted(self, offset: float) -> "BidderStrategy":
        base = self.curve_bid
        return BidderStrategy(
            self.values,
            tuple((p, d.shifted(offset)) for p, d in self.atom_bids),
            (lambda t: base(t) + offset) if base is not None else None,
        )


@dataclass(frozen=True)
class IndependentStrategy:
    bidders: tuple[BidderStrategy, ...]
    label: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.bidders)

    def __getitem__(self, i: int) -> BidderStrategy:
        return self.bidders[i]

    def bids(self, values, u=None) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=float))
        out = np.empty(values.shape)
        for k, s in enumerate(self.bidders):
            out[:, k] = s.bids_for_values(values[:, k], None if u is None else u[:, k])
        return out

    def shifted(self, bidders: Sequence[int], offset: float) -> "IndependentStrategy":
        moved: dict[int, BidderStrategy] = {}
        out = []
        for k, s in enumerate(self.bidders):
            if k in bidders:
                out.append(moved.setdefault(id(s), s.shifted(offset)))
            else:
                out.append(s)
        return IndependentStrategy(tuple(out), f"{self.label}+shift")


@dataclass(frozen=True)
class JointStrategy:
    """Bid profile as a function of the whole value profile.

    ``fn(values, u)`` maps a ``(samples, bidders)`` value array (and optional
    uniforms for randomised recommendations) to bids.
    """

    fn: Callable[..., np.ndarray] = field(compare=False)
    name: str = "joint"
    delta: float | None = None

    def bids(self, values, u=None) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return self.fn(values, u)

    @classmethod
    def from_independent(cls, strategy: IndependentStrategy) -> "JointStrategy":
        return cls(strategy.bids, name=f"joint({strategy.label})")


# --------------------------------------------------------------------------
# independent sources of competing bids


class IndependentSource:
    """One bidder bidding independently of everybody else."""

    def __init__(self, member: int, dist: Distribution):
        self.members = (member,)
        self.dist = dist
        self.key = ("ind", id(dist))

    def cdf(self, b):
        return self.dist.cdf(b)

    def cdf_left(self, b):
        return self.dist.cdf_left(b)

    def atom_points(self) -> list[float]:
        return [a.point for a in self.dist.atom_list()]

    def patterns(self, p: float):
        m = float(self.dist.atom_mass(np.array(p)))
        return [(m, frozenset(self.members))] if m > 0 else []

    @property
    def support(self) -> tuple[float, float]:
        return self.dist.support_lo, self.dist.support_hi


class FixedSource:
    """Bidders whose bids are known constants (conditioning on a shared value)."""

    def __init__(self, bids: dict[int, float]):
        self.members = tuple(sorted(bids))
        self.bids = dict(bids)
        self.top = max(bids.values())
        self.key = ("fixed", tuple(sorted(bids.items())))

    def cdf(self, b):
        return (np.asarray(b, dtype=float) >= self.top).astype(float)

    def cdf_left(self, b):
        return (np.asarray(b, dtype=float) > self.top).astype(float)

    def atom_points(self) -> list[float]:
        return [self.top]

    def patterns(self, p: float):
        if p != self.top:
            return []
        return [(1.0, frozenset(k for k, b in self.bids.items() if b == p))]

    @property
    def support(self) -> tuple[float, float]:
        return self.top, self.top


class SharedSource:
    """Bidders sharing one value draw, each bidding a pure nondecreasing strategy."""

    def __init__(self, members: Sequence[int], values: Dist1D, strategies: Sequence[BidderStrategy]):
        self.members = tuple(members)
        self.values = values
        self.strategies = tuple(strategies)
        self.key = ("shared", self.members, tuple(id(s) for s in self.strategies))
        if not all(s.is_pure for s in self.strategies):
            raise ValueError("shared-value bidders must bid pure strategies")
        self._atoms: list[tuple[float, float, frozenset]] = []
        for a in values.atoms:
            bids = [s.bid_dist(a.point).atom_list()[0].point for s in self.strategies]
            top = max(bids)
            at = frozenset(k for k, b in zip(self.members, bids) if b == top)
            self._atoms.append((top, a.mass, at))
        curve = None
        c = values.continuous
        if c is not None:
            fns = [s.curve_bid for s in self.strategies]
            curve = MonotoneCurve(c.t_lo, c.t_hi, lambda t: np.max([f(t) for f in fns], axis=0), c.cdf_fn)
        self.dist = Dist1D.build([Atom(p, m) for p, m, _ in self._atoms], curve)

    def cdf(self, b):
        return self.dist.cdf(b)

    def cdf_left(self, b):
        return self.dist.cdf_left(b)

    def atom_points(self) -> list[float]:
        return sorted({p for p, _, _ in self._atoms})

    def patterns(self, p: float):
        return [(m, at) for q, m, at in self._atoms if q == p]

    def without(self, i: int):
        keep = [(k, s) for k, s in zip(self.members, self.strategies) if k != i]
        if len(keep) == 1:
            k, s = keep[0]
            return IndependentSource(k, s.marginal)
        return SharedSource([k for k, _ in keep], self.values, [s for _, s in keep])

    @property
    def support(self) -> tuple[float, float]:
        return self.dist.support_lo, self.dist.support_hi


def product_of(sources: Sequence, method: str, b) -> np.ndarray:
    """Product of ``source.<method>(b)``; sources sharing a key are evaluated once."""
    b = np.asarray(b, dtype=float)
    groups: dict = {}
    for s in sources:
        g = groups.setdefault(s.key, [s, 0])
        g[1] += 1
    out = np.ones(b.shape)
    for s, count in groups.values():
        out = out * getattr(s, method)(b) ** count
    return out


def strategy_sources(inst: Instance, strategy: IndependentStrategy) -> list:
    out = []
    for block in inst.blocks:
        if len(block) == 1:
            k = block[0]
            out.append(IndependentSource(k, strategy[k].marginal))
        else:
            out.append(SharedSource(block, inst.marginals[block[0]], [strategy[k] for k in block]))
    return out


def competing_sources(inst: Instance, strategy: IndependentStrategy, i: int, value: float | None = None) -> list:
    """Independent sources of the bids bidder ``i`` competes against.

    With ``value`` given, bidders sharing i's value draw are conditioned on it.
    """
    out = []
    for block in inst.blocks:
        if i not in block:
            if len(block) == 1:
                k = block[0]
                out.append(IndependentSource(k, strategy[k].marginal))
            else:
                out.append(SharedSource(block, inst.marginals[block[0]], [strategy[k] for k in block]))
            continue
        others = [k for k in block if k != i]
        if not others:
            continue
        if value is None:
            src = SharedSource(block, inst.marginals[block[0]], [strategy[k] for k in block])
            out.append(src.without(i))
        else:
            for k in others:
                d = strategy[k].bid_dist(value)
                if d.is_point_mass:
                    out.append(FixedSource({k: d.atom_list()[0].point}))
                else:
                    out.append(IndependentSource(k, d))
    return out


# --------------------------------------------------------------------------
# bid systems


@dataclass(frozen=True)
class BidSystem:
    """Bid distributions of a profile and the quantities derived from them."""

    bids: tuple[Distribution, ...]
    sources: tuple = field(compare=False)
    competing: Callable[[int], list] = field(compare=False)
    gamma: float = 0.0
    lam: float = 0.0
    phi_closed: dict = field(default_factory=dict, compare=False)
    tables: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_sources(cls, bids, sources, competing, phi_closed=None, tables=None) -> "BidSystem":
        gamma = max(s.support[0] for s in sources)
        lam = max(s.support[1] for s in sources)
        return cls(tuple(bids), tuple(sources), competing, gamma, lam, dict(phi_closed or {}), dict(tables or {}))

    @classmethod
    def from_product(cls, bids: Sequence[Distribution], phi_closed=None, tables=None) -> "BidSystem":
        sources = [IndependentSource(k, d) for k, d in enumerate(bids)]
        return cls.from_sources(
            bids, sources, lambda i: [s for s in sources if s.members[0] != i], phi_closed, tables
        )

    @classmethod
    def from_strategy(cls, inst: Instance, strategy: IndependentStrategy, phi_closed=None) -> "BidSystem":
        sources = strategy_sources(inst, strategy)
        bids = [s.marginal for s in strategy.bidders]
        return cls.from_sources(bids, sources, lambda i: competing_sources(inst, strategy, i), phi_closed)

    @property
    def n_bidders(self) -> int:
        return len(self.bids)

    def competing_cdf(self, i: int, b) -> np.ndarray:
        return product_of(self.competing(i), "cdf", b)

    def competing_cdf_left(self, i: int, b) -> np.ndarray:
        return product_of(self.competing(i), "cdf_left", b)

    def first_order_cdf(self, b) -> np.ndarray:
        return product_of(self.sources, "cdf", b)

    def bid_to_value(self, i: int, b) -> np.ndarray:
        return bid_to_value(self, i, b)


def bid_to_value(bs: BidSystem, i: int, b, *, numeric: bool = False) -> np.ndarray:
    """b + competing CDF / its derivative; closed forms are used when available."""
    b = np.asarray(b, dtype=float)
    if not numeric and i in bs.phi_closed:
        return bs.phi_closed[i](b)
    h = FD_STEP
    lo, hi = bs.gamma, bs.lam
    x = np.clip(b, lo + h, hi - h)
    comp = bs.competing(i)
    f = lambda y: product_of(comp, "cdf", y)  # noqa: E731
    slope = (f(x + h) - f(x - h)) / (2 * h)
    if np.any(slope < 1e-12):
        raise FlatCompetingCDFError(f"competing CDF of bidder {i} is flat near b={b}")
    return x + f(x) / slope


@dataclass(frozen=True)
class FocalProfile:
    instance: Instance
    strategy: IndependentStrategy
    bid_system: BidSystem
    kind: str


def _phi_low_closed(n: int):
    def phi(b):
        b = np.asarray(b, dtype=float)
        t = bisect_increasing(bid_of_t, np.clip(b, 0.0, LAMBDA_STAR), 1.0, 2.0, upper=True)
        return 1.0 - (n - (t - 1.0)) / (n * t - (t - 1.0)) * t**2 * np.exp(2.0 - 2.0 * t)

    return phi


def focal_independent(inst: Instance) -> FocalProfile:
    if inst.family != "independent":
        raise ValueError("focal_independent needs an instance from build_independent_instance")
    eps, n = inst.eps, inst.n_param
    s_h = Dist1D(
        (Atom(0.0, (0.25 - eps) / (1.0 - eps)),),
        MonotoneCurve.named("focal_bid_H", 1.0, 2.0, eps=eps),
        0.0,
        float(bid_of_t(2.0)),
    )
    high = BidderStrategy(inst.marginals[0], ((0.0, point_mass(0.0)), (1.0, s_h)))
    low = BidderStrategy(
        inst.marginals[1],
        ((0.0, point_mass(0.0)),),
        bid_of_t,
        ("focal_bid_L", {"n": n}),
    )
    strategy = IndependentStrategy((high,) + (low,) * n, "focal-independent")
    phi_low = _phi_low_closed(n)
    closed = {0: lambda b: np.ones(np.shape(b))}
    closed.update({k: phi_low for k in range(1, n + 1)})
    bs = BidSystem.from_strategy(inst, strategy, closed)
    return FocalProfile(inst, strategy, bs, "independent")


def focal_correlated(inst: Instance) -> FocalProfile:
    if inst.family != "correlated":
        raise ValueError("focal_correlated needs an instance from build_correlated_instance")
    zero = point_mass(0.0)
    high = BidderStrategy(inst.marginals[0], ((0.0, zero), (1.0, zero)))
    low = BidderStrategy(inst.marginals[1], ((0.0, zero),), lambda t: np.asarray(t, dtype=float) * 1.0)
    strategy = IndependentStrategy((high, low, low), "focal-correlated")
    bs = BidSystem.from_strategy(inst, strategy)
    return FocalProfile(inst, strategy, bs, "correlated")


def focal_profile(inst: Instance) -> FocalProfile:
    if inst.family == "independent":
        return focal_independent(inst)
    if inst.family == "correlated":
        return focal_correlated(inst)
    raise ValueError(f"no focal profile for family {inst.family!r}")


def detect_monopolist(inst: Instance, fp: FocalProfile) -> int | None:
    """Bidder with positive mass on (value > gamma, bid = gamma), if any."""
    gamma = fp.bid_system.gamma
    found = []
    for k, s in enumerate(fp.strategy.bidders):
        mass = 0.0
        for p, d in s.atom_bids:
            if p > gamma + CLASS_TOL:
                m_val = next(a.mass for a in s.values.atoms if a.point == p)
                mass += m_val * float(d.atom_mass(np.array(gamma)))
        c = s.values.continuous
        if c is not None:
            t = np.linspace(c.t_lo, c.t_hi, 10_001)
            mid = 0.5 * (t[1:] + t[:-1])
            flat = (np.abs(s.curve_bid(mid) - gamma) <= CLASS_TOL) & (c.point_fn(mid) > gamma + CLASS_TOL)
            mass += float(np.sum(np.diff(c.cdf_fn(t))[flat]))
        if mass > CLASS_TOL:
            found.append(k)
    if len(found) > 1:
        raise MonopolistError(f"bidders {found} all qualify as monopolists")
    return found[0] if found else None


# --------------------------------------------------------------------------
# tie-robust approximate equilibrium


def _shift_low_bids(d: Distribution, gamma: float, at_shift: float, delta: float) -> Distribution:
    """Bids strictly below gamma move by -delta, bids at gamma by ``at_shift``."""
    if isinstance(d, Mixture):
        return Mixture(tuple((w, _shift_low_bids(c, gamma, at_shift, delta)) for w, c in d.components))
    atoms = []
    for a in d.atoms:
        if abs(a.point - gamma) <= CLASS_TOL:
            atoms.append(Atom(a.point + at_shift, a.mass))
        elif a.point < gamma:
            atoms.append(Atom(a.point - delta, a.mass))
        else:
            raise ValueError("a low/boundary value bids above gamma; not an exact equilibrium")
    curve = d.continuous
    if curve is not None:
        if curve.point_hi > gamma + CLASS_TOL:
            raise ValueError("a low/boundary value bids above gamma; not an exact equilibrium")
        curve = curve.shifted(-delta)
    return Dist1D.build(atoms, curve)


def approx_transform(inst: Instance, fp: FocalProfile, delta: float) -> IndependentStrategy:
    """Tie-robust delta-approximate version of an exact equilibrium.

    Bids are moved according to the (value, bid) class relative to gamma:
    low or boundary values lose delta (delta/2 for a boundary bid at a
    boundary value) and normal values keep their bids.  When gamma < delta
    every bid is first raised by delta so no bid turns negative.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    gamma = fp.bid_system.gamma
    pre = delta if gamma < delta else 0.0
    done: dict[int, BidderStrategy] = {}
    out = []
    for s in fp.strategy.bidders:
        if id(s) not in done:
            atom_bids = []
            for p, d in s.atom_bids:
                if p > gamma + CLASS_TOL:
                    new = d
                else:
                    boundary = abs(p - gamma) <= CLASS_TOL
                    new = _shift_low_bids(d, gamma, -delta / 2 if boundary else -delta, delta)
                atom_bids.append((p, new.shifted(pre) if pre else new))
            curve_bid = None
            if s.curve_bid is not None:
                base, vals = s.curve_bid, s.values.continuous.point_fn

                def curve_bid(t, base=base, vals=vals):
                    b = base(t)
                    v = vals(t)
                    at = np.abs(b - gamma) <= CLASS_TOL
                    v_bdy = np.abs(v - gamma) <= CLASS_TOL
                    shift = np.where(
                        v > gamma + CLASS_TOL, 0.0, np.where(at & v_bdy, -delta / 2, np.where(b <= gamma + CLASS_TOL, -delta, 0.0))
                    )
                    return b + shift + pre

            done[id(s)] = BidderStrategy(s.values, tuple(atom_bids), curve_bid)
        out.append(done[id(s)])
    return IndependentStrategy(tuple(out), f"approx({fp.strategy.label},{delta:g})", {"gamma": gamma, "pre_shift": pre, "delta": delta})


# --------------------------------------------------------------------------
# fully efficient joint strategy


def efficient_joint_strategy(delta: float) -> JointStrategy:
    """Highest valuer bids the second-highest value, everyone else bids value - delta.

    Bids are clipped at zero.  When the second-highest value is below
    delta/2 the highest valuer bids min(own value, delta/2) instead, so a
    zero tie can never hand the item to someone else.
    """

    def fn(values, u=None):
        values = np.atleast_2d(values)
        m, n = values.shape
        bids = np.maximum(values - delta, 0.0)
        if n == 1:
            return np.zeros_like(values)
        h = values.argmax(axis=1)
        rows = np.arange(m)
        others = values.copy()
        others[rows, h] = -np.inf
        second = others.max(axis=1)
        bids[rows, h] = np.minimum(values[rows, h], np.maximum(second, delta / 2))
        return bids

    return JointStrategy(fn, name=f"efficient({delta:g})", delta=delta)


# --------------------------------------------------------------------------
# ODE cross-check


def _rk4_step(f, x, y, h):
    k1 = f(x, y)
    k2 = f(x + h / 2, y + h / 2 * k1)
    k3 = f(x + h / 2, y + h / 2 * k2)
    k4 = f(x + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_path(f, xs, y0):
    ys = np.empty(len(xs))
    ys[0] = y0
    for j in range(len(xs) - 1):
        ys[j + 1] = _rk4_step(f, xs[j], ys[j], xs[j + 1] - xs[j])
    return ys


def solve_bid_ode(inst: Instance, grid_size: int = 10_000) -> BidSystem:
    """Recover the focal bid distributions by integrating the equilibrium ODEs.

    The low bidders' CDF follows from the high bidder's indifference
    (B_L'/B_L = 1/(n(1-b)) from B_L(0) = (4/e^2)^(1/n)); the supremum bid is
    where it reaches one.  The high bidder's CDF solves dB_H/dt = 2 B_H / t
    backwards from B_H(2) = 1, mapped to bids through the low bidders' CDF.
    """
    if inst.family != "independent":
        raise ValueError("solve_bid_ode needs an independent-family instance")
    if grid_size < 16:
        raise ValueError("grid_size must be at least 16")
    n = inst.n_param
    bl0 = (4.0 / math.e**2) ** (1.0 / n)
    f_low = lambda b, y: y / (n * (1.0 - b))  # noqa: E731

    # locate the supremum bid: march until B_L crosses one, then bisect the last step
    h = 1.0 / grid_size
    b, y = 0.0, bl0
    while True:
        y_next = _rk4_step(f_low, b, y, h)
        if y_next >= 1.0:
            break
        b, y = b + h, y_next
    lo, hi = 0.0, h
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _rk4_step(f_low, b, y, mid) < 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17:
            break
    lam = b + 0.5 * (lo + hi)

    b_grid = np.linspace(0.0, lam, grid_size)
    bl = _rk4_path(f_low, b_grid, bl0)
    t_desc = np.linspace(2.0, 1.0, grid_size)
    bh = _rk4_path(lambda t, y: 2.0 * y / t, t_desc, 1.0)[::-1]
    t_grid = t_desc[::-1]

    # map t to bids through the numeric low-bidder CDF: B_L(b(t)) = V_L(value(t))
    from scipy.interpolate import PchipInterpolator

    vl_cdf = inst.marginals[1].continuous.cdf_fn(t_grid)
    inv = PchipInterpolator(bl, b_grid)
    bids_t = np.clip(inv(np.clip(vl_cdf, bl[0], bl[-1])), 0.0, lam)
    bids_t[0], bids_t[-1] = 0.0, lam

    bl_scaled = bl.copy()
    bl_scaled[-1] = 1.0
    b_low = Dist1D.build(
        [Atom(0.0, bl0)],
        MonotoneCurve.named("tabulated", 0.0, lam, t=b_grid, point=b_grid, cdf=bl_scaled),
    )
    b_high = Dist1D.build(
        [Atom(0.0, bh[0])],
        MonotoneCurve.named("tabulated", 1.0, 2.0, t=t_grid, point=bids_t, cdf=np.append(bh[:-1], 1.0)),
    )
    tables = {"b": b_grid, "B_L": bl, "t": t_grid, "B_H": bh, "lambda": lam}
    return BidSystem.from_product((b_high,) + (b_low,) * n, tables=tables)


# --------------------------------------------------------------------------
# export


def focal_to_json(fp: FocalProfile, grid: int = 1000) -> dict:
    if fp.kind != "independent":
        bs = fp.bid_system
        b = np.linspace(bs.gamma, bs.lam, grid)
        return {
            "kind": fp.kind,
            "instance": fp.instance.to_json(),
            "gamma": bs.gamma,
            "lambda": bs.lam,
            "b": b.tolist(),
            "B": [d.cdf(b).tolist() for d in bs.bids],
        }
    bs = fp.bid_system
    b = np.linspace(0.0, bs.lam, grid)
    return {
        "kind": fp.kind,
        "eps": fp.instance.eps,
        "n": fp.instance.n_param,
        "gamma": bs.gamma,
        "lambda": bs.lam,
        "b": b.tolist(),
        "B_H": bs.bids[0].cdf(b).tolist(),
        "B_L": bs.bids[1].cdf(b).tolist(),
        "phi_L": bs.bid_to_value(1, b).tolist(),
    }
