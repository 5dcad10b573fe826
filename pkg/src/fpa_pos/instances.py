"""Auction instances: valuation models, the two tight families, tie-breaking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist import Atom, Dist1D, MonotoneCurve, from_json, point_mass

E2 = math.exp(2.0)

TIE_KINDS = ("favor_bidder_at_zero", "favor_lowest_index", "uniform_random", "custom_table")


@dataclass(frozen=True)
class TieBreakRule:
    """Selects a winner among the highest bidders.

    ``favor_bidder_at_zero`` hands the all-zero profile to ``favored`` and
    defers to ``fallback`` (lowest index unless given) everywhere else.
    ``custom_table`` is a strict priority order, highest priority first.
    """

    kind: str = "favor_lowest_index"
    favored: int = 0
    priority: tuple[int, ...] | None = None
    fallback: "TieBreakRule | None" = None

    def __post_init__(self):
        if self.kind not in TIE_KINDS:
            raise ValueError(f"unknown tie-break kind {self.kind!r}")
        if self.kind == "custom_table" and not self.priority:
            raise ValueError("custom_table needs a priority order")

    @classmethod
    def favor_at_zero(cls, bidder: int = 0, fallback: "TieBreakRule | None" = None) -> "TieBreakRule":
        return cls("favor_bidder_at_zero", favored=bidder, fallback=fallback)

    @classmethod
    def lowest_index(cls) -> "TieBreakRule":
        return cls("favor_lowest_index")

    @classmethod
    def uniform(cls) -> "TieBreakRule":
        return cls("uniform_random")

    @classmethod
    def table(cls, priority: Sequence[int]) -> "TieBreakRule":
        return cls("custom_table", priority=tuple(int(p) for p in priority))

    @property
    def _fallback(self) -> "TieBreakRule":
        return self.fallback or TieBreakRule.lowest_index()

    def _rank(self, n: int) -> np.ndarray:
        if self.kind == "custom_table":
            rank = np.full(n, len(self.priority) + np.arange(n), dtype=float)
            for r, k in enumerate(self.priority):
                if k < n:
                    rank[k] = r
            return rank
        return np.arange(n, dtype=float)

    def win_probabilities(self, bids) -> np.ndarray:
        """Expected allocation for each row of a ``(samples, bidders)`` bid array."""
        bids = np.atleast_2d(np.asarray(bids, dtype=float))
        m, n = bids.shape
        top = bids.max(axis=1, keepdims=True)
        tied = bids == top
        if self.kind == "favor_bidder_at_zero":
            out = self._fallback.win_probabilities(bids)
            zero = top[:, 0] == 0.0
            if np.any(zero):
                out[zero] = 0.0
                out[zero, self.favored] = 1.0
            return out
        if self.kind == "uniform_random":
            return tied / tied.sum(axis=1, keepdims=True)
        rank = np.where(tied, self._rank(n)[None, :], np.inf)
        out = np.zeros((m, n))
        out[np.arange(m), rank.argmin(axis=1)] = 1.0
        return out

    def choose(self, bids, u=None) -> np.ndarray:
        """Winner index per row; ``u`` are uniforms used by randomised rules."""
        probs = self.win_probabilities(bids)
        if u is None:
            u = np.zeros(probs.shape[0])
        cum = np.cumsum(probs, axis=1)
        idx = (cum <= np.asarray(u, dtype=float)[:, None]).sum(axis=1)
        return np.minimum(idx, probs.shape[1] - 1)

    def tie_win_mass(self, i: int, p: float, sources: Sequence) -> float:
        """P[max of the other bids equals p and bidder i wins] when i bids p.

        ``sources`` are independent blocks of competing bids (see
        :mod:`fpa_pos.equilibria`), each exposing ``cdf``, ``cdf_left`` and
        ``patterns(p)`` -> list of (probability, bidders placed exactly at p).
        """
        memo: dict = {}

        def ev(s, method):
            k = (getattr(s, "key", id(s)), method)
            if k not in memo:
                memo[k] = float(getattr(s, method)(np.array(p)))
            return memo[k]

        below = [ev(s, "cdf_left") for s in sources]
        base = float(np.prod(below)) if below else 1.0
        if self.kind == "favor_bidder_at_zero":
            if p == 0.0:
                if i != self.favored:
                    return 0.0
                return max(float(np.prod([ev(s, "cdf") for s in sources])) - base, 0.0)
            return self._fallback.tie_win_mass(i, p, sources)
        if self.kind == "uniform_random":
            pats = [s.patterns(p) for s in sources]
            total = sum(max((len(m) for _, m in ps), default=0) for ps in pats)
            nodes, weights = np.polynomial.legendre.leggauss(total // 2 + 2)
            x = 0.5 * (nodes + 1.0)
            acc = np.ones_like(x)
            for b, ps in zip(below, pats):
                acc = acc * (b + sum(prob * x ** len(m) for prob, m in ps))
            return max(float(0.5 * np.dot(weights, acc)) - base, 0.0)
        n = 1 + max([i] + [k for s in sources for k in s.members])
        rank = self._rank(n)
        prod = 1.0
        for b, s in zip(below, sources):
            prod *= b + sum(prob for prob, m in s.patterns(p) if all(rank[k] > rank[i] for k in m))
        return max(prod - base, 0.0)

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "favor_bidder_at_zero":
            out["favored"] = self.favored
            if self.fallback is not None:
                out["fallback"] = self.fallback.to_json()
        if self.kind == "custom_table":
            out["priority"] = list(self.priority)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "TieBreakRule":
        fb = data.get("fallback")
        return cls(
            data["kind"],
            favored=int(data.get("favored", 0)),
            priority=tuple(data["priority"]) if data.get("priority") else None,
            fallback=cls.from_json(fb) if fb else None,
        )

    @classmethod
    def parse(cls, text: str) -> "TieBreakRule":
        """CLI spelling: ``favor_h``, ``lowest``, ``uniform``, ``table:2,0,1``."""
        if text in ("favor_h", "favor_zero", "favor_bidder_at_zero"):
            return cls.favor_at_zero(0)
        if text in ("lowest", "favor_lowest_index"):
            return cls.lowest_index()
        if text in ("uniform", "uniform_random"):
            return cls.uniform()
        if text.startswith("table:"):
            return cls.table([int(k) for k in text[6:].split(",")])
        raise ValueError(f"unknown tie rule {text!r}")


def tie_break(rule: TieBreakRule, bids, u: float = 0.0) -> int:
    bids = np.asarray(bids, dtype=float)
    if bids.size == 0:
        raise ValueError("empty bid vector")
    return int(rule.choose(bids[None, :], np.array([u]))[0])


@dataclass(frozen=True)
class Instance:
    """Bidders with value marginals; bidders in one block share a single draw."""

    marginals: tuple[Dist1D, ...]
    tie_rule: TieBreakRule = field(default_factory=TieBreakRule.lowest_index)
    blocks: tuple[tuple[int, ...], ...] | None = None
    family: str = "product"
    eps: float | None = None
    n_param: int | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        n = len(self.marginals)
        if self.blocks is None:
            object.__setattr__(self, "blocks", tuple((i,) for i in range(n)))
        members = sorted(k for b in self.blocks for k in b)
        if members != list(range(n)):
            raise ValueError("blocks must partition the bidders")
        for b in self.blocks:
            if any(self.marginals[k] is not self.marginals[b[0]] for k in b):
                raise ValueError("bidders sharing a draw need the same marginal")
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"bidder{i}" for i in range(n)))

    @property
    def n_bidders(self) -> int:
        return len(self.marginals)

    @property
    def is_correlated(self) -> bool:
        return any(len(b) > 1 for b in self.blocks)

    def block_of(self, i: int) -> tuple[int, ...]:
        return next(b for b in self.blocks if i in b)

    def with_rule(self, rule: TieBreakRule) -> "Instance":
        return Instance(self.marginals, rule, self.blocks, self.family, self.eps, self.n_param, self.names)

    def to_json(self) -> dict:
        distinct = {}
        for d in self.marginals:
            distinct.setdefault(id(d), (len(distinct), d))
        index = [distinct[id(d)][0] for d in self.marginals]
        return {
            "family": self.family,
            "eps": self.eps,
            "n": self.n_param,
            "tie_rule": self.tie_rule.to_json(),
            "names": list(self.names),
            "blocks": [list(b) for b in self.blocks],
            "marginals": [d.to_json() for _, d in sorted(distinct.values(), key=lambda x: x[0])],
            "marginal_index": index,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Instance":
        dists = [from_json(d) for d in data["marginals"]]
        return cls(
            tuple(dists[k] for k in data["marginal_index"]),
            TieBreakRule.from_json(data["tie_rule"]),
            tuple(tuple(b) for b in data["blocks"]),
            data["family"],
            data.get("eps"),
            data.get("n"),
            tuple(data["names"]),
        )


def bernoulli_high(eps: float) -> Dist1D:
    """Value 0 with probability eps, value 1 otherwise."""
    return Dist1D((Atom(0.0, eps), Atom(1.0, 1.0 - eps)), None, 0.0, 1.0)


def independent_low_values(n: int) -> Dist1D:
    curve = MonotoneCurve.named("independent_value", 1.0, 2.0, n=n)
    return Dist1D((Atom(0.0, (4.0 / E2) ** (1.0 / n)),), curve, 0.0, curve.point_hi)


def correlated_low_values(eps: float) -> Dist1D:
    top = 1.0 - math.exp(-1.0)
    curve = MonotoneCurve.named("correlated_value", 0.0, top, eps=eps)
    return Dist1D((Atom(0.0, (eps + math.exp(-1.0)) / (eps + 1.0)),), curve, 0.0, top)


def build_independent_instance(eps: float, n: int | None = None) -> Instance:
    """H plus n i.i.d. low bidders; ``n`` defaults to ceil(1/eps).

    Passing ``n`` explicitly decouples it from eps for experiments.
    """
    if not (0.0 < eps < 0.125):
        raise ValueError(f"eps must lie in (0, 1/8), got {eps}")
    if n is None:
        n = math.ceil(1.0 / eps - 1e-12)
    if n < 1:
        raise ValueError("need at least one low bidder")
    vl = independent_low_values(n)
    return Instance(
        (bernoulli_high(eps),) + (vl,) * n,
        TieBreakRule.favor_at_zero(0),
        family="independent",
        eps=eps,
        n_param=n,
        names=("H",) + tuple(f"L{i}" for i in range(1, n + 1)),
    )


def build_correlated_instance(eps: float) -> Instance:
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    vl = correlated_low_values(eps)
    return Instance(
        (bernoulli_high(eps), vl, vl),
        TieBreakRule.favor_at_zero(0),
        blocks=((0,), (1, 2)),
        family="correlated",
        eps=eps,
        names=("H", "L1", "L2"),
    )


def product_instance(marginals: Sequence[Dist1D], tie_rule: TieBreakRule | None = None) -> Instance:
    return Instance(tuple(marginals), tie_rule or TieBreakRule.lowest_index())


def point_mass_instance(values: Sequence[float]) -> Instance:
    return product_instance([point_mass(v) for v in values])


def sample_values(inst: Instance, u) -> np.ndarray:
    """Value profiles from block uniforms.

    ``u`` has one column per block (n for product models, 2 for the
    correlated family); a 1-D ``u`` gives a single profile.
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != len(inst.blocks):
        raise ValueError(f"need {len(inst.blocks)} uniforms per profile, got {u.shape[1]}")
    out = np.empty((u.shape[0], inst.n_bidders))
    # blocks with the same marginal are sampled in one pass
    groups: dict[int, list[int]] = {}
    for j, block in enumerate(inst.blocks):
        groups.setdefault(id(inst.marginals[block[0]]), []).append(j)
    for cols in groups.values():
        d = inst.marginals[inst.blocks[cols[0]][0]]
        v = d.sample(u[:, cols].ravel()).reshape(u.shape[0], len(cols))
        for c, j in enumerate(cols):
            for k in inst.blocks[j]:
                out[:, k] = v[:, c]
    return out[0] if single else out
