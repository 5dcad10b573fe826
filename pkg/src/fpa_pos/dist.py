"""One-dimensional distributions with atoms and a parametric continuous part.

Continuous parts are stored as a pair of strictly increasing functions of a
parameter ``t`` (the support point and the cumulative mass), which is the form
the bid and value distributions of the tight instances come in.  CDFs are
evaluated by bisecting the parameter, never through a closed-form inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MASS_TOL = 1e-12
EMD_GRID = 100_000

ArrayFn = Callable[[np.ndarray], np.ndarray]


def bisect_increasing(fn: ArrayFn, target, lo: float, hi: float, *, upper: bool = False) -> np.ndarray:
    """Vectorised bisection for a nondecreasing ``fn`` on ``[lo, hi]``.

    Returns the lower bracket (largest t with fn(t) <= target) or, with
    ``upper=True``, the upper bracket (smallest t with fn(t) >= target).
    The bracket is shrunk to floating-point resolution.
    """
    target = np.asarray(target, dtype=float)
    a = np.full(target.shape, float(lo))
    b = np.full(target.shape, float(hi))
    scale = max(abs(lo), abs(hi), 1.0)
    width = hi - lo
    iters = 1 if width <= 0 else min(80, max(1, math.ceil(math.log2(width / (scale * 2.0**-53))) + 1))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        f = fn(mid)
        go_right = (f < target) if upper else (f <= target)
        a = np.where(go_right, mid, a)
        b = np.where(go_right, b, mid)
    # the far end of the final bracket may already satisfy the condition exactly
    if upper:
        return np.where(fn(a) >= target, a, b)
    return np.where(fn(b) <= target, b, a)


@dataclass(frozen=True)
class Atom:
    point: float
    mass: float

    def __post_init__(self):
        if not (0.0 < self.mass <= 1.0 + MASS_TOL):
            raise ValueError(f"atom mass must lie in (0, 1], got {self.mass}")


# --------------------------------------------------------------------------
# named curve families (needed for JSON round trips)

def _independent_value_curve(n: int):
    def point(t):
        t = np.asarray(t, dtype=float)
        return 1.0 - (n - (t - 1.0)) / (n * t - (t - 1.0)) * t**2 * np.exp(2.0 - 2.0 * t)

    def cdf(t):
        t = np.asarray(t, dtype=float)
        return (4.0 / t**2 * np.exp(2.0 * t - 4.0)) ** (1.0 / n)

    return point, cdf


def _focal_bid_l_curve(n: int):
    _, cdf = _independent_value_curve(n)

    def point(t):
        t = np.asarray(t, dtype=float)
        return 1.0 - t**2 * np.exp(2.0 - 2.0 * t)

    return point, cdf


def _focal_bid_h_curve(eps: float):
    def point(t):
        t = np.asarray(t, dtype=float)
        return 1.0 - t**2 * np.exp(2.0 - 2.0 * t)

    def cdf(t):
        t = np.asarray(t, dtype=float)
        return (t**2 / 4.0 - eps) / (1.0 - eps)

    return point, cdf


def _correlated_value_curve(eps: float):
    c = eps + math.exp(-1.0)

    def point(t):
        return np.asarray(t, dtype=float) * 1.0

    def cdf(t):
        t = np.asarray(t, dtype=float)
        return c / (eps + 1.0 - t)

    return point, cdf


def _uniform_curve(lo: float, hi: float):
    def point(t):
        return np.asarray(t, dtype=float) * 1.0

    def cdf(t):
        return (np.asarray(t, dtype=float) - lo) / (hi - lo)

    return point, cdf


def _tabulated_curve(t, point, cdf):
    from scipy.interpolate import PchipInterpolator

    t = np.asarray(t, dtype=float)
    p_fn = PchipInterpolator(t, np.asarray(point, dtype=float), extrapolate=True)
    c_fn = PchipInterpolator(t, np.asarray(cdf, dtype=float), extrapolate=True)
    return (lambda s: p_fn(np.asarray(s, dtype=float))), (lambda s: c_fn(np.asarray(s, dtype=float)))


CURVE_KINDS: dict[str, Callable[..., tuple[ArrayFn, ArrayFn]]] = {
    "independent_value": lambda p: _independent_value_curve(int(p["n"])),
    "focal_bid_L": lambda p: _focal_bid_l_curve(int(p["n"])),
    "focal_bid_H": lambda p: _focal_bid_h_curve(float(p["eps"])),
    "correlated_value": lambda p: _correlated_value_curve(float(p["eps"])),
    "uniform": lambda p: _uniform_curve(float(p["lo"]), float(p["hi"])),
    "tabulated": lambda p: _tabulated_curve(p["t"], p["point"], p["cdf"]),
}
# curves whose parameter is the point itself
IDENTITY_KINDS = frozenset({"correlated_value", "uniform"})


@dataclass(frozen=True)
class MonotoneCurve:
    """Continuous mass laid out along ``t -> (point_fn(t), cdf_fn(t))``.

    The mass placed at or below ``point_fn(t)`` by this curve is
    ``cdf_fn(t) - cdf_fn(t_lo)``; both functions must be increasing.
    """

    t_lo: float
    t_hi: float
    point_fn: ArrayFn = field(compare=False)
    cdf_fn: ArrayFn = field(compare=False)
    kind: str | None = None
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def named(cls, kind: str, t_lo: float, t_hi: float, **params) -> "MonotoneCurve":
        if kind == "shifted":
            base = params["base"]
            return base.shifted(params["offset"])
        point, cdf = CURVE_KINDS[kind](params)
        return cls(float(t_lo), float(t_hi), point, cdf, kind, dict(params))

    @property
    def point_lo(self) -> float:
        return float(self.point_fn(np.array(self.t_lo)))

    @property
    def point_hi(self) -> float:
        return float(self.point_fn(np.array(self.t_hi)))

    @property
    def cdf_lo(self) -> float:
        return float(self.cdf_fn(np.array(self.t_lo)))

    @property
    def mass(self) -> float:
        return float(self.cdf_fn(np.array(self.t_hi))) - self.cdf_lo

    def param_at_point(self, x) -> np.ndarray:
        """Largest parameter whose point does not exceed ``x`` (clipped to the range)."""
        if self.kind in IDENTITY_KINDS:
            return np.clip(np.asarray(x, dtype=float), self.t_lo, self.t_hi)
        return bisect_increasing(self.point_fn, x, self.t_lo, self.t_hi)

    def mass_below(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.where(x >= self.point_hi, self.mass, 0.0)
        inside = (x > self.point_lo) & (x < self.point_hi)
        if np.any(inside):
            t = self.param_at_point(x[inside])
            out[inside] = self.cdf_fn(t) - self.cdf_lo
        return out

    def shifted(self, offset: float) -> "MonotoneCurve":
        base_point = self.point_fn
        return MonotoneCurve(
            self.t_lo,
            self.t_hi,
            lambda t: base_point(t) + offset,
            self.cdf_fn,
            "shifted" if self.kind is not None else None,
            {"base": self, "offset": float(offset)},
        )

    def check_monotone(self, samples: int = 1000) -> bool:
        t = np.linspace(self.t_lo, self.t_hi, samples)
        return bool(np.all(np.diff(self.point_fn(t)) > 0) and np.all(np.diff(self.cdf_fn(t)) > 0))

    def to_json(self) -> dict:
        if self.kind is None:
            raise ValueError("only named curves can be serialised")
        if self.kind == "shifted":
            params = {"base": self.params["base"].to_json(), "offset": self.params["offset"]}
        else:
            params = {k: (np.asarray(v).tolist() if isinstance(v, (np.ndarray, list)) else v)
                      for k, v in self.params.items()}
        return {"t_lo": self.t_lo, "t_hi": self.t_hi, "kind": self.kind, "params": params}

    @classmethod
    def from_json(cls, data: dict) -> "MonotoneCurve":
        params = dict(data["params"])
        if data["kind"] == "shifted":
            params["base"] = cls.from_json(params["base"])
        return cls.named(data["kind"], data["t_lo"], data["t_hi"], **params)


class Distribution:
    """Common interface of :class:`Dist1D` and :class:`Mixture`."""

    support_lo: float
    support_hi: float

    def cdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def atom_list(self) -> list[Atom]:
        raise NotImplementedError

    def atom_mass(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for a in self.atom_list():
            out = out + np.where(x == a.point, a.mass, 0.0)
        return out

    def cdf_left(self, x) -> np.ndarray:
        """P[X < x]."""
        return np.maximum(self.cdf(x) - self.atom_mass(x), 0.0)

    def quantile(self, q) -> np.ndarray:
        raise NotImplementedError

    def sample(self, u) -> np.ndarray:
        return self.quantile(u)

    def shifted(self, offset: float) -> "Distribution":
        raise NotImplementedError

    @property
    def is_point_mass(self) -> bool:
        atoms = self.atom_list()
        return len(atoms) == 1 and abs(atoms[0].mass - 1.0) <= MASS_TOL

    def _atom_quantile(self, q: np.ndarray) -> np.ndarray:
        """Smallest atom point whose CDF reaches q (inf if none)."""
        atoms = sorted(self.atom_list(), key=lambda a: a.point)
        if not atoms:
            return np.full(q.shape, np.inf)
        pts = np.array([a.point for a in atoms])
        reach = np.maximum.accumulate(self.cdf(pts))
        idx = np.searchsorted(reach, q - MASS_TOL * 1e-3, side="left")
        padded = np.append(pts, np.inf)
        return padded[np.minimum(idx, len(pts))]


def _check_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(q < 0.0) or np.any(q > 1.0) or np.any(np.isnan(q)):
        raise ValueError("quantile level must lie in [0, 1]")
    return q


@dataclass(frozen=True)
class Dist1D(Distribution):
    atoms: tuple[Atom, ...] = ()
    continuous: MonotoneCurve | None = None
    support_lo: float = 0.0
    support_hi: float = 0.0

    def __post_init__(self):
        merged: dict[float, float] = {}
        for a in self.atoms:
            merged[a.point] = merged.get(a.point, 0.0) + a.mass
        object.__setattr__(self, "atoms", tuple(Atom(p, m) for p, m in sorted(merged.items())))
        total = sum(a.mass for a in self.atoms) + (self.continuous.mass if self.continuous else 0.0)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total!r} differs from 1")
        for a in self.atoms:
            if not (self.support_lo - MASS_TOL <= a.point <= self.support_hi + MASS_TOL):
                raise ValueError(f"atom at {a.point} outside support")

    @classmethod
    def build(cls, atoms: Sequence[Atom] = (), continuous: MonotoneCurve | None = None) -> "Dist1D":
        pts = [a.point for a in atoms]
        if continuous is not None:
            pts += [continuous.point_lo, continuous.point_hi]
        return cls(tuple(atoms), continuous, min(pts), max(pts))

    def atom_list(self) -> list[Atom]:
        return list(self.atoms)

    def _atoms_cdf(self, x: np.ndarray) -> np.ndarray:
        if not self.atoms:
            return np.zeros(np.shape(x))
        pts = np.array([a.point for a in self.atoms])
        cum = np.concatenate([[0.0], np.cumsum([a.mass for a in self.atoms])])
        return cum[np.searchsorted(pts, x, side="right")]

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self._atoms_cdf(x)
        if self.continuous is not None:
            out = out + self.continuous.mass_below(x)
        out = np.where(x >= self.support_hi, 1.0, out)
        return np.clip(out, 0.0, 1.0)

    def quantile(self, q) -> np.ndarray:
        q = _check_q(q)
        best = self._atom_quantile(q)
        c = self.continuous
        if c is not None:
            atoms_below = self._atoms_cdf
            h_lo = float(atoms_below(np.array(c.point_lo)))
            h_hi = float(self.cdf(np.array(c.point_hi)))
            need = (q > h_lo) & (q <= h_hi + MASS_TOL)
            cand = np.where(q <= h_lo, c.point_lo, np.inf)
            if np.any(need):
                qs = q[need]

                def h(t):
                    p = c.point_fn(t)
                    return atoms_below(p) + c.cdf_fn(t) - c.cdf_lo

                t = bisect_increasing(h, np.minimum(qs, h_hi), c.t_lo, c.t_hi, upper=True)
                cand[need] = c.point_fn(t)
            best = np.minimum(best, cand)
        best = np.where(q <= 0.0, self.support_lo, best)
        return np.minimum(best, self.support_hi)

    def shifted(self, offset: float) -> "Dist1D":
        return Dist1D(
            tuple(Atom(a.point + offset, a.mass) for a in self.atoms),
            self.continuous.shifted(offset) if self.continuous is not None else None,
            self.support_lo + offset,
            self.support_hi + offset,
        )

    def to_json(self) -> dict:
        return {
            "atoms": [{"point": a.point, "mass": a.mass} for a in self.atoms],
            "curve": self.continuous.to_json() if self.continuous is not None else None,
            "support": [self.support_lo, self.support_hi],
        }


@dataclass(frozen=True)
class Mixture(Distribution):
    """Finite mixture; weights must sum to one."""

    components: tuple[tuple[float, Distribution], ...]
    support_lo: float = field(init=False)
    support_hi: float = field(init=False)

    def __post_init__(self):
        total = sum(w for w, _ in self.components)
        if abs(total - 1.0) > MASS_TOL or any(w < 0 for w, _ in self.components):
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got {total!r}")
        object.__setattr__(self, "support_lo", min(d.support_lo for w, d in self.components if w > 0))
        object.__setattr__(self, "support_hi", max(d.support_hi for w, d in self.components if w > 0))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = sum(w * d.cdf(x) for w, d in self.components if w > 0)
        return np.clip(np.where(x >= self.support_hi, 1.0, out), 0.0, 1.0)

    def atom_list(self) -> list[Atom]:
        merged: dict[float, float] = {}
        for w, d in self.components:
            if w <= 0:
                continue
            for a in d.atom_list():
                merged[a.point] = merged.get(a.point, 0.0) + w * a.mass
        return [Atom(p, m) for p, m in sorted(merged.items())]

    def quantile(self, q) -> np.ndarray:
        q = _check_q(q)
        x = bisect_increasing(self.cdf, q, self.support_lo, self.support_hi, upper=True)
        out = np.minimum(self._atom_quantile(q), x)
        return np.where(q <= 0.0, self.support_lo, out)

    def shifted(self, offset: float) -> "Mixture":
        return Mixture(tuple((w, d.shifted(offset)) for w, d in self.components))

    def to_json(self) -> dict:
        return {"mixture": [{"weight": w, "dist": d.to_json()} for w, d in self.components]}


def point_mass(p: float) -> Dist1D:
    return Dist1D((Atom(float(p), 1.0),), None, float(p), float(p))


def uniform(lo: float, hi: float) -> Dist1D:
    return Dist1D((), MonotoneCurve.named("uniform", lo, hi, lo=lo, hi=hi), lo, hi)


def discrete(points: Sequence[float], masses: Sequence[float]) -> Dist1D:
    return Dist1D.build([Atom(float(p), float(m)) for p, m in zip(points, masses)])


def mixture(parts: Sequence[tuple[float, Distribution]]) -> Distribution:
    parts = [(float(w), d) for w, d in parts if w > 0]
    if len(parts) == 1:
        return parts[0][1]
    return Mixture(tuple(parts))


def from_json(data: dict) -> Distribution:
    if "mixture" in data:
        return Mixture(tuple((c["weight"], from_json(c["dist"])) for c in data["mixture"]))
    atoms = tuple(Atom(a["point"], a["mass"]) for a in data["atoms"])
    curve = MonotoneCurve.from_json(data["curve"]) if data.get("curve") else None
    lo, hi = data["support"]
    return Dist1D(atoms, curve, lo, hi)


# --------------------------------------------------------------------------
# functional interface


def cdf(d: Distribution, x) -> np.ndarray:
    return d.cdf(x)


def quantile(d: Distribution, q) -> np.ndarray:
    return d.quantile(q)


def sample(d: Distribution, u) -> np.ndarray:
    """Inverse-transform sample; ``u`` is supplied by the caller."""
    return d.sample(u)


def emd(d1: Distribution, d2: Distribution, order: float = 1, grid: int = EMD_GRID) -> float:
    """Earth mover's distance of the given order between two distributions.

    Quantile functions are compared on a uniform grid of ``grid`` levels in
    [0, 1] (endpoints included); finite orders use the trapezoid rule.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    q = np.linspace(0.0, 1.0, grid)
    gap = np.abs(d1.quantile(q) - d2.quantile(q))
    if math.isinf(order):
        return float(gap.max())
    return float(np.trapezoid(gap**order, q) ** (1.0 / order))
