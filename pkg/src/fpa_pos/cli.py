"""Command-line front end: ``fpa-pos <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .equilibria import approx_transform, efficient_joint_strategy, focal_profile, focal_to_json, solve_bid_ode
from .instances import TieBreakRule
from .reproduce import CLAIMS, reproduce
from .verify import verify_bce, verify_bcce, verify_bne, verify_universal_approx
from .welfare import build_family, efficiency_table, reports_to_csv

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
OUTPUT_ENV = "FPA_POS_OUTPUT_DIR"
FLOAT_FMT = "%.12g"


class ConfigError(ValueError):
    pass


def _round(obj):
    """Floats to 12 significant digits, non-finite to null."""
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(FLOAT_FMT % x) if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=False) + "\n"


def _resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _emit(text: str, path: str | None) -> None:
    target = _resolve(path)
    if target is None:
        sys.stdout.write(text)
        return
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _grids(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError("--grids takes VALUES,BIDS")
    v, b = int(parts[0]), int(parts[1])
    if v < 2 or b < 2:
        raise ConfigError("grid sizes must be at least 2")
    return v, b


def plot_data_csv(fp, grid: int) -> str:
    """CSV with bid grid, both bid CDFs, the low bidders' bid-to-value map and value CDF."""
    if grid < 2:
        raise ValueError("grid must be at least 2")
    if fp.kind != "independent":
        raise ValueError("plot data is defined for the independent family")
    bs = fp.bid_system
    b = np.linspace(0.0, bs.lam, grid)
    b[-1] = bs.lam
    phi = bs.bid_to_value(1, b)
    cols = {
        "b": b,
        "B_H": bs.bids[0].cdf(b),
        "B_L": bs.bids[1].cdf(b),
        "phi_L": phi,
        "v_L": phi,
        "V_L": fp.instance.marginals[1].cdf(phi),
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*cols.values()):
        w.writerow([FLOAT_FMT % x for x in row])
    return buf.getvalue()


def emit_plot_data(fp, grid: int, path) -> Path:
    text = plot_data_csv(fp, grid)
    target = Path(path)
    target.write_text(text)
    return target


# --------------------------------------------------------------------------
# commands


def cmd_instance(args) -> int:
    inst = build_family(args.family, args.eps)
    _emit(_dump_json(inst.to_json()), args.output)
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    inst = build_family(args.family, args.eps)
    fp = focal_profile(inst)
    if args.action == "plot-data":
        _emit(plot_data_csv(fp, args.grid), args.output)
        return EXIT_OK
    data = focal_to_json(fp, args.grid)
    if args.ode:
        if args.family != "independent":
            raise ConfigError("--ode needs the independent family")
        bs = solve_bid_ode(inst, args.ode_grid)
        t = bs.tables
        n = inst.n_param
        data["ode"] = {
            "grid": args.ode_grid,
            "lambda": t["lambda"],
            "sup_err_B_H": float(np.max(np.abs(t["B_H"] - t["t"] ** 2 / 4))),
            "sup_err_B_L": float(np.max(np.abs(t["B_L"] - ((1 - data["lambda"]) / (1 - t["b"])) ** (1 / n)))),
        }
    _emit(_dump_json(data), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    inst = build_family(args.family, args.eps)
    vg, bg = _grids(args.grids)
    if args.kind == "bne":
        if args.rules:
            inst = inst.with_rule(TieBreakRule.parse(args.rules.split(",")[0]))
        rep = verify_bne(inst, focal_profile(inst), vg, bg, args.delta)
    elif args.kind == "universal":
        rules = [TieBreakRule.parse(r) for r in (args.rules or "favor_h,lowest,uniform").split(",")]
        s_star = approx_transform(inst, focal_profile(inst), args.delta)
        rep = verify_universal_approx(inst, s_star, args.delta, rules, vg, bg)
    else:
        js = efficient_joint_strategy(args.delta)
        fn = verify_bce if args.kind == "bce" else verify_bcce
        rep = fn(inst, js, vg, args.delta, samples=args.samples, seed=args.seed)
    out = {"kind": args.kind, "family": args.family, "eps": args.eps, **rep.to_json()}
    _emit(_dump_json(out), args.output)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_welfare(args) -> int:
    eps_list = _floats(args.eps)
    if not eps_list:
        raise ConfigError("--eps is empty")
    reports = efficiency_table(args.family, eps_list, args.samples, args.seed, args.base_family, args.delta)
    if args.format == "csv":
        _emit(reports_to_csv(reports, FLOAT_FMT), args.output)
    else:
        _emit(_dump_json([r.row() for r in reports]), args.output)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    results = reproduce(args.claim or None)
    rows = [r.to_json() for r in results]
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["claim", "target", "tolerance", "computed", "passed", "runtime"])
        for r in results:
            w.writerow([r.claim, FLOAT_FMT % r.target, FLOAT_FMT % r.tolerance, FLOAT_FMT % r.computed, r.passed, "%.3f" % r.runtime])
        _emit(buf.getvalue(), args.output)
    else:
        _emit(_dump_json({"claims": rows, "passed": all(r.passed for r in results)}), args.output)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpa-pos", description="Price-of-stability experiments for first-price auctions.")
    p.add_argument("--config", help="JSON file whose keys override option defaults")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, eps_type=float, eps_default=0.1):
        sp.add_argument("--family", choices=["independent", "correlated"], default="independent")
        sp.add_argument("--eps", type=eps_type, default=eps_default)
        sp.add_argument("--output", "-o", help=f"output file (relative paths resolve under ${OUTPUT_ENV})")

    sp = sub.add_parser("instance", help="print an instance as JSON")
    common(sp)
    sp.set_defaults(func=cmd_instance)

    sp = sub.add_parser("equilibrium", help="focal equilibrium tables")
    common(sp)
    sp.add_argument("action", nargs="?", choices=["export", "plot-data"], default="export")
    sp.add_argument("--grid", type=int, default=201)
    sp.add_argument("--ode", action="store_true", help="cross-check against the integrated ODE")
    sp.add_argument("--ode-grid", type=int, default=10_000)
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("verify", help="equilibrium regret checks")
    common(sp)
    sp.add_argument("--kind", choices=["bne", "bce", "bcce", "universal"], default="bne")
    sp.add_argument("--delta", type=float, default=1e-6)
    sp.add_argument("--grids", default="512,4096", help="VALUES,BIDS (value grid only for bce/bcce)")
    sp.add_argument("--rules", help="comma list of tie rules: favor_h, lowest, uniform, table:i,j,...")
    sp.add_argument("--samples", type=int, default=20_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("welfare", help="welfare and efficiency ratios")
    sp.add_argument("action", choices=["table"])
    sp.add_argument("--family", choices=["independent", "correlated", "bce"], default="independent")
    sp.add_argument("--base-family", choices=["independent", "correlated"], default="independent")
    sp.add_argument("--eps", default="0.1,0.05,0.01,0.001")
    sp.add_argument("--samples", type=int, default=None, help="Monte Carlo samples (closed form if omitted)")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--delta", type=float, default=0.01, help="shading of the efficient joint strategy")
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    sp.add_argument("--output", "-o")
    sp.set_defaults(func=cmd_welfare)

    sp = sub.add_parser("reproduce", help="check the headline claims")
    sp.add_argument("--claim", action="append", choices=sorted(CLAIMS))
    sp.add_argument("--format", choices=["csv", "json"], default="json")
    sp.add_argument("--output", "-o")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for key, value in overrides.items():
            dest = key.replace("-", "_")
            if hasattr(args, dest):
                setattr(args, dest, value)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
