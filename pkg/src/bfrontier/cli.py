"""Command-line front end.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
Every run writes a CSV and a JSON sidecar echoing the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, confidence_band, default_epsilon_grid, select_epsilon
from .bounds import IdentificationError, leave_out_k_cbar
from .data import ValidationError, load_csv, parse_coarsening
from .empirical import estimate_theta
from .frontier import (AteClaim, DteClaim, JointClaim, breakdown_frontier, default_c_grid,
                       robust_region_area)
from .montecarlo import McDgp, StudyConfig, coverage_study, write_table
from .smoothing import SmoothingConfig, SmoothingError, smoothed_band

OUT_ENV = "BFRONTIER_OUT"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- claim parsing

def _parse_claim_item(text: str):
    kind, _, rest = text.strip().partition(":")
    opts = {}
    for part in filter(None, (p.strip() for p in rest.split(","))):
        key, _, val = part.partition("=")
        try:
            opts[key.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"bad value in claim item {text!r}") from None
    kind = kind.strip().lower()
    if kind == "dte":
        return DteClaim(opts.get("z", 0.0), opts.get("p", 0.5))
    if kind == "ate":
        return AteClaim(opts.get("mu", 0.0))
    raise ConfigError(f"unknown claim kind {kind!r}; use dte or ate")


def build_claim(args):
    if args.claim == "dte":
        return DteClaim(args.z, args.p)
    if args.claim == "ate":
        return AteClaim(args.mu)
    if not args.claims:
        raise ConfigError("joint claims need --claims, e.g. 'dte:z=0,p=0.5;ate:mu=0'")
    members = [_parse_claim_item(t) for t in args.claims.split(";") if t.strip()]
    return JointClaim(tuple(members), "and" if args.claim == "joint-and" else "or")


def _claim_dict(claim):
    if isinstance(claim, DteClaim):
        return {"kind": "dte", "z": claim.z, "p_lower": claim.p_lower}
    if isinstance(claim, AteClaim):
        return {"kind": "ate", "mu": claim.mu}
    return {"kind": f"joint-{claim.combinator}", "members": [_claim_dict(c) for c in claim.claims]}


# ---------------------------------------------------------------- shared steps

def _load(args):
    cov = [c for c in (args.covariates or "").split(",") if c.strip()]
    spec = parse_coarsening(args.coarsen) if args.coarsen else None
    return load_csv(args.input, args.outcome, args.treatment, [c.strip() for c in cov], spec)


def _grid(args, ce, ds):
    extra = ()
    if args.include_cbar:
        extra = [leave_out_k_cbar(ds, k) for k in range(ds.covariates.shape[1])]
    return default_c_grid(ce.c_max, args.grid_points, args.grid_frac, args.grid_jitter, extra)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    return cfg


# ---------------------------------------------------------------- subcommands

def cmd_frontier(args) -> int:
    ds = _load(args)
    ce = estimate_theta(ds)
    claim = build_claim(args)
    c = _grid(args, ce, ds)
    fc = breakdown_frontier(ce, claim, c)
    out = _out_dir(args)
    _write_csv(out / "frontier.csv", ["c", "t", "claim_id"],
               [(ci, ti, claim.label) for ci, ti in zip(fc.c_grid, fc.t_values)])
    _write_json(out / "frontier.json", {
        "config": _resolved(args), "claim": _claim_dict(claim), "n": ds.n,
        "cells": len(ce.cells), "c_max": ce.c_max, "c_bar": fc.c_bar,
        "grid_points": int(c.size), "breakdown_point": fc.breakdown_point,
        "undefined_points": [float(v) for v in fc.c_grid[fc.undefined]],
        "robust_region_area": robust_region_area(fc)})
    return EXIT_OK


def _resolve_epsilon(args, ds, claim):
    if args.epsilon is not None and args.select_epsilon:
        raise ConfigError("--epsilon and --select-epsilon are mutually exclusive")
    if args.select_epsilon:
        sel = select_epsilon(ds, claim, args.alpha, None, args.B_outer, args.B_inner, args.seed,
                             args.threads, clip_draws=args.clip_draws)
        return sel.epsilon, {"grid": sel.grid, "coverage": sel.coverage, "ratio": sel.ratio}
    if args.epsilon is not None:
        return args.epsilon, None
    return args.epsilon_ratio / math.sqrt(ds.n), None


def cmd_band(args) -> int:
    ds = _load(args)
    ce = estimate_theta(ds)
    claim = build_claim(args)
    c = _grid(args, ce, ds)
    if args.method == "smoothed":
        if not isinstance(claim, DteClaim):
            raise ConfigError("the smoothed method supports --claim dte only")
        cfg = SmoothingConfig(args.kappa, args.kappa, args.p_norm)
        band = smoothed_band(ds, claim, c, cfg, args.B, args.alpha, args.seed, args.threads)
        eps_info = None
    else:
        eps, eps_info = _resolve_epsilon(args, ds, claim)
        bcfg = BootstrapConfig(B=args.B, epsilon=eps, alpha=args.alpha, seed=args.seed,
                               sigma_mode=args.sigma_mode, c_grid=c, redraw=not args.no_redraw,
                               threads=args.threads, clip_draws=args.clip_draws)
        band = confidence_band(ds, claim, bcfg, ce)
    out = _out_dir(args)
    _write_csv(out / "band.csv", ["c", "frontier", "lower_band"],
               zip(band.c_grid, band.frontier, band.lb_on_grid))
    _write_json(out / "band.json", {
        "config": _resolved(args), "claim": _claim_dict(claim), "method": band.method,
        "n": ds.n, "c_bar": band.c_bar, "flagged_draws": band.flagged,
        "coverage_on_draws": band.coverage_on_draws, "solver_optimal": band.optimal,
        "area": band.area, "area_ratio": band.area_ratio, "k_values": band.k_values,
        "meta": band.meta, "epsilon_selection": eps_info})
    return EXIT_OK


def cmd_mc(args) -> int:
    ratios = tuple(float(r) for r in args.ratios.split(","))
    p_lowers = tuple(float(p) for p in args.p_lowers.split(","))
    cfg = StudyConfig(n=args.N, S=args.S, B=args.B, ratios=ratios, p_lowers=p_lowers, z=args.z,
                      alpha=args.alpha, grid_points=args.grid_points, seed=args.seed,
                      threads=args.threads, dgp=McDgp(args.gamma, args.pi),
                      clip_draws=args.clip_draws)
    res = coverage_study(cfg)
    out = _out_dir(args)
    rows = res.table()
    write_table(rows, out / "mc_table.csv")
    _write_json(out / "mc_table.json", {"config": _resolved(args), "rows": rows,
                                        "flagged_draws": int(res.flagged.sum())})
    return EXIT_OK


def cmd_select_epsilon(args) -> int:
    ds = _load(args)
    claim = build_claim(args)
    grid = (np.array([float(r) for r in args.ratios.split(",")]) / math.sqrt(ds.n)
            if args.ratios else default_epsilon_grid(ds.n))
    sel = select_epsilon(ds, claim, args.alpha, grid, args.B_outer, args.B_inner, args.seed,
                         args.threads, clip_draws=args.clip_draws)
    out = _out_dir(args)
    _write_csv(out / "epsilon.csv", ["epsilon", "ratio", "coverage"],
               [(e, e * math.sqrt(ds.n), cv) for e, cv in zip(sel.grid, sel.coverage)])
    _write_json(out / "epsilon.json", {"config": _resolved(args), "claim": _claim_dict(claim),
                                       "epsilon": sel.epsilon, "ratio": sel.ratio})
    print(f"selected epsilon {sel.epsilon:.6g} (ratio {sel.ratio:g})")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    ds = _load(args)
    names = ds.covariate_names
    rows = [(name, leave_out_k_cbar(ds, k)) for k, name in enumerate(names)]
    out = _out_dir(args)
    _write_csv(out / "cbar.csv", ["covariate", "cbar"], rows)
    _write_json(out / "cbar.json", {"config": _resolved(args), "n": ds.n,
                                    "cbar": {k: v for k, v in rows}})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_data(p):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", default="y")
    p.add_argument("--treatment", default="x")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--coarsen", default="", help="quantile cuts for every covariate, e.g. 'age=0.5;hh=0.35,0.65'")


def _add_claim(p):
    p.add_argument("--claim", choices=["dte", "ate", "joint-and", "joint-or"], default="dte")
    p.add_argument("--z", type=float, default=0.0)
    p.add_argument("--p", type=float, default=0.5, help="p_lower for DTE claims")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--claims", default="", help="joint members, e.g. 'dte:z=0,p=0.5;ate:mu=0'")


def _add_grid(p):
    p.add_argument("--grid-points", type=int, default=50)
    p.add_argument("--grid-frac", type=float, default=0.9, help="grid ends at frac * c_max")
    p.add_argument("--grid-jitter", type=int, default=None, help="seed for a random interior grid")
    p.add_argument("--include-cbar", action="store_true", help="add leave-out c-bar points")


def _add_clip(p):
    p.add_argument("--clip-draws", action="store_true",
                   help="bootstrap the frontier clipped to [0, 1] instead of the raw ratio")


def _add_common(p):
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfrontier", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("frontier", help="estimate a breakdown frontier")
    _add_data(p), _add_claim(p), _add_grid(p), _add_common(p)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("band", help="frontier plus a lower confidence band")
    _add_data(p), _add_claim(p), _add_grid(p), _add_common(p)
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--method", choices=["delta", "smoothed"], default="delta")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--epsilon-ratio", type=float, default=1.0, help="epsilon * sqrt(N)")
    p.add_argument("--select-epsilon", action="store_true")
    p.add_argument("--B-outer", type=int, default=500)
    p.add_argument("--B-inner", type=int, default=1000)
    p.add_argument("--sigma-mode", choices=["estimated_min_area", "constant_one"],
                   default="estimated_min_area")
    p.add_argument("--no-redraw", action="store_true",
                   help="keep resamples that lose an arm in some cell (they are flagged)")
    p.add_argument("--kappa", type=float, default=200.0)
    p.add_argument("--p-norm", type=float, default=64.0)
    _add_clip(p)
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("mc", help="coverage and area study on the simulation design")
    p.add_argument("--N", type=int, default=500)
    p.add_argument("--S", type=int, default=200)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--ratios", default="0.5,1,1.5,2,4,6,8,10")
    p.add_argument("--p-lowers", default="0.1,0.25,0.5,0.75,0.9")
    p.add_argument("--z", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid-points", type=int, default=50)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--pi", type=float, default=1.0)
    _add_clip(p), _add_common(p)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("select-epsilon", help="choose the numerical-delta step")
    _add_data(p), _add_claim(p), _add_common(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--ratios", default="", help="candidate epsilon * sqrt(N) values")
    p.add_argument("--B-outer", type=int, default=500)
    p.add_argument("--B-inner", type=int, default=1000)
    _add_clip(p)
    p.set_defaults(func=cmd_select_epsilon)

    p = sub.add_parser("diagnose", help="leave-one-covariate-out c-bar table")
    _add_data(p), _add_common(p)
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, IdentificationError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SmoothingError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
