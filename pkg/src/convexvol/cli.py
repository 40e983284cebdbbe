"""Command-line driver: kernel, volume, bench, lowerbound, fit."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .bench import (CSV_FIELDS, ExperimentConfig, FitResult, fit_exponent,
                    read_rows, rows_to_csv, run_experiment)
from .oracle import ContractViolation


def _parse_body(arg: str):
    if arg.lstrip().startswith("{"):
        return json.loads(arg)
    if os.path.exists(arg):
        with open(arg) as fh:
            return json.load(fh)
    return arg


def _add_common(p):
    p.add_argument("--body", default="ball",
                   help="builtin name (ball, box, ellipsoid), JSON file, or inline JSON")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-prime-mode", choices=("paper", "tuned"), default="tuned")
    p.add_argument("--out", default=None, help="output path (default stdout)")


def _build_parser():
    ap = argparse.ArgumentParser(prog="convexvol",
                                 description="membership-oracle convex geometry toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("volume", help="one volume estimate, CSV row out")
    _add_common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--mode", choices=("det", "rand", "qsim"), default="det")

    p = sub.add_parser("kernel", help="construct an eps-kernel, JSON out")
    _add_common(p)
    p.add_argument("--eps", type=float, required=True)

    p = sub.add_parser("bench", help="grid of trials, CSV out")
    _add_common(p)
    p.add_argument("--eps", default=None,
                   help="comma-separated decreasing eps grid")
    p.add_argument("--mode", default="det",
                   help="comma-separated subset of det,rand,qsim,kernel,lowerbound")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", default=None,
                   help="JSON file mirroring the experiment config fields")

    p = sub.add_parser("lowerbound", help="hard instance + reduction round trip")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--bits", default="random",
                   help="random, balanced, or an explicit 0/1 string")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("fit", help="fit a query-complexity exponent from a CSV")
    p.add_argument("csv")
    p.add_argument("--mode", required=True)
    p.add_argument("--dim", type=int, required=True)

    return ap


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_volume(args) -> int:
    cfg = ExperimentConfig(body=_parse_body(args.body), dims=[args.dim],
                           eps_grid=[args.eps], modes=[args.mode], trials=1,
                           seed_base=args.seed, eps_prime_mode=args.eps_prime_mode)
    rows = run_experiment(cfg)
    _emit(rows_to_csv(rows), args.out)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def _cmd_kernel(args) -> int:
    from .kernel import construct_kernel
    from .oracle import OracleHandle, QueryLedger
    from .bench import _resolve_body

    name, spec = _resolve_body(_parse_body(args.body), args.dim)
    ledger = QueryLedger()
    handle = OracleHandle(spec, ledger)
    t0 = time.perf_counter()
    kern, L, r_out = construct_kernel(handle, args.dim, args.eps,
                                      spec.enclosing_radius)
    wall = time.perf_counter() - t0
    doc = {
        "polytope": kern.to_json(),
        "frame": L.to_json(),
        "manifest": {
            "body": name, "d": args.dim, "eps": args.eps, "R_out": r_out,
            "queries": ledger.snapshot(), "wall_time": wall, "seed": args.seed,
        },
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def _cmd_bench(args) -> int:
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        if args.out:
            cfg.out = args.out
    else:
        if args.eps is None:
            raise ContractViolation("bench needs --eps or --config")
        eps_grid = [float(e) for e in args.eps.split(",")]
        cfg = ExperimentConfig(body=_parse_body(args.body), dims=[args.dim],
                               eps_grid=eps_grid, modes=args.mode.split(","),
                               trials=args.trials, seed_base=args.seed,
                               eps_prime_mode=args.eps_prime_mode, out=args.out,
                               workers=args.workers)
    rows = run_experiment(cfg)
    if not cfg.out:
        sys.stdout.write(rows_to_csv(rows))
    bad = sum(r["status"] != "ok" for r in rows)
    return 0 if bad == 0 else 1


def _cmd_lowerbound(args) -> int:
    from .lowerbound import (capbody_oracle, make_hard_instance,
                             reduction_volume_to_hamming)
    from .oracle import QueryLedger
    from .volume import volume_deterministic

    bits = args.bits
    if set(bits) <= {"0", "1"} and bits not in ("random", "balanced"):
        bits = np.array([int(c) for c in bits], dtype=np.uint8)
        inst = make_hard_instance(args.dim, args.eps, bits)
    else:
        inst = make_hard_instance(args.dim, args.eps, bits, seed=args.seed)
    ledger = QueryLedger()
    handle, R, vol_scale = capbody_oracle(inst, ledger)
    est = volume_deterministic(handle, args.dim, args.eps / 8.0, R)
    w = reduction_volume_to_hamming(inst, est.value * vol_scale)
    truth = int(inst.bits.sum())
    doc = {
        "instance": inst.to_manifest(),
        "estimate": est.value * vol_scale,
        "true_volume": inst.volume(),
        "recovered_weight": w,
        "true_weight": truth,
        "weight_error": abs(w - truth),
        "n": inst.n,
        "queries": ledger.snapshot(),
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0 if abs(w - truth) <= inst.n / 4 else 1


def _cmd_fit(args) -> int:
    rows = read_rows(args.csv)
    fit = fit_exponent(rows, args.mode, args.dim)
    sys.stdout.write(
        f"mode={args.mode} dim={args.dim} slope={fit.slope:.4f} "
        f"intercept={fit.intercept:.4f} r2={fit.r_squared:.6f} "
        f"points={fit.num_points}\n")
    return 0


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        if args.command == "volume":
            return _cmd_volume(args)
        if args.command == "kernel":
            return _cmd_kernel(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "lowerbound":
            return _cmd_lowerbound(args)
        if args.command == "fit":
            return _cmd_fit(args)
        return 2
    except (ContractViolation, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except Exception as exc:  # estimator failure
        sys.stderr.write(f"estimator error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
