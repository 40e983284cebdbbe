"""Experiment driver: seeded trials, CSV emission, log-log exponent fits."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .oracle import (BodySpec, ContractViolation, OracleHandle, QueryLedger,
                     analytic_volume, builtin_body, spec_from_json)
from .volume import volume_deterministic, volume_quantum_sim, volume_randomized

CSV_FIELDS = ["body", "dim", "eps", "mode", "eps_prime_mode", "trial", "seed",
              "value", "true_volume", "rel_error", "membership_queries",
              "bit_queries", "model_quantum_queries", "simulator_evaluations",
              "wall_ms", "status"]

MODES = ("det", "rand", "qsim", "kernel", "lowerbound")


@dataclass
class ExperimentConfig:
    body: str | dict
    dims: list
    eps_grid: list
    modes: list
    trials: int = 1
    seed_base: int = 0
    eps_prime_mode: str = "tuned"
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        if any(e2 >= e1 for e1, e2 in zip(self.eps_grid, self.eps_grid[1:])):
            raise ContractViolation("eps grid must be strictly decreasing")
        if self.trials < 1:
            raise ContractViolation("trials must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ContractViolation(f"unknown modes {bad}; valid: {MODES}")
        if self.eps_prime_mode not in ("paper", "tuned"):
            raise ContractViolation("eps_prime_mode must be 'paper' or 'tuned'")

    @classmethod
    def from_json(cls, obj) -> "ExperimentConfig":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(**obj)


def _resolve_body(body, dim: int) -> tuple[str, BodySpec]:
    if isinstance(body, BodySpec):
        return body.kind, body
    if isinstance(body, dict):
        spec = spec_from_json(body)
        if spec.dim != dim:
            raise ContractViolation("body JSON dimension does not match --dim")
        return spec.kind, spec
    return str(body), builtin_body(str(body), dim)


def _run_one(task) -> dict:
    (body, dim, eps, mode, trial, seed, eps_prime_mode) = task
    name, spec = _resolve_body(body, dim)
    ledger = QueryLedger()
    row = {"body": name, "dim": dim, "eps": eps, "mode": mode,
           "eps_prime_mode": eps_prime_mode, "trial": trial, "seed": seed,
           "status": "ok"}
    t0 = time.perf_counter()
    try:
        if mode == "lowerbound":
            value, truth, rel = _lowerbound_trial(dim, eps, seed, ledger)
        else:
            handle = OracleHandle(spec, ledger)
            R = spec.enclosing_radius
            if mode == "det":
                est = volume_deterministic(handle, dim, eps, R)
            elif mode == "rand":
                est = volume_randomized(handle, dim, eps, R, seed, eps_prime_mode)
            elif mode == "qsim":
                est = volume_quantum_sim(handle, dim, eps, R, seed, eps_prime_mode)
            elif mode == "kernel":
                from .kernel import construct_kernel
                kern, L, _ = construct_kernel(handle, dim, eps, R)
                est = None
                value = kern.volume() / abs(L.det)
            if mode != "kernel":
                value = est.value
            truth = analytic_volume(spec)
            rel = abs(value - truth) / truth
    except Exception as exc:  # noqa: BLE001 - failed trials become failed rows
        row.update(value=math.nan, true_volume=math.nan, rel_error=math.nan,
                   status=f"error:{type(exc).__name__}")
        value = truth = rel = None
    wall_ms = (time.perf_counter() - t0) * 1000.0
    if row["status"] == "ok":
        row.update(value=value, true_volume=truth, rel_error=rel)
    snap = ledger.snapshot()
    row.update(snap)
    row["wall_ms"] = wall_ms
    return row


def _lowerbound_trial(dim: int, eps: float, seed: int, ledger: QueryLedger):
    """Hard-instance round trip: build K_x, estimate its volume at eps/8,
    reduce to a Hamming weight.  Reported in weight units."""
    from .lowerbound import (capbody_oracle, make_hard_instance,
                             reduction_volume_to_hamming)

    inst = make_hard_instance(dim, eps, "random", seed=seed)
    handle, R, vol_scale = capbody_oracle(inst, ledger)
    est = volume_deterministic(handle, dim, eps / 8.0, R)
    w = reduction_volume_to_hamming(inst, est.value * vol_scale)
    truth = int(inst.bits.sum())
    rel = abs(w - truth) / inst.n
    return float(w), float(truth), rel


def run_experiment(cfg: ExperimentConfig):
    """One row per (body, dim, eps, mode, trial); deterministic in the seed base."""
    tasks = []
    idx = 0
    for dim in cfg.dims:
        for eps in cfg.eps_grid:
            for mode in cfg.modes:
                n_trials = 1 if mode in ("det", "kernel") else cfg.trials
                for trial in range(n_trials):
                    tasks.append((cfg.body, dim, eps, mode, trial,
                                  cfg.seed_base + idx, cfg.eps_prime_mode))
                    idx += 1
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_one, tasks))
    else:
        rows = [_run_one(t) for t in tasks]
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            write_rows(rows, fh)
    return rows


def write_rows(rows, fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in CSV_FIELDS})


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    write_rows(rows, buf)
    return buf.getvalue()


def read_rows(path):
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# exponent fitting


@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    residuals: list = field(default_factory=list)
    num_points: int = 0


def query_field_for_mode(mode: str) -> str:
    return "model_quantum_queries" if mode == "qsim" else "membership_queries"


def fit_exponent(rows, mode: str, d: int, query_field: str | None = None) -> FitResult:
    """OLS slope of log(median queries) against log(1/eps)."""
    field_name = query_field or query_field_for_mode(mode)
    per_eps: dict = {}
    for row in rows:
        if str(row["mode"]) != mode or int(row["dim"]) != d:
            continue
        if str(row.get("status", "ok")) != "ok":
            continue
        per_eps.setdefault(float(row["eps"]), []).append(float(row[field_name]))
    if len(per_eps) < 4:
        raise ContractViolation(
            f"need >= 4 distinct eps values to fit, found {len(per_eps)}")
    eps_vals = np.array(sorted(per_eps, reverse=True))
    med = np.array([float(np.median(per_eps[e])) for e in eps_vals])
    x = np.log(1.0 / eps_vals)
    y = np.log(med)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), r2,
                     residuals=list(y - pred), num_points=len(eps_vals))
