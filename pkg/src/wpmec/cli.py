"""Experiment runner: regime comparisons over station-power sweeps.

Reads a YAML (or JSON) config with system constants, a user population
(explicit gains or a seeded generative draw), a power sweep and a regime
list; writes one CSV of per-point results plus a manifest holding the
fully resolved configuration. Same seed, same outputs, byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys as _sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .binary import alternate_solve
from .errors import AllZero, ConfigError, Infeasible
from .fractional import (SolveReport, dinkelbach, make_noma_partial,
                         make_tdma_partial, max_min_bits, worst_ratio)
from .model import (EhParams, Regime, SystemParams, UserParams, dbm_to_watt,
                    evaluate, feasibility_residuals, sample_users)
from .oracle import refine

CSV_COLUMNS = ["Ps_W", "regime", "eta_star_bits_per_J", "min_bits",
               "sum_bits", "sum_energy_J", "jain_index", "outer_iters",
               "inner_iters", "status", "sum_ce_baseline"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def fairness_index(ce: Sequence[float]) -> float:
    """Jain's index (sum x)^2 / (K sum x^2): 1 when all equal, 1/K when a
    single user holds everything. Raises AllZero on an all-zero vector."""
    x = np.asarray(ce, dtype=float)
    if x.size == 0:
        raise ValueError("fairness index needs a nonempty vector")
    if np.any(x < 0):
        raise ValueError("fairness index needs nonnegative entries")
    s2 = float(np.sum(x * x))
    if s2 == 0.0:
        raise AllZero("fairness index undefined for an all-zero vector")
    s = float(np.sum(x))
    return s * s / (x.size * s2)


def solve_regime(regime: Regime, users: Sequence[UserParams],
                 sys: SystemParams, Ps: float | None = None,
                 framework: str = "ce",
                 polish_rounds: int = 24) -> SolveReport:
    """Solve one regime at one station power and polish the allocation.

    The coordinate polish only ever raises the reported objective and
    keeps the allocation feasible; it aligns regimes that share the same
    optimum to well below the solver tolerances.
    """
    if framework not in ("ce", "cb"):
        raise ValueError("framework must be 'ce' or 'cb'")
    if regime.is_binary:
        report = alternate_solve(regime, users, sys, Ps=Ps,
                                 objective="bits" if framework == "cb"
                                 else "ce")
    else:
        maker = make_noma_partial if regime.is_noma else make_tdma_partial
        problem = maker(users, sys, Ps=Ps)
        report = max_min_bits(problem, sys) if framework == "cb" \
            else dinkelbach(problem, sys)

    if polish_rounds > 0 and report.alloc is not None:
        objective = "bits" if framework == "cb" else "ce"
        alloc, value = refine(report.alloc, regime, users, sys,
                              objective=objective, rounds=polish_rounds)
        if np.isfinite(value) and value > report.eta_star:
            metrics = evaluate(alloc, regime, users, sys)
            report.alloc = alloc
            report.eta_star = value
            report.bits = np.array([m.bits for m in metrics])
            report.energy = np.array([m.energy for m in metrics])
            report.residuals = feasibility_residuals(alloc, regime, users,
                                                     sys)
            if report.eta_relaxed is not None:
                report.eta_relaxed = max(report.eta_relaxed, value)
    return report


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULT_REGIMES = [r.value for r in Regime]


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"config parse error{where}: {exc}")
    _require(isinstance(raw, dict), "top-level config must be a mapping")
    if "config" in raw:          # a manifest: re-run from its resolved config
        raw = raw["config"]
    return raw


def resolve_config(raw: dict, *, seed_override: int | None = None,
                   regimes_override: list[str] | None = None) -> dict:
    """Validate and materialize every default so the manifest is complete."""
    sys_cfg = dict(raw.get("system", {}))
    eh_cfg = dict(sys_cfg.pop("eh", {}))
    try:
        eh = EhParams(**eh_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system.eh: {exc}")

    users_cfg = dict(raw.get("users", {}))
    gains = users_cfg.get("gains")
    seed = seed_override if seed_override is not None \
        else raw.get("seed", users_cfg.get("seed"))
    v = float(users_cfg.get("v", 1.1))
    if "P_r_W" in users_cfg:
        P_r = float(users_cfg["P_r_W"])
    else:
        P_r = dbm_to_watt(float(users_cfg.get("P_r_dbm", 5.0)))
    if "P_c_W" in users_cfg:
        P_c = float(users_cfg["P_c_W"])
    else:
        P_c = dbm_to_watt(float(users_cfg.get("P_c_dbm", 5.0)))
    R_min = float(users_cfg.get("R_min", 1e4))

    channel_note = "explicit gains"
    if gains is not None:
        _require(isinstance(gains, dict) and "h" in gains and "g" in gains,
                 "users.gains needs 'h' and 'g' lists")
        h = [float(x) for x in gains["h"]]
        g = [float(x) for x in gains["g"]]
        _require(len(h) == len(g) and len(h) >= 1,
                 "users.gains lists must be nonempty and equally long")
        order = np.argsort(g, kind="stable")
        h = [h[i] for i in order]
        g = [g[i] for i in order]
        K = len(h)
    else:
        _require("count" in users_cfg,
                 "users needs explicit gains or a generative 'count'")
        K = int(users_cfg["count"])
        _require(K >= 1, "users.count must be >= 1")
        _require(seed is not None,
                 "a seed is mandatory for generative channels")
        rng = np.random.default_rng(int(seed))
        drawn = sample_users(K, rng, v=v, P_r=P_r, P_c=P_c, R_min=R_min)
        h = [u.h for u in drawn]
        g = [u.g for u in drawn]
        channel_note = ("generative stand-in: d^-2.5 pathloss, Rayleigh "
                        "fading, d ~ U[1, 5] m")

    sweep_cfg = raw.get("sweep", {})
    if isinstance(sweep_cfg, dict) and "Ps" in sweep_cfg:
        ps_spec = sweep_cfg["Ps"]
    else:
        ps_spec = sweep_cfg
    if isinstance(ps_spec, dict):
        for key in ("start", "stop", "num"):
            _require(key in ps_spec, f"sweep.Ps needs '{key}'")
        ps_values = list(np.linspace(float(ps_spec["start"]),
                                     float(ps_spec["stop"]),
                                     int(ps_spec["num"])))
    elif isinstance(ps_spec, (list, tuple)):
        ps_values = [float(x) for x in ps_spec]
    else:
        raise ConfigError("sweep.Ps must be a list or {start, stop, num}")
    _require(all(p > 0 for p in ps_values),
             "sweep powers must be positive")

    regimes = regimes_override if regimes_override is not None \
        else raw.get("regimes", DEFAULT_REGIMES)
    _require(isinstance(regimes, (list, tuple)) and regimes is not None,
             "regimes must be a list")
    for r in regimes:
        _require(r in {x.value for x in Regime}, f"unknown regime {r!r}")

    framework = raw.get("framework", "ce")
    _require(framework in ("ce", "cb"), "framework must be 'ce' or 'cb'")

    try:
        sys_params = dict(T=float(sys_cfg.get("T", 1.0)),
                          B=float(sys_cfg.get("B", 2e6)),
                          C=float(sys_cfg.get("C", 1e3)),
                          gamma_c=float(sys_cfg.get("gamma_c", 1e-28)),
                          sigma2=float(sys_cfg.get("sigma2", 1e-9)),
                          zeta=float(sys_cfg.get("zeta", 3.0)),
                          tol_outer=float(sys_cfg.get("tol_outer", 1e-4)),
                          tol_sca=float(sys_cfg.get("tol_sca", 1e-4)),
                          tol_dual=float(sys_cfg.get("tol_dual", 1e-3)),
                          max_iters=int(sys_cfg.get("max_iters", 30)))
        SystemParams(K=K, P_th=max(max(ps_values, default=1.0), 1e-12),
                     eh=eh, **sys_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}")

    return {
        "system": {**sys_params,
                   "eh": {"P_max": eh.P_max, "P0": eh.P0, "mu": eh.mu,
                          "psi": eh.psi, "kind": eh.kind,
                          "varrho": eh.varrho}},
        "users": {"h": h, "g": g, "v": v, "P_r_W": P_r, "P_c_W": P_c,
                  "R_min": R_min},
        "sweep": {"Ps": ps_values},
        "regimes": list(regimes),
        "framework": framework,
        "seed": None if seed is None else int(seed),
        "channel_model": channel_note,
    }


def _instantiate(cfg: dict, Ps: float):
    ucfg = cfg["users"]
    users = [UserParams(h=h, g=g, v=ucfg["v"], P_r=ucfg["P_r_W"],
                        P_c=ucfg["P_c_W"], R_min=ucfg["R_min"])
             for h, g in zip(ucfg["h"], ucfg["g"])]
    scfg = {k: v for k, v in cfg["system"].items() if k != "eh"}
    sys_params = SystemParams(K=len(users), P_th=Ps,
                              eh=EhParams(**cfg["system"]["eh"]), **scfg)
    return users, sys_params


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_point(cfg: dict, Ps: float, regime_name: str) -> dict:
    """One (power, regime) cell of the sweep; failures become row status."""
    regime = Regime(regime_name)
    users, sys_params = _instantiate(cfg, Ps)
    row = {c: "" for c in CSV_COLUMNS}
    row["Ps_W"] = Ps
    row["regime"] = regime_name
    try:
        report = solve_regime(regime, users, sys_params,
                              framework=cfg["framework"])
    except Infeasible:
        row.update(eta_star_bits_per_J=0.0, min_bits=0.0, sum_bits=0.0,
                   sum_energy_J=0.0, outer_iters=0, inner_iters=0,
                   status="infeasible")
        return row
    except Exception as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
        return row
    if cfg["framework"] == "cb":
        eta = worst_ratio(report.bits, report.energy)
        min_bits = float(np.min(report.bits))
    else:
        eta = report.eta_star
        min_bits = float(np.min(report.bits))
    ce = [0.0 if b <= 0 else b / e
          for b, e in zip(report.bits, report.energy)]
    try:
        jain = fairness_index(ce)
    except AllZero:
        jain = None
    inner_iters = sum(len(t) for t in report.inner_traces) \
        if report.inner_traces else 0
    row.update(eta_star_bits_per_J=float(eta), min_bits=min_bits,
               sum_bits=float(np.sum(report.bits)),
               sum_energy_J=float(np.sum(report.energy)),
               jain_index=jain, outer_iters=report.iterations,
               inner_iters=inner_iters,
               status="ok" if report.converged else
               f"not-converged: {report.status}")
    return row


def sweep_compare(cfg: dict, parallel: int = 1) -> list[dict]:
    """All (power, regime) cells, deterministically ordered."""
    points = [(Ps, r) for Ps in cfg["sweep"]["Ps"] for r in cfg["regimes"]]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_run_point_star,
                                 [(cfg, p, r) for p, r in points]))
    else:
        rows = [run_point(cfg, p, r) for p, r in points]
    rows.sort(key=lambda r: (r["Ps_W"], r["regime"]))
    return rows


def _run_point_star(args):
    return run_point(*args)


def write_csv(rows: list[dict], path: Path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in CSV_COLUMNS})
    path.write_bytes(buf.getvalue().encode())


def run(config_path: str | Path, out_dir: str | Path,
        seed: int | None = None, parallel: int = 1,
        regimes: list[str] | None = None) -> int:
    """Execute a sweep config; returns the process exit code."""
    try:
        cfg = resolve_config(load_config(config_path),
                             seed_override=seed,
                             regimes_override=regimes)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep_compare(cfg, parallel=parallel)
    write_csv(rows, out / "sweep.csv")
    manifest = {"config": cfg, "outputs": {"sweep_csv": "sweep.csv"},
                "version": __version__}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")
    hard_failures = [r for r in rows
                     if str(r["status"]).startswith("failed")]
    if hard_failures:
        print(f"{len(hard_failures)} sweep point(s) failed",
              file=_sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wpmec",
        description="max-min computation-efficiency experiments for "
                    "wireless-powered MEC networks")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a sweep config")
    p_run.add_argument("config", help="YAML/JSON config or manifest file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--parallel", type=int, default=1,
                       help="worker processes for sweep points")
    p_run.add_argument("--regimes", default=None,
                       help="comma-separated regime subset")
    args = parser.parse_args(argv)
    regimes = None if args.regimes is None else args.regimes.split(",")
    return run(args.config, args.out, seed=args.seed,
               parallel=args.parallel, regimes=regimes)


if __name__ == "__main__":
    raise SystemExit(main())
