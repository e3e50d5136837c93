"""Batch experiment runner.

Experiment files are JSON key-value documents with unit-suffixed keys; unknown
keys are rejected with their path. The ``run`` command simulates one scenario,
``compare`` runs a capacity/strategy/seed sweep and emits normalized revenue
tables plus trajectory exports. Every run writes a manifest from which the run
can be reproduced bit-exactly.

Exit codes: 0 success, 2 malformed experiment file or bad option values,
3 controller/solver hard failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Mapping, Optional

import numpy as np
import scipy

from . import __version__
from .bess import BessParams, WindModel
from .nlpsolver import SolveOptions
from .simulator import (
    CONTROLLERS,
    ScenarioConfig,
    SimLog,
    SimulationAbort,
    revenue_table,
    run_scenario,
    write_simlog,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Experiment document failed validation; message carries the key path."""


_NUM = (int, float)

_BESS_KEYS: Mapping[str, tuple] = {
    "q_n_mw": _NUM,
    "soc_min": _NUM,
    "soc_max": _NUM,
    "alpha1": _NUM,
    "alpha2": _NUM,
    "alpha3": _NUM,
    "alpha4": _NUM,
    "n_steps": int,
    "t_ref_hours": _NUM,
    "alpha_lo": _NUM,
    "alpha_hi": _NUM,
    "x0": _NUM,
}

_SOLVER_KEYS: Mapping[str, tuple] = {
    "tol_feas": _NUM,
    "tol_stat": _NUM,
    "max_outer": int,
    "max_inner": int,
}

_SWEEP_KEYS: Mapping[str, tuple] = {
    "capacities_mwh": list,
    "strategies": list,
    "seeds": list,
}

_TOP_KEYS: Mapping[str, tuple] = {
    "output_dir": str,
    "seed": int,
    "strategy": str,
    "capacity_mwh": _NUM,
    "wind_mode": str,
    "noise_sigma_mw": _NUM,
    "horizon_hours": _NUM,
    "dt_sim_hours": _NUM,
    "dt_mpc_hours": _NUM,
    "bess": dict,
    "solver": dict,
    "sweep": dict,
}


def _check_type(path: str, value, expected) -> None:
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected int, got bool")
    if expected is _NUM and isinstance(value, bool):
        raise ConfigError(f"{path}: expected number, got bool")
    if expected is _NUM:
        if not isinstance(value, _NUM):
            raise ConfigError(
                f"{path}: expected number, got {type(value).__name__}"
            )
        return
    if not isinstance(value, expected):
        raise ConfigError(
            f"{path}: expected {expected.__name__}, got {type(value).__name__}"
        )


def _validate_section(doc: Mapping, keys: Mapping[str, tuple], prefix: str) -> None:
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if key not in keys:
            raise ConfigError(f"unknown key {path!r}")
        _check_type(path, value, keys[key])


def validate_experiment(doc) -> dict:
    """Validate a parsed experiment document; returns it unchanged.

    Rejects unknown keys anywhere and wrong value types, reporting the key
    path. Semantic checks (positive quantities, known strategies) happen when
    the document is resolved into scenarios.
    """
    if not isinstance(doc, dict):
        raise ConfigError(f"top level: expected object, got {type(doc).__name__}")
    _validate_section(doc, _TOP_KEYS, "")
    if "bess" in doc:
        _validate_section(doc["bess"], _BESS_KEYS, "bess.")
    if "solver" in doc:
        _validate_section(doc["solver"], _SOLVER_KEYS, "solver.")
    if "sweep" in doc:
        sweep = doc["sweep"]
        _validate_section(sweep, _SWEEP_KEYS, "sweep.")
        for name, elem_type in (
            ("capacities_mwh", _NUM),
            ("strategies", str),
            ("seeds", int),
        ):
            for i, v in enumerate(sweep.get(name, [])):
                _check_type(f"sweep.{name}[{i}]", v, elem_type)
    if "wind_mode" in doc and doc["wind_mode"] not in ("perfect", "noisy"):
        raise ConfigError(
            f"wind_mode: expected 'perfect' or 'noisy', got {doc['wind_mode']!r}"
        )
    if "strategy" in doc and doc["strategy"] not in CONTROLLERS:
        raise ConfigError(
            f"strategy: expected one of {CONTROLLERS}, got {doc['strategy']!r}"
        )
    return doc


def parse_experiment_file(path) -> dict:
    """Load and validate an experiment document (or a manifest wrapping one)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "experiment" in doc:
        doc = doc["experiment"]  # manifests wrap the resolved document
    return validate_experiment(doc)


def echo_experiment(doc: dict) -> str:
    """Canonical text form; parse(echo(parse(x))) == parse(x)."""
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _build_bess(doc: dict, capacity: float) -> BessParams:
    over = doc.get("bess", {})
    return BessParams(
        q_c=capacity,
        q_n=over.get("q_n_mw", 400.0),
        soc_min=over.get("soc_min", 0.3),
        soc_max=over.get("soc_max", 0.9),
        alpha1=over.get("alpha1", 1.0),
        alpha2=over.get("alpha2", 1.03),
        alpha3=over.get("alpha3", 1.0),
        alpha4=over.get("alpha4", 0.5455),
        n_steps=over.get("n_steps", 10),
        t_ref=over.get("t_ref_hours", 1.0),
        alpha_lo=over.get("alpha_lo", 1.0),
        alpha_hi=over.get("alpha_hi", 4.0),
        x0=over.get("x0", 0.4),
    )


def _build_solver_options(doc: dict, keep_trace: bool) -> Optional[SolveOptions]:
    over = doc.get("solver", {})
    if not over and not keep_trace:
        return None
    return SolveOptions(
        tol_feas=over.get("tol_feas", 1e-6),
        tol_stat=over.get("tol_stat", 1e-5),
        max_outer=over.get("max_outer", 50),
        max_inner=over.get("max_inner", 200),
        keep_trace=keep_trace,
    )


def _scenario_from_doc(
    doc: dict, strategy: str, capacity: float, seed: int, wind_mode: str
) -> ScenarioConfig:
    return ScenarioConfig(
        bess=_build_bess(doc, capacity),
        wind=WindModel(
            mode=wind_mode,
            noise_sigma=doc.get("noise_sigma_mw", 40.0),
            seed=seed,
        ),
        controller=strategy,
        horizon_hours=doc.get("horizon_hours", 24.0),
        dt_sim=doc.get("dt_sim_hours", 0.1),
        dt_mpc=doc.get("dt_mpc_hours", 0.1),
        seed=seed,
    )


def _resolved_doc(doc: dict, cfg: ScenarioConfig, output_dir: str) -> dict:
    """Fully explicit experiment document reproducing cfg."""
    b = cfg.bess
    out = {
        "output_dir": output_dir,
        "seed": cfg.seed,
        "strategy": cfg.controller,
        "capacity_mwh": b.q_c,
        "wind_mode": cfg.wind.mode,
        "noise_sigma_mw": cfg.wind.noise_sigma,
        "horizon_hours": cfg.horizon_hours,
        "dt_sim_hours": cfg.dt_sim,
        "dt_mpc_hours": cfg.dt_mpc,
        "bess": {
            "q_n_mw": b.q_n,
            "soc_min": b.soc_min,
            "soc_max": b.soc_max,
            "alpha1": b.alpha1,
            "alpha2": b.alpha2,
            "alpha3": b.alpha3,
            "alpha4": b.alpha4,
            "n_steps": b.n_steps,
            "t_ref_hours": b.t_ref,
            "alpha_lo": b.alpha_lo,
            "alpha_hi": b.alpha_hi,
            "x0": b.x0,
        },
    }
    if "solver" in doc:
        out["solver"] = dict(doc["solver"])
    if "sweep" in doc:
        out["sweep"] = {k: list(v) for k, v in doc["sweep"].items()}
    return out


def _provenance() -> dict:
    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
    }


def _write_manifest(path, doc: dict, command: str) -> None:
    manifest = {
        "command": command,
        "experiment": doc,
        "provenance": _provenance(),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _run_name(cfg: ScenarioConfig) -> str:
    return f"{cfg.controller}_q{cfg.bess.q_c:g}_s{cfg.seed}"


def _write_run_outputs(out_dir: str, cfg: ScenarioConfig, log: SimLog) -> None:
    name = _run_name(cfg)
    write_simlog(log, os.path.join(out_dir, f"{name}_log.csv"))
    with open(os.path.join(out_dir, f"{name}_summary.csv"), "w") as fh:
        fh.write("key,value\n")
        fh.write(f"total_revenue,{float(log.total_revenue)!r}\n")
        fh.write(f"total_cost,{float(log.total_cost)!r}\n")
        fh.write(f"n_solves,{log.n_solves}\n")
        fh.write(f"degraded_solves,{log.degraded_solves}\n")
        fh.write(f"clamp_events,{log.clamp_events}\n")
        fh.write(f"band_exits,{log.band_exits}\n")
        fh.write(f"max_solver_violation,{float(log.max_solver_violation)!r}\n")
        fh.write(f"u_initial,{float(log.u_initial)!r}\n")
    if log.solver_traces:
        with open(os.path.join(out_dir, f"{name}_trace.csv"), "w") as fh:
            fh.write("sim_step,outer,merit_start,merit,violation,stationarity,penalty\n")
            for step, trace in log.solver_traces:
                for rec in trace:
                    fh.write(
                        f"{step},{rec.iteration},{float(rec.merit_start)!r},"
                        f"{float(rec.merit)!r},{float(rec.violation)!r},"
                        f"{float(rec.stationarity)!r},{float(rec.penalty)!r}\n"
                    )


def cmd_run(args) -> int:
    doc = parse_experiment_file(args.experiment)
    strategy = args.strategy or doc.get("strategy")
    if strategy is None:
        raise ConfigError("no strategy: set 'strategy' in the file or pass --strategy")
    if strategy not in CONTROLLERS:
        raise ConfigError(f"strategy: expected one of {CONTROLLERS}, got {strategy!r}")
    capacity = args.capacity if args.capacity is not None else doc.get("capacity_mwh", 400.0)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    wind_mode = "perfect" if args.perfect_forecast else doc.get("wind_mode", "noisy")
    out_dir = args.out or doc.get("output_dir", "out")

    try:
        cfg = _scenario_from_doc(doc, strategy, float(capacity), int(seed), wind_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    options = _build_solver_options(doc, args.solver_trace)

    os.makedirs(out_dir, exist_ok=True)
    log = run_scenario(cfg, solver_options=options)
    _write_run_outputs(out_dir, cfg, log)
    resolved = _resolved_doc(doc, cfg, out_dir)
    _write_manifest(os.path.join(out_dir, "manifest.json"), resolved, "run")
    print(f"{_run_name(cfg)}: revenue {log.total_revenue:.3f}, "
          f"{log.degraded_solves} degraded of {log.n_solves} solves")
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = parse_experiment_file(args.experiment)
    sweep = doc.get("sweep")
    if sweep is None:
        raise ConfigError("compare needs a 'sweep' section")
    capacities = sweep.get("capacities_mwh", [200.0, 400.0, 800.0, 1200.0])
    strategies = sweep.get("strategies", list(CONTROLLERS))
    seeds = sweep.get("seeds", [0])
    for s in strategies:
        if s not in CONTROLLERS:
            raise ConfigError(f"sweep.strategies: unknown strategy {s!r}")
    wind_mode = "perfect" if args.perfect_forecast else doc.get("wind_mode", "noisy")
    out_dir = args.out or doc.get("output_dir", "out")
    options = _build_solver_options(doc, args.solver_trace)

    os.makedirs(out_dir, exist_ok=True)
    revenues: dict[tuple[float, str], float] = {}
    trajectory_capacity = 400.0 if 400.0 in capacities else None
    for capacity in capacities:
        for strategy in strategies:
            total = 0.0
            for seed in seeds:
                try:
                    cfg = _scenario_from_doc(
                        doc, strategy, float(capacity), int(seed), wind_mode
                    )
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
                log = run_scenario(cfg, solver_options=options)
                _write_run_outputs(out_dir, cfg, log)
                total += log.total_revenue
                if (
                    capacity == trajectory_capacity
                    and seed == seeds[0]
                ):
                    traj = os.path.join(out_dir, f"trajectory_{strategy}.csv")
                    with open(traj, "w") as fh:
                        fh.write("t,u,soc\n")
                        for rec in log.records:
                            fh.write(
                                f"{float(rec.t)!r},{float(rec.u)!r},{float(rec.soc)!r}\n"
                            )
            revenues[(float(capacity), strategy)] = total / len(seeds)

    table = revenue_table(revenues) if (200.0, "uniform") in revenues else None
    if table is not None:
        with open(os.path.join(out_dir, "revenue_table.csv"), "w") as fh:
            fh.write(table.to_text())
    resolved = dict(doc)
    resolved.setdefault("output_dir", out_dir)
    _write_manifest(os.path.join(out_dir, "manifest.json"), resolved, "compare")
    for (cap, strat), rev in sorted(revenues.items()):
        print(f"q_c {cap:g} MWh, {strat}: mean revenue {rev:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsmpc",
        description="Run storage-scheduling MPC experiments from a JSON file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one scenario")
    run_p.add_argument("experiment", help="experiment JSON file (or a manifest)")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--strategy", choices=CONTROLLERS, default=None)
    run_p.add_argument("--capacity", type=float, default=None, help="q_c [MWh]")
    run_p.add_argument("--perfect-forecast", action="store_true")
    run_p.add_argument("--solver-trace", action="store_true")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="run the sweep and compare revenues")
    cmp_p.add_argument("experiment", help="experiment JSON file (or a manifest)")
    cmp_p.add_argument("--out", default=None, help="output directory")
    cmp_p.add_argument("--perfect-forecast", action="store_true")
    cmp_p.add_argument("--solver-trace", action="store_true")
    cmp_p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationAbort as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
