"""Closed-loop simulation of the storage plant under a chosen controller.

The controller is invoked every dt_mpc with the true plant state; between
invocations the plant integrates the SOC with Euler steps of dt_sim, sampling
the returned schedule by zero-order hold at each step start, drawing one
realized-wind value per step, and accumulating the exact-kink accounting cost.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Mapping, Optional

import numpy as np

from .bess import BessParams, WindModel, build_bess_ocp, realized_cost
from .controllers import (
    ControllerState,
    heuristic_step,
    uniform_mpc_step,
    vsmpc_step,
)
from .nlpsolver import STATUS_CONVERGED, SolveOptions

CONTROLLERS = ("vsmpc", "uniform", "heuristic")


class SimulationAbort(RuntimeError):
    """Controller hard failure; carries the log of completed steps."""

    def __init__(self, message: str, partial: "SimLog"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop run: plant, wind, controller, timing, noise seed.

    seed drives the realized-wind noise stream (the wind model's own seed is
    replaced by it for the run, so a manifest needs only this value).
    """

    bess: BessParams
    wind: WindModel
    controller: str
    horizon_hours: float = 24.0
    dt_sim: float = 0.1
    dt_mpc: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ValueError(
                f"controller must be one of {CONTROLLERS}, got {self.controller!r}"
            )
        if self.dt_sim <= 0.0 or self.dt_mpc <= 0.0 or self.horizon_hours <= 0.0:
            raise ValueError("time quantities must be positive")
        ratio = self.dt_mpc / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_sim must divide dt_mpc")
        total = self.horizon_hours / self.dt_mpc
        if abs(total - round(total)) > 1e-9 or round(total) < 1:
            raise ValueError("dt_mpc must divide horizon_hours")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True)
class StepRecord:
    """One simulation step. soc is the state at the step start."""

    step: int
    t: float
    u: float
    w_f: float
    w_a: float
    soc: float
    revenue: float
    reserve: float
    dispatch: float
    ramp: float
    cost: float
    solver_status: str
    beta1: float
    beta2: float
    solver_violation: float
    solver_iterations: int
    clamped: bool
    band_exit: bool


@dataclass
class SimLog:
    """Per-step records plus aggregates accumulated in record order."""

    config: ScenarioConfig
    u_initial: float                     # ramp context before the first step
    records: List[StepRecord] = field(default_factory=list)
    total_cost: float = 0.0              # sum of cost * dt_sim, record order
    total_revenue: float = 0.0           # negative of total_cost
    degraded_solves: int = 0
    n_solves: int = 0
    clamp_events: int = 0
    band_exits: int = 0
    max_solver_violation: float = 0.0
    solver_traces: list = field(default_factory=list)

    def recompute_aggregates(self) -> tuple[float, int, int]:
        """Recompute (total_cost, clamp_events, band_exits) from the records.

        Uses the same running-sum procedure as the simulation loop, so the
        result matches the stored aggregates bit-exactly.
        """
        total = 0.0
        clamps = 0
        exits = 0
        for rec in self.records:
            total += rec.cost * self.config.dt_sim
            clamps += int(rec.clamped)
            exits += int(rec.band_exit)
        return total, clamps, exits


def run_scenario(
    cfg: ScenarioConfig,
    solver_options: Optional[SolveOptions] = None,
    beta_box: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> SimLog:
    """Simulate one scenario; deterministic for a fixed config.

    beta_box (variable-sampling controller only) overrides the warp box, which
    is how the collapsed-box equivalence runs are driven. Raises
    SimulationAbort on a controller exception, carrying the completed steps.
    """
    bess = cfg.bess
    wind = dataclasses.replace(cfg.wind, seed=cfg.seed)
    n_sim = int(round(cfg.horizon_hours / cfg.dt_sim))
    per_period = int(round(cfg.dt_mpc / cfg.dt_sim))

    x = float(bess.x0)
    u_initial = min(max(wind.forecast(0.0) * 2.0 * x, 0.0), bess.q_n)
    u_prev_applied = u_initial
    state = ControllerState(prev_applied_u=np.array([u_initial]))
    log = SimLog(config=cfg, u_initial=u_initial)

    schedule = None
    status = ""
    beta1 = beta2 = float("nan")
    violation = 0.0
    iterations = 0

    for i in range(n_sim):
        t = i * cfg.dt_sim
        if i % per_period == 0:
            try:
                if cfg.controller == "heuristic":
                    schedule = heuristic_step(
                        t, x, wind.forecast(t), cfg.dt_mpc, bess.q_n
                    )
                    status = "heuristic"
                    beta1 = beta2 = float("nan")
                    violation = 0.0
                    iterations = 0
                else:
                    spec = build_bess_ocp(
                        bess, wind, t, x, float(state.prev_applied_u[0])
                    )
                    if cfg.controller == "vsmpc":
                        schedule, state, result = vsmpc_step(
                            spec, state, t, np.array([x]), cfg.dt_mpc,
                            solver_options, beta_box,
                        )
                        beta1 = float(result.z[-2])
                        beta2 = float(result.z[-1])
                    else:
                        schedule, state, result = uniform_mpc_step(
                            spec, state, t, np.array([x]), cfg.dt_mpc,
                            solver_options,
                        )
                        beta1 = bess.t_ref / bess.n_steps
                        beta2 = 0.0
                    status = result.status
                    violation = float(result.max_violation)
                    iterations = int(result.iterations)
                    log.n_solves += 1
                    if result.status != STATUS_CONVERGED:
                        log.degraded_solves += 1
                    log.max_solver_violation = max(
                        log.max_solver_violation, violation
                    )
                    if result.trace:
                        log.solver_traces.append((i, result.trace))
            except Exception as exc:  # noqa: BLE001 - contract: carry partial log
                raise SimulationAbort(
                    f"controller failed at step {i} (t = {t}): {exc}", log
                ) from exc

        u_t = float(schedule.value_at(t)[0])
        w_f_t = float(wind.forecast(t))
        w_a_t = wind.actual(t, i)
        parts = realized_cost(u_t, u_prev_applied, w_f_t, w_a_t, x, bess)

        x_next = x + cfg.dt_sim * (w_a_t - u_t) / bess.q_c
        clamped = x_next < 0.0 or x_next > 1.0
        if clamped:
            x_next = min(max(x_next, 0.0), 1.0)
        band_exit = (
            x_next < bess.soc_min - 1e-9 or x_next > bess.soc_max + 1e-9
        )

        log.records.append(
            StepRecord(
                step=i,
                t=t,
                u=u_t,
                w_f=w_f_t,
                w_a=w_a_t,
                soc=x,
                revenue=parts.revenue,
                reserve=parts.reserve,
                dispatch=parts.dispatch,
                ramp=parts.ramp,
                cost=parts.total,
                solver_status=status,
                beta1=beta1,
                beta2=beta2,
                solver_violation=violation,
                solver_iterations=iterations,
                clamped=clamped,
                band_exit=band_exit,
            )
        )
        log.total_cost += parts.total * cfg.dt_sim
        log.clamp_events += int(clamped)
        log.band_exits += int(band_exit)
        x = x_next
        u_prev_applied = u_t

    log.total_revenue = -log.total_cost
    return log


# ---------------------------------------------------------------------------
# persistence (delimited text)

_CSV_HEADER = (
    "step,t,u,w_f,w_a,soc,revenue,reserve,dispatch,ramp,cost,"
    "solver_status,beta1,beta2,solver_violation,solver_iterations,"
    "clamped,band_exit"
)


def write_simlog(log: SimLog, path) -> None:
    """Write the per-step records as comma-separated text (documented header).

    Floats are written with shortest round-trip precision, so reading the file
    back reproduces every value bit-exactly.
    """
    with open(path, "w") as fh:
        fh.write(_CSV_HEADER + "\n")
        for r in log.records:
            fh.write(
                f"{r.step},{float(r.t)!r},{float(r.u)!r},{float(r.w_f)!r},"
                f"{float(r.w_a)!r},{float(r.soc)!r},{float(r.revenue)!r},"
                f"{float(r.reserve)!r},{float(r.dispatch)!r},{float(r.ramp)!r},"
                f"{float(r.cost)!r},{r.solver_status},{float(r.beta1)!r},"
                f"{float(r.beta2)!r},{float(r.solver_violation)!r},"
                f"{r.solver_iterations},{int(r.clamped)},{int(r.band_exit)}\n"
            )


def read_simlog_records(path) -> List[StepRecord]:
    """Read records written by write_simlog; values round-trip exactly."""
    records: List[StepRecord] = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != _CSV_HEADER:
            raise ValueError(f"unrecognized log header: {header!r}")
        for line in fh:
            f = line.rstrip("\n").split(",")
            if len(f) != 18:
                raise ValueError(f"malformed record: {line!r}")
            records.append(
                StepRecord(
                    step=int(f[0]), t=float(f[1]), u=float(f[2]),
                    w_f=float(f[3]), w_a=float(f[4]), soc=float(f[5]),
                    revenue=float(f[6]), reserve=float(f[7]),
                    dispatch=float(f[8]), ramp=float(f[9]), cost=float(f[10]),
                    solver_status=f[11], beta1=float(f[12]), beta2=float(f[13]),
                    solver_violation=float(f[14]), solver_iterations=int(f[15]),
                    clamped=bool(int(f[16])), band_exit=bool(int(f[17])),
                )
            )
    return records


# ---------------------------------------------------------------------------
# revenue comparison

@dataclass(frozen=True)
class RevenueTable:
    """Capacity x strategy revenue matrix, normalized to a baseline cell."""

    capacities: tuple
    strategies: tuple
    revenue: np.ndarray        # raw revenues, shape (n_cap, n_strat)
    normalized: np.ndarray     # revenue / baseline
    baseline: float
    vsmpc_minus_uniform: np.ndarray  # relative gap per capacity (nan if absent)

    def to_text(self) -> str:
        lines = ["capacity," + ",".join(self.strategies)]
        for i, cap in enumerate(self.capacities):
            cells = ",".join(f"{float(v)!r}" for v in self.normalized[i])
            lines.append(f"{float(cap)!r},{cells}")
        lines.append("")
        lines.append("capacity,vsmpc_minus_uniform_rel")
        for i, cap in enumerate(self.capacities):
            lines.append(f"{float(cap)!r},{float(self.vsmpc_minus_uniform[i])!r}")
        return "\n".join(lines) + "\n"


def revenue_table(
    revenues: Mapping[tuple[float, str], float],
    baseline_capacity: float = 200.0,
    baseline_strategy: str = "uniform",
) -> RevenueTable:
    """Normalize a capacity-sweep revenue map by the baseline cell.

    revenues maps (capacity, strategy) to realized revenue. The baseline cell
    (baseline_capacity, baseline_strategy) must be present and positive.
    """
    key = (baseline_capacity, baseline_strategy)
    if key not in revenues:
        raise ValueError(f"baseline cell {key} missing from the sweep")
    baseline = float(revenues[key])
    if baseline <= 0.0:
        raise ValueError(f"baseline revenue must be positive, got {baseline}")
    capacities = tuple(sorted({c for c, _ in revenues}))
    strategies = tuple(
        s for s in CONTROLLERS if any(k[1] == s for k in revenues)
    )
    mat = np.full((len(capacities), len(strategies)), np.nan)
    for (cap, strat), rev in revenues.items():
        if strat not in strategies:
            raise ValueError(f"unknown strategy {strat!r}")
        mat[capacities.index(cap), strategies.index(strat)] = rev
    gaps = np.full(len(capacities), np.nan)
    for i, cap in enumerate(capacities):
        if (cap, "vsmpc") in revenues and (cap, "uniform") in revenues:
            uni = revenues[(cap, "uniform")]
            gaps[i] = (revenues[(cap, "vsmpc")] - uni) / abs(uni)
    return RevenueTable(
        capacities=capacities,
        strategies=strategies,
        revenue=mat,
        normalized=mat / baseline,
        baseline=baseline,
        vsmpc_minus_uniform=gaps,
    )
