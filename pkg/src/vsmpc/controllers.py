"""Receding-horizon controllers: variable-sampling, uniform-sampling, heuristic.

Each MPC step solves one horizon problem and returns the piece of the optimized
input trajectory that covers the next control period as a zero-order-hold
schedule. The variable-sampling controller optimizes the warp jointly with the
inputs, so its schedule may switch inside the period when the first warped
steps are shorter than the period.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nlpsolver import (
    STATUS_CONVERGED,
    NlpProblem,
    SolveOptions,
    SolveResult,
    solve,
)
from .ocp import OcpSpec, assemble
from .timewarp import WarpParams, warp_intervals


@dataclass(frozen=True)
class ControlSchedule:
    """Zero-order-hold input over one control period [t_start, t_end).

    Segment i holds values[i] on [breakpoints[i], breakpoints[i+1]), the last
    segment up to t_end. breakpoints[0] == t_start and all breakpoints are
    strictly increasing and stay below t_end.
    """

    t_start: float
    t_end: float
    breakpoints: np.ndarray      # (k,)
    values: np.ndarray           # (k, m)

    def __post_init__(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if bp.ndim != 1 or bp.shape[0] == 0:
            raise ValueError("breakpoints must be a nonempty 1-d array")
        if vals.shape[0] != bp.shape[0]:
            raise ValueError("one value row per breakpoint required")
        if bp[0] != self.t_start:
            raise ValueError("first breakpoint must equal t_start")
        if np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if bp[-1] >= self.t_end:
            raise ValueError("breakpoints must stay below t_end")

    def value_at(self, t: float) -> np.ndarray:
        """Input active at time t (t clamped into the period)."""
        idx = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        idx = min(max(idx, 0), self.values.shape[0] - 1)
        return self.values[idx]

    @property
    def final_value(self) -> np.ndarray:
        """Input active just before t_end (ramp bookkeeping for the next step)."""
        return self.values[-1]


@dataclass
class ControllerState:
    """Memory carried between MPC steps."""

    prev_applied_u: np.ndarray
    warm_z: Optional[np.ndarray] = None
    mult_ineq: Optional[np.ndarray] = None
    t_prev: Optional[float] = None


def _warm_stage_map(beta: np.ndarray, n: int, advance: float) -> np.ndarray:
    """Map each new stage to the old stage covering its midpoint in time.

    A warped grid makes index shifting useless as a warm start: when the
    early intervals are compressed, the horizon advances by several of them
    per controller period, and a shift-by-one start lands the whole input
    trajectory at the wrong absolute times. Aligning by time keeps the warm
    start near-feasible regardless of the warp shape.
    """
    nodes = np.arange(n + 1, dtype=float)
    w = beta[0] * nodes + beta[1] * nodes * nodes
    mids = advance + 0.5 * (w[:-1] + w[1:])
    return np.clip(np.searchsorted(w, mids, side="right") - 1, 0, n - 1)


def _resample_controls(
    z_prev: np.ndarray, n: int, m: int, idx: np.ndarray
) -> np.ndarray:
    z = z_prev.copy()
    u = z_prev[: n * m].reshape(n, m)
    z[: n * m] = u[idx].ravel()
    return z


def _resample_multipliers(
    lam: np.ndarray, n: int, k_path: int, idx: np.ndarray
) -> np.ndarray:
    """Carry path-row multipliers along the same stage mapping, keep the rest."""
    if lam is None or k_path == 0 or lam.shape[0] < n * k_path:
        return lam
    out = lam.copy()
    rows = lam[: n * k_path].reshape(n, k_path)
    out[: n * k_path] = rows[idx].ravel()
    return out


def _cold_start_controls(
    spec: OcpSpec, t_k: float, cumulative: np.ndarray
) -> np.ndarray:
    u = np.empty((spec.n_steps, spec.model.input_dim))
    for j in range(spec.n_steps):
        if spec.u_init is not None:
            guess = np.asarray(spec.u_init(t_k + cumulative[j]), dtype=float)
        else:
            guess = np.where(
                np.isfinite(spec.u_lower) & np.isfinite(spec.u_upper),
                0.5 * (spec.u_lower + spec.u_upper),
                0.0,
            )
        u[j] = np.clip(guess, spec.u_lower, spec.u_upper)
    return u


def _schedule_from_grid(
    t_k: float, dt_mpc: float, cumulative: np.ndarray, u: np.ndarray
) -> ControlSchedule:
    """Truncate the warped input trajectory to the control period."""
    breakpoints = [t_k]
    values = [u[0]]
    for j in range(1, u.shape[0]):
        tj = float(cumulative[j])
        if tj >= dt_mpc * (1.0 - 1e-12):
            break
        breakpoints.append(t_k + tj)
        values.append(u[j])
    return ControlSchedule(
        t_start=t_k,
        t_end=t_k + dt_mpc,
        breakpoints=np.array(breakpoints),
        values=np.array(values),
    )


def _step_common(
    spec: OcpSpec,
    problem: NlpProblem,
    state: ControllerState,
    t_k: float,
    x_k: np.ndarray,
    dt_mpc: float,
    options: Optional[SolveOptions],
    beta0: np.ndarray,
    variable: bool,
    k_path_hint: int,
) -> tuple[ControlSchedule, ControllerState, SolveResult]:
    n, m = spec.n_steps, spec.model.input_dim
    n_beta = 2 if variable else 0
    dim = n * m + n_beta

    def cold_start() -> np.ndarray:
        lo_b = problem.lower[n * m :] if variable else None
        hi_b = problem.upper[n * m :] if variable else None
        b0 = np.clip(beta0, lo_b, hi_b) if variable else beta0
        nodes = np.arange(n + 1, dtype=float)
        cumulative = b0[0] * nodes + b0[1] * nodes * nodes
        u0 = _cold_start_controls(spec, t_k, cumulative)
        return np.concatenate([u0.ravel(), b0]) if variable else u0.ravel()

    warm = state.warm_z is not None and state.warm_z.shape == (dim,)
    if warm:
        beta_prev = state.warm_z[n * m :] if variable else beta0
        advance = dt_mpc if state.t_prev is None else t_k - state.t_prev
        idx = _warm_stage_map(beta_prev, n, advance)
        z0 = _resample_controls(state.warm_z, n, m, idx)
        mult0 = _resample_multipliers(state.mult_ineq, n, k_path_hint, idx)
    else:
        z0 = cold_start()
        mult0 = None

    opts = options or SolveOptions()
    result = solve(problem, z0, opts, mult_ineq0=mult0)
    if warm and result.status != STATUS_CONVERGED:
        # a shifted warm start can drop the iterate into a locally infeasible
        # basin that a fresh start avoids entirely
        retry = solve(problem, cold_start(), opts)
        if (
            retry.status == STATUS_CONVERGED
            or retry.max_violation < result.max_violation
        ):
            result = retry

    u_star = result.z[: n * m].reshape(n, m)
    if variable:
        beta_star = result.z[n * m :]
        params = WarpParams(
            beta1=float(beta_star[0]),
            beta2=float(beta_star[1]),
            n_steps=n,
            t_ref=spec.t_ref,
            alpha_lo=spec.alpha_lo,
            alpha_hi=spec.alpha_hi,
        )
        # converged iterates may sit a feasibility tolerance outside the band;
        # non-converged ones (returned as best iterate) can sit further out
        tol = max(10.0 * opts.tol_feas, 2.0 * result.max_violation, 1e-9)
        grid = warp_intervals(params, tol=tol)
        cumulative = grid.cumulative
    else:
        nodes = np.arange(n + 1, dtype=float)
        cumulative = beta0[0] * nodes + beta0[1] * nodes * nodes

    schedule = _schedule_from_grid(t_k, dt_mpc, cumulative, u_star)
    new_state = ControllerState(
        prev_applied_u=schedule.final_value.copy(),
        warm_z=result.z.copy(),
        mult_ineq=result.mult_ineq,
        t_prev=t_k,
    )
    return schedule, new_state, result


def _count_path_rows(spec: OcpSpec, x_k: np.ndarray, t_k: float) -> int:
    if spec.path_ineq is None:
        return 0
    from .ocp import EvalContext

    u_mid = np.clip(
        np.zeros(spec.model.input_dim), spec.u_lower, spec.u_upper
    )
    ctx = EvalContext(
        aux=spec.aux,
        controls=np.tile(u_mid, (spec.n_steps, 1)),
        x_now=np.asarray(x_k, dtype=float),
        t_now=t_k,
    )
    rows = np.atleast_1d(
        spec.path_ineq(
            0, np.asarray(x_k, dtype=float), u_mid, spec.t_ref / spec.n_steps, t_k, ctx
        )
    )
    return int(rows.shape[0])


def vsmpc_step(
    spec: OcpSpec,
    state: ControllerState,
    t_k: float,
    x_k: np.ndarray,
    dt_mpc: float,
    options: Optional[SolveOptions] = None,
    beta_box: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[ControlSchedule, ControllerState, SolveResult]:
    """One variable-sampling MPC step from measured state x_k at time t_k.

    Solves the joint input/warp horizon problem, converts the optimized warped
    input trajectory into a zero-order-hold schedule truncated at t_k + dt_mpc,
    and returns (schedule, updated controller memory, solver result). A
    non-converged solve still yields the best-iterate schedule; the caller
    decides how to treat it (the result carries the status).
    """
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    problem = assemble(spec, x_k, t_k, beta_bounds=beta_box)
    beta0 = np.array([spec.alpha_lo * spec.t_ref / spec.n_steps, 0.0])
    return _step_common(
        spec, problem, state, t_k, x_k, dt_mpc, options, beta0, True,
        _count_path_rows(spec, x_k, t_k),
    )


def uniform_mpc_step(
    spec: OcpSpec,
    state: ControllerState,
    t_k: float,
    x_k: np.ndarray,
    dt_mpc: float,
    options: Optional[SolveOptions] = None,
) -> tuple[ControlSchedule, ControllerState, SolveResult]:
    """One fixed-grid MPC step: the warp is pinned at (T/N, 0).

    The decision vector carries only the controls; the schedule is the first
    slice of the optimized trajectory over the uniform grid (a single segment
    whenever T/N >= dt_mpc).
    """
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    beta0 = np.array([spec.t_ref / spec.n_steps, 0.0])
    problem = assemble(spec, x_k, t_k, frozen_beta=beta0)
    return _step_common(
        spec, problem, state, t_k, x_k, dt_mpc, options, beta0, False,
        _count_path_rows(spec, x_k, t_k),
    )


def heuristic_step(
    t_k: float,
    x_k: float,
    w_f_now: float,
    dt_mpc: float,
    u_max: float,
) -> ControlSchedule:
    """Myopic rule: schedule w_f * 2x, clipped into [0, u_max]; one segment.

    Sells everything the forecast offers scaled by twice the state of charge,
    so it self-balances around half charge without any prediction.
    """
    u = min(max(w_f_now * 2.0 * float(x_k), 0.0), u_max)
    return ControlSchedule(
        t_start=t_k,
        t_end=t_k + dt_mpc,
        breakpoints=np.array([t_k]),
        values=np.array([[u]]),
    )
