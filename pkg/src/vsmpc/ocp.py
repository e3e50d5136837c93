"""Single-shooting transcription of optimal control problems on warped grids.

The decision vector is z = [u_0, ..., u_{N-1}, beta1, beta2] (controls row-major,
warp coefficients last), of length m*N + 2. States are eliminated by forward
Euler over the warped grid, the stage costs are integrated with the warped step
widths, and (optionally) the running cost is divided by the total warped length
so horizons of different lengths compete on a per-time basis.

When the dynamics model carries rhs Jacobians and the spec carries stage-cost /
constraint partial derivatives, the assembled problem exposes analytic gradient
and Jacobian closures built by forward sensitivity propagation; otherwise the
solver's internal finite differences take over.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .discretize import DynamicsModel
from .nlpsolver import NlpProblem
from .timewarp import EPS_BETA, WarpParams, warp_feasibility_residuals


class AssemblyError(ValueError):
    """A callback returned something inconsistent with the spec's dimensions."""


class HorizonGuardError(ArithmeticError):
    """Total warped length fell below the divide-by-horizon guard."""


@dataclass(frozen=True)
class EvalContext:
    """Per-evaluation context handed to stage callbacks.

    aux       controller-supplied context (e.g. the previously applied input)
    controls  the current decision's control rows, shape (N, m); stage j may
              read row j-1 as its predecessor input
    x_now     initial state of the horizon
    t_now     absolute time at the start of the horizon
    """

    aux: Mapping
    controls: np.ndarray
    x_now: np.ndarray
    t_now: float


@dataclass(frozen=True)
class StagePartials:
    """Partial derivatives of one stage-cost evaluation."""

    dc_dx: np.ndarray          # (n,)
    dc_du: np.ndarray          # (m,)
    dc_dprev: np.ndarray       # (m,) wrt the predecessor control row
    dc_ddelta: float = 0.0
    dc_dt: float = 0.0


@dataclass(frozen=True)
class PathPartials:
    """Partial derivatives of one path-constraint evaluation (k rows)."""

    dg_dx: np.ndarray          # (k, n)
    dg_du: np.ndarray          # (k, m)
    dg_ddelta: np.ndarray      # (k,)
    dg_dt: np.ndarray          # (k,)


StageCostFn = Callable[[int, np.ndarray, np.ndarray, float, float, EvalContext], float]
StageCostPartialsFn = Callable[
    [int, np.ndarray, np.ndarray, float, float, EvalContext], StagePartials
]
PathIneqFn = Callable[[int, np.ndarray, np.ndarray, float, float, EvalContext], np.ndarray]
PathIneqPartialsFn = Callable[
    [int, np.ndarray, np.ndarray, float, float, EvalContext], PathPartials
]


@dataclass(frozen=True)
class OcpSpec:
    """Problem data for one horizon: dynamics, costs, constraints, geometry.

    The inequality stack of the assembled NLP is, in fixed order:
    path rows for steps 0..N-1 (each step contributes its callback's rows),
    then terminal rows, then the four warp feasibility residuals (omitted when
    the warp is frozen). Control bounds enter as box bounds on z.
    """

    model: DynamicsModel
    n_steps: int
    t_ref: float
    alpha_lo: float
    alpha_hi: float
    stage_cost: StageCostFn
    u_lower: np.ndarray
    u_upper: np.ndarray
    stage_cost_partials: Optional[StageCostPartialsFn] = None
    path_ineq: Optional[PathIneqFn] = None
    path_ineq_partials: Optional[PathIneqPartialsFn] = None
    terminal_ineq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    terminal_ineq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    u_init: Optional[Callable[[float], np.ndarray]] = None
    aux: Mapping = field(default_factory=dict)
    average_cost: bool = True
    # Vectorized variants over all stages at once, signature
    # (states (N,nx), u (N,m), deltas (N,), times (N,), ctx). Optional pure
    # accelerators: when present they must agree with the per-stage callbacks,
    # which stay the semantic reference.
    stage_cost_batch: Optional[Callable] = None
    stage_cost_partials_batch: Optional[Callable] = None
    path_ineq_batch: Optional[Callable] = None
    path_ineq_partials_batch: Optional[Callable] = None

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.t_ref <= 0.0 or not 0.0 < self.alpha_lo <= self.alpha_hi:
            raise ValueError("bad horizon geometry")
        for name in ("u_lower", "u_upper"):
            b = np.asarray(getattr(self, name), dtype=float)
            if b.shape != (self.model.input_dim,):
                raise ValueError(
                    f"{name} must have shape ({self.model.input_dim},), got {b.shape}"
                )
            object.__setattr__(self, name, b)
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("u_lower exceeds u_upper somewhere")

    @property
    def warp_params_template(self) -> tuple[int, float, float, float]:
        return (self.n_steps, self.t_ref, self.alpha_lo, self.alpha_hi)


def _warp_params(spec: OcpSpec, beta: np.ndarray) -> WarpParams:
    return WarpParams(
        beta1=float(beta[0]),
        beta2=float(beta[1]),
        n_steps=spec.n_steps,
        t_ref=spec.t_ref,
        alpha_lo=spec.alpha_lo,
        alpha_hi=spec.alpha_hi,
    )


def _grid_arrays(beta: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(n, dtype=float)
    deltas = beta[0] + beta[1] * (2.0 * j + 1.0)
    nodes = np.arange(n + 1, dtype=float)
    cumulative = beta[0] * nodes + beta[1] * nodes * nodes
    return deltas, cumulative


class _Transcription:
    """Shared evaluation core for one assembled horizon."""

    def __init__(
        self,
        spec: OcpSpec,
        x_now: np.ndarray,
        t_now: float,
        frozen_beta: Optional[np.ndarray],
        beta_lower: np.ndarray,
        beta_upper: np.ndarray,
    ):
        self.spec = spec
        self.x_now = np.asarray(x_now, dtype=float)
        if self.x_now.shape != (spec.model.state_dim,):
            raise AssemblyError(
                f"x_now must have shape ({spec.model.state_dim},), got {self.x_now.shape}"
            )
        self.t_now = float(t_now)
        self.n = spec.n_steps
        self.m = spec.model.input_dim
        self.nx = spec.model.state_dim
        self.frozen_beta = (
            None if frozen_beta is None else np.asarray(frozen_beta, dtype=float)
        )
        self.variable = self.frozen_beta is None
        self.dim = self.m * self.n + (2 if self.variable else 0)
        self.beta_lower = beta_lower
        self.beta_upper = beta_upper
        self.guard = 0.5 * spec.alpha_lo * spec.t_ref
        # one-entry caches keyed by the raw bytes of z; the solver asks for
        # value, rows, gradient and Jacobian separately at the same iterate
        self._fw_key: bytes | None = None
        self._fw_val = None
        self._sens_key: bytes | None = None
        self._sens_val = None
        self._sc_key: bytes | None = None
        self._sc_val = None
        self._probe_row_counts()

    # -- layout -----------------------------------------------------------
    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = z[: self.m * self.n].reshape(self.n, self.m)
        beta = z[self.m * self.n :] if self.variable else self.frozen_beta
        return u, beta

    def _probe_row_counts(self) -> None:
        spec = self.spec
        u_mid = np.where(
            np.isfinite(spec.u_lower) & np.isfinite(spec.u_upper),
            0.5 * (spec.u_lower + spec.u_upper),
            0.0,
        )
        ctx = EvalContext(
            aux=spec.aux,
            controls=np.tile(u_mid, (self.n, 1)),
            x_now=self.x_now,
            t_now=self.t_now,
        )
        delta0 = spec.t_ref / self.n
        c = spec.stage_cost(0, self.x_now, u_mid, delta0, self.t_now, ctx)
        if not np.isscalar(c) and np.asarray(c).shape != ():
            raise AssemblyError("stage_cost must return a scalar")
        if spec.path_ineq is not None:
            rows = np.atleast_1d(
                np.asarray(
                    spec.path_ineq(0, self.x_now, u_mid, delta0, self.t_now, ctx),
                    dtype=float,
                )
            )
            if rows.ndim != 1:
                raise AssemblyError("path_ineq must return a 1-d row vector")
            self.k_path = int(rows.shape[0])
        else:
            self.k_path = 0
        if spec.terminal_ineq is not None:
            rows = np.atleast_1d(np.asarray(spec.terminal_ineq(self.x_now), dtype=float))
            if rows.ndim != 1:
                raise AssemblyError("terminal_ineq must return a 1-d row vector")
            self.k_term = int(rows.shape[0])
        else:
            self.k_term = 0
        self.k_warp = 4 if self.variable else 0
        self.n_ineq = self.n * self.k_path + self.k_term + self.k_warp

    # -- forward pass ------------------------------------------------------
    def forward(self, z: np.ndarray):
        key = z.tobytes()
        if key == self._fw_key:
            return self._fw_val
        # private copy: the inner solver mutates its iterate buffer in place
        out = self._forward_uncached(np.array(z, dtype=float))
        self._fw_key, self._fw_val = key, out
        return out

    def _forward_uncached(self, z: np.ndarray):
        u, beta = self.split(z)
        deltas, cumulative = _grid_arrays(beta, self.n)
        times = self.t_now + cumulative[:-1]
        if self.spec.model.rollout_batch is not None:
            states = np.asarray(
                self.spec.model.rollout_batch(self.x_now, u, deltas, times),
                dtype=float,
            )
        else:
            states = np.empty((self.n + 1, self.nx))
            states[0] = self.x_now
            x = self.x_now
            rhs = self.spec.model.rhs
            for j in range(self.n):
                x = x + deltas[j] * np.asarray(rhs(x, u[j], times[j]), dtype=float)
                states[j + 1] = x
        ctx = EvalContext(
            aux=self.spec.aux, controls=u, x_now=self.x_now, t_now=self.t_now
        )
        return u, beta, deltas, cumulative, times, states, ctx

    def _stage_costs(self, z: np.ndarray) -> np.ndarray:
        key = z.tobytes()
        if key == self._sc_key:
            return self._sc_val
        spec = self.spec
        u, _, deltas, _, times, states, ctx = self.forward(z)
        if spec.stage_cost_batch is not None:
            costs = np.asarray(
                spec.stage_cost_batch(states[:-1], u, deltas, times, ctx),
                dtype=float,
            )
        else:
            costs = np.empty(self.n)
            for j in range(self.n):
                costs[j] = spec.stage_cost(
                    j, states[j], u[j], float(deltas[j]), float(times[j]), ctx
                )
        self._sc_key, self._sc_val = key, costs
        return costs

    def running_cost(self, z: np.ndarray) -> tuple[float, float]:
        """Integrated stage cost and total warped length."""
        _, _, deltas, cumulative, _, _, _ = self.forward(z)
        costs = self._stage_costs(z)
        return float(costs @ deltas), float(cumulative[-1])

    def objective(self, z: np.ndarray) -> float:
        total, w_end = self.running_cost(z)
        if not self.spec.average_cost:
            return total
        # clamped denominator: transiently short horizons must not blow up
        return total / max(w_end, self.guard)

    def ineq(self, z: np.ndarray) -> np.ndarray:
        spec = self.spec
        u, beta, deltas, cumulative, times, states, ctx = self.forward(z)
        rows = np.empty(self.n_ineq)
        at = 0
        if spec.path_ineq is not None:
            if spec.path_ineq_batch is not None:
                rows[: self.n * self.k_path] = np.asarray(
                    spec.path_ineq_batch(states[:-1], u, deltas, times, ctx),
                    dtype=float,
                ).reshape(self.n * self.k_path)
                at = self.n * self.k_path
            else:
                for j in range(self.n):
                    vals = np.asarray(
                        spec.path_ineq(j, states[j], u[j], float(deltas[j]), float(times[j]), ctx),
                        dtype=float,
                    )
                    rows[at : at + self.k_path] = vals
                    at += self.k_path
        if spec.terminal_ineq is not None:
            rows[at : at + self.k_term] = np.asarray(
                spec.terminal_ineq(states[self.n]), dtype=float
            )
            at += self.k_term
        if self.variable:
            rows[at:] = warp_feasibility_residuals(_warp_params(spec, beta))
        return rows

    # -- analytic derivatives ----------------------------------------------
    def has_analytic(self) -> bool:
        spec = self.spec
        if spec.model.rhs_jacobians is None or spec.stage_cost_partials is None:
            return False
        if spec.path_ineq is not None and spec.path_ineq_partials is None:
            return False
        if spec.terminal_ineq is not None and spec.terminal_ineq_jac is None:
            return False
        return True

    def _sensitivity_pass(self, z: np.ndarray):
        """States plus dstates/dz by forward propagation.

        Returns (u, beta, deltas, cumulative, times, states, ctx, sens, f) where
        sens[j] is the (nx, dim) Jacobian of states[j] wrt z. The beta columns
        pick up both the step-width and the absolute-time dependence.
        """
        key = z.tobytes()
        if key == self._sens_key:
            return self._sens_val
        spec = self.spec
        u, beta, deltas, cumulative, times, states, ctx = self.forward(z)
        # Euler identity: the stage derivative is recoverable from the states
        f_all = (states[1:] - states[:-1]) / deltas[:, None]
        if spec.model.rhs_jacobians_batch is not None:
            a_all, b_all, ft_all = spec.model.rhs_jacobians_batch(
                states[:-1], u, times
            )
            a_all = np.asarray(a_all, dtype=float)
            b_all = np.asarray(b_all, dtype=float)
            if ft_all is not None:
                ft_all = np.asarray(ft_all, dtype=float)
        else:
            dfdx_fn, dfdu_fn, dfdt_fn = spec.model.rhs_jacobians
            a_all = np.empty((self.n, self.nx, self.nx))
            b_all = np.empty((self.n, self.nx, self.m))
            ft_all = None if dfdt_fn is None else np.empty((self.n, self.nx))
            for j in range(self.n):
                xj, uj, tj = states[j], u[j], float(times[j])
                a_all[j] = dfdx_fn(xj, uj, tj)
                b_all[j] = dfdu_fn(xj, uj, tj)
                if ft_all is not None:
                    ft_all[j] = dfdt_fn(xj, uj, tj)
        sens = np.zeros((self.n + 1, self.nx, self.dim))
        if not a_all.any():
            # state-independent dynamics: the chain rule factor is the
            # identity, so each stage merely adds its own injection and the
            # whole pass is a cumulative sum over stages
            inj = np.zeros((self.n, self.nx, self.dim))
            for c in range(self.m):
                cols = self.m * np.arange(self.n) + c
                inj[np.arange(self.n), :, cols] = deltas[:, None] * b_all[:, :, c]
            if self.variable:
                js = np.arange(self.n, dtype=float)
                inj[:, :, -2] += f_all
                inj[:, :, -1] += f_all * (2.0 * js + 1.0)[:, None]
                if ft_all is not None:
                    dft = deltas[:, None] * ft_all
                    inj[:, :, -2] += dft * js[:, None]
                    inj[:, :, -1] += dft * (js * js)[:, None]
            np.cumsum(inj, axis=0, out=sens[1:])
        else:
            for j in range(self.n):
                dj = float(deltas[j])
                s_next = sens[j] + dj * (a_all[j] @ sens[j])
                s_next[:, self.m * j : self.m * (j + 1)] += dj * b_all[j]
                if self.variable:
                    # d delta_j / d beta = (1, 2j+1); d t_j / d beta = (j, j^2)
                    fj = f_all[j]
                    s_next[:, -2] += fj
                    s_next[:, -1] += fj * (2.0 * j + 1.0)
                    if ft_all is not None and j > 0:
                        s_next[:, -2] += dj * ft_all[j] * j
                        s_next[:, -1] += dj * ft_all[j] * (j * j)
                sens[j + 1] = s_next
        out = (u, beta, deltas, cumulative, times, states, ctx, sens, f_all)
        self._sens_key, self._sens_val = key, out
        return out

    def gradient(self, z: np.ndarray) -> np.ndarray:
        spec = self.spec
        u, beta, deltas, cumulative, times, states, ctx, sens, _ = (
            self._sensitivity_pass(z)
        )
        costs = self._stage_costs(z)
        total = float(costs @ deltas)
        if spec.stage_cost_partials_batch is not None:
            dc_dx, dc_du, dc_dprev, dc_ddelta, dc_dt = (
                np.asarray(a, dtype=float)
                for a in spec.stage_cost_partials_batch(
                    states[:-1], u, deltas, times, ctx
                )
            )
            d_total = np.einsum("j,jx,jxd->d", deltas, dc_dx, sens[:-1])
            du_block = d_total[: self.n * self.m].reshape(self.n, self.m)
            du_block += dc_du * deltas[:, None]
            if self.n > 1:
                du_block[:-1] += dc_dprev[1:] * deltas[1:, None]
            if self.variable:
                jidx = np.arange(self.n, dtype=float)
                wt = dc_dt * deltas
                cw = costs + dc_ddelta * deltas
                d_total[-2] += float(wt @ jidx) + float(np.sum(cw))
                d_total[-1] += float(wt @ (jidx * jidx)) + float(
                    cw @ (2.0 * jidx + 1.0)
                )
        else:
            d_total = np.zeros(self.dim)
            for j in range(self.n):
                dj, tj = float(deltas[j]), float(times[j])
                c = float(costs[j])
                p = spec.stage_cost_partials(j, states[j], u[j], dj, tj, ctx)
                row = np.zeros(self.dim)
                row += np.asarray(p.dc_dx, dtype=float) @ sens[j]
                row[self.m * j : self.m * (j + 1)] += np.asarray(p.dc_du, dtype=float)
                if j >= 1:
                    row[self.m * (j - 1) : self.m * j] += np.asarray(
                        p.dc_dprev, dtype=float
                    )
                if self.variable:
                    row[-2] += p.dc_dt * j
                    row[-1] += p.dc_dt * (j * j)
                d_total += row * dj
                # width-weighting term c_j * d delta_j / dz (+ explicit dc/ddelta)
                if self.variable:
                    d_total[-2] += c + p.dc_ddelta * dj
                    d_total[-1] += (c + p.dc_ddelta * dj) * (2.0 * j + 1.0)
        if not spec.average_cost:
            return d_total
        w_end = float(cumulative[-1])
        if w_end <= self.guard:
            return d_total / self.guard
        grad = d_total / w_end
        if self.variable:
            n = float(self.n)
            dw = np.zeros(self.dim)
            dw[-2], dw[-1] = n, n * n
            grad -= (total / (w_end * w_end)) * dw
        return grad

    def ineq_jac(self, z: np.ndarray) -> np.ndarray:
        spec = self.spec
        u, beta, deltas, cumulative, times, states, ctx, sens, _ = (
            self._sensitivity_pass(z)
        )
        jac = np.zeros((self.n_ineq, self.dim))
        at = 0
        if spec.path_ineq is not None:
            if spec.path_ineq_partials_batch is not None:
                dg_dx, dg_du, dg_ddelta, dg_dt = (
                    np.asarray(a, dtype=float)
                    for a in spec.path_ineq_partials_batch(
                        states[:-1], u, deltas, times, ctx
                    )
                )
                blocks = np.einsum("jkx,jxd->jkd", dg_dx, sens[:-1])
                for j in range(self.n):
                    blocks[j, :, self.m * j : self.m * (j + 1)] += dg_du[j]
                if self.variable:
                    jcol = np.arange(self.n, dtype=float)[:, None]
                    blocks[:, :, -2] += dg_ddelta + dg_dt * jcol
                    blocks[:, :, -1] += dg_ddelta * (2.0 * jcol + 1.0) + dg_dt * (
                        jcol * jcol
                    )
                at = self.n * self.k_path
                jac[:at] = blocks.reshape(at, self.dim)
            else:
                for j in range(self.n):
                    dj, tj = float(deltas[j]), float(times[j])
                    p = spec.path_ineq_partials(j, states[j], u[j], dj, tj, ctx)
                    block = np.asarray(p.dg_dx, dtype=float) @ sens[j]
                    block[:, self.m * j : self.m * (j + 1)] += np.asarray(
                        p.dg_du, dtype=float
                    )
                    if self.variable:
                        ddelta = np.asarray(p.dg_ddelta, dtype=float)
                        dt = np.asarray(p.dg_dt, dtype=float)
                        block[:, -2] += ddelta + dt * j
                        block[:, -1] += ddelta * (2.0 * j + 1.0) + dt * (j * j)
                    jac[at : at + self.k_path] = block
                    at += self.k_path
        if spec.terminal_ineq is not None:
            jac[at : at + self.k_term] = (
                np.asarray(spec.terminal_ineq_jac(states[self.n]), dtype=float)
                @ sens[self.n]
            )
            at += self.k_term
        if self.variable:
            n = float(self.n)
            jac[at, -2:] = (-n, -n * n)
            jac[at + 1, -2:] = (n, n * n)
            jac[at + 2, -2] = -1.0
            jac[at + 3, -1] = -1.0
        return jac

    # -- bounds -------------------------------------------------------------
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.tile(self.spec.u_lower, self.n)
        hi = np.tile(self.spec.u_upper, self.n)
        if self.variable:
            lo = np.concatenate([lo, self.beta_lower])
            hi = np.concatenate([hi, self.beta_upper])
        return lo, hi


def assemble(
    spec: OcpSpec,
    x_now: np.ndarray,
    t_now: float,
    frozen_beta: np.ndarray | None = None,
    beta_bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> NlpProblem:
    """Build the NLP for one horizon starting at (x_now, t_now).

    With frozen_beta the grid is fixed, the decision vector carries only the
    controls (length m*N) and the warp residual rows are omitted (they would be
    constants). Otherwise z has length m*N + 2 and the inequality stack ends
    with the four warp residuals.

    beta_bounds optionally overrides the default box on (beta1, beta2); the
    default is [EPS_BETA, alpha_hi*T] x [0, alpha_hi*T/N^2] (upper edges are
    implied by the band and monotone widths, so they cut no feasible point).
    """
    if frozen_beta is not None and beta_bounds is not None:
        raise AssemblyError("frozen_beta and beta_bounds are mutually exclusive")
    n = spec.n_steps
    if beta_bounds is None:
        beta_lower = np.array([EPS_BETA, 0.0])
        beta_upper = np.array(
            [spec.alpha_hi * spec.t_ref, spec.alpha_hi * spec.t_ref / (n * n)]
        )
    else:
        beta_lower = np.asarray(beta_bounds[0], dtype=float)
        beta_upper = np.asarray(beta_bounds[1], dtype=float)
        if beta_lower.shape != (2,) or beta_upper.shape != (2,):
            raise AssemblyError("beta_bounds must be a pair of length-2 arrays")
    if frozen_beta is not None:
        frozen = np.asarray(frozen_beta, dtype=float)
        if frozen.shape != (2,):
            raise AssemblyError("frozen_beta must have length 2")
        # reject a frozen grid that violates the warp constraints outright
        bad = warp_feasibility_residuals(_warp_params(spec, frozen))
        if np.any(bad > 1e-12):
            raise AssemblyError(
                f"frozen beta {tuple(frozen)} violates the warp constraints"
            )
    core = _Transcription(
        spec,
        x_now,
        t_now,
        None if frozen_beta is None else np.asarray(frozen_beta, dtype=float),
        beta_lower,
        beta_upper,
    )
    lo, hi = core.bounds()
    analytic = core.has_analytic()
    return NlpProblem(
        dim=core.dim,
        objective=core.objective,
        gradient=core.gradient if analytic else None,
        ineq=core.ineq if core.n_ineq else None,
        ineq_jac=core.ineq_jac if (analytic and core.n_ineq) else None,
        lower=lo,
        upper=hi,
    )


def objective_average(
    spec: OcpSpec, z: np.ndarray, x_now: np.ndarray, t_now: float
) -> float:
    """Average-rate objective at z: integrated stage cost / total warped length.

    Strict form of the assembled objective: raises HorizonGuardError when the
    total warped length falls below 0.5*alpha_lo*T instead of clamping the
    denominator. Agrees with the assembled objective everywhere the guard
    passes.
    """
    core = _Transcription(
        spec,
        x_now,
        t_now,
        None,
        np.array([EPS_BETA, 0.0]),
        np.array([np.inf, np.inf]),
    )
    z = np.asarray(z, dtype=float)
    if z.shape != (core.dim,):
        raise ValueError(f"z must have shape ({core.dim},), got {z.shape}")
    total, w_end = core.running_cost(z)
    if w_end < core.guard:
        raise HorizonGuardError(
            f"total warped length {w_end} is below the guard {core.guard}"
        )
    if not spec.average_cost:
        return total
    return total / w_end
