"""Forward-Euler integration of continuous dynamics over a warped grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .timewarp import HorizonGrid

RhsFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
# (dfdx, dfdu, dfdt); dfdt may be None for time-invariant dynamics.
RhsJacobians = Tuple[
    Callable[[np.ndarray, np.ndarray, float], np.ndarray],
    Callable[[np.ndarray, np.ndarray, float], np.ndarray],
    Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]],
]


class IntegrationError(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class DynamicsModel:
    """Continuous-time dynamics xdot = rhs(x, u, t).

    rhs maps a state of shape (state_dim,), an input of shape (input_dim,) and
    an absolute time to a state derivative of shape (state_dim,). Optional
    rhs_jacobians = (dfdx, dfdu, dfdt) return arrays of shapes
    (state_dim, state_dim), (state_dim, input_dim) and (state_dim,); dfdt may
    be None when the dynamics carry no explicit time dependence.
    """

    state_dim: int
    input_dim: int
    rhs: RhsFn
    rhs_jacobians: RhsJacobians | None = None
    # optional vectorized accelerator: (states (N,nx), u (N,m), times (N,))
    # -> (dfdx (N,nx,nx), dfdu (N,nx,m), dfdt (N,nx) or None); must agree
    # with rhs_jacobians, which stays the semantic reference
    rhs_jacobians_batch: Callable | None = None
    # optional closed-form Euler rollout: (x0 (nx,), u (N,m), deltas (N,),
    # times (N,)) -> states (N+1, nx); must reproduce the per-step rollout
    # exactly, models whose rhs ignores the state can do this in one shot
    rollout_batch: Callable | None = None

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError(
                f"dimensions must be >= 1, got ({self.state_dim}, {self.input_dim})"
            )


def euler_step(
    model: DynamicsModel, x: np.ndarray, u: np.ndarray, t: float, delta: float
) -> np.ndarray:
    """One explicit Euler step of width delta from state x at absolute time t."""
    if delta <= 0.0:
        raise ValueError(f"step width must be positive, got {delta}")
    x_next = x + delta * np.asarray(model.rhs(x, u, t), dtype=float)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError(
            f"non-finite state after step from t = {t} with delta = {delta}: {x_next}"
        )
    return x_next


def rollout(
    model: DynamicsModel,
    x0: np.ndarray,
    controls: np.ndarray,
    grid: HorizonGrid,
    t0: float,
) -> np.ndarray:
    """Integrate over all grid steps; returns the (N+1, state_dim) trajectory.

    Step j uses the control row controls[j], the width grid.deltas[j], and the
    absolute time t0 + grid.cumulative[j].
    """
    x0 = np.asarray(x0, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    n = grid.n_steps
    if controls.shape != (n, model.input_dim):
        raise ValueError(
            f"controls must have shape ({n}, {model.input_dim}), got {controls.shape}"
        )
    if x0.shape != (model.state_dim,):
        raise ValueError(
            f"x0 must have shape ({model.state_dim},), got {x0.shape}"
        )
    out = np.empty((n + 1, model.state_dim))
    out[0] = x0
    x = x0
    for j in range(n):
        try:
            x = euler_step(
                model, x, controls[j], t0 + grid.cumulative[j], grid.deltas[j]
            )
        except IntegrationError as exc:
            raise IntegrationError(f"step {j}: {exc}") from exc
        out[j + 1] = x
    return out


def check_rhs_jacobians(
    model: DynamicsModel,
    x: np.ndarray,
    u: np.ndarray,
    t: float,
    h: float = 1e-6,
) -> float:
    """Worst relative mismatch between supplied Jacobians and finite differences.

    Central differences with per-coordinate step h*max(1, |value|). Used by
    tests to enforce the model contract; returns the max over all Jacobian
    entries of |analytic - fd| / max(1, |fd|).
    """
    if model.rhs_jacobians is None:
        raise ValueError("model supplies no Jacobians to check")
    dfdx_fn, dfdu_fn, dfdt_fn = model.rhs_jacobians
    worst = 0.0

    def rel_gap(analytic: np.ndarray, fd: np.ndarray) -> float:
        return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))

    fd_x = np.empty((model.state_dim, model.state_dim))
    for i in range(model.state_dim):
        step = h * max(1.0, abs(float(x[i])))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fd_x[:, i] = (model.rhs(xp, u, t) - model.rhs(xm, u, t)) / (2.0 * step)
    worst = max(worst, rel_gap(np.asarray(dfdx_fn(x, u, t), float), fd_x))

    fd_u = np.empty((model.state_dim, model.input_dim))
    for i in range(model.input_dim):
        step = h * max(1.0, abs(float(u[i])))
        up, um = u.copy(), u.copy()
        up[i] += step
        um[i] -= step
        fd_u[:, i] = (model.rhs(x, up, t) - model.rhs(x, um, t)) / (2.0 * step)
    worst = max(worst, rel_gap(np.asarray(dfdu_fn(x, u, t), float), fd_u))

    if dfdt_fn is not None:
        step = h * max(1.0, abs(t))
        fd_t = (model.rhs(x, u, t + step) - model.rhs(x, u, t - step)) / (2.0 * step)
        worst = max(worst, rel_gap(np.asarray(dfdt_fn(x, u, t), float), fd_t))
    return worst
