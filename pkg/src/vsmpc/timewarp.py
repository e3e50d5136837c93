"""Degree-2 polynomial time warping of a prediction horizon.

The horizon is described by two coefficients (beta1, beta2). Grid node j sits at
warped time beta1*j + beta2*j**2, so step widths grow linearly along the horizon
and the total warped length is constrained to a band around a reference length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor on beta1; keeps every step width strictly positive.
EPS_BETA = 1e-4


class WarpConstraintError(ValueError):
    """A warp parameter set violates its feasibility constraints."""


@dataclass(frozen=True)
class WarpParams:
    """Warp coefficients plus the horizon geometry they must respect.

    beta1, beta2   polynomial coefficients of the warp map
    n_steps        number of prediction steps N
    t_ref          reference horizon length T
    alpha_lo, alpha_hi
                   total warped length must land in [alpha_lo*T, alpha_hi*T]
    """

    beta1: float
    beta2: float
    n_steps: int
    t_ref: float
    alpha_lo: float
    alpha_hi: float

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.t_ref <= 0.0:
            raise ValueError(f"t_ref must be positive, got {self.t_ref}")
        if not 0.0 < self.alpha_lo <= self.alpha_hi:
            raise ValueError(
                f"need 0 < alpha_lo <= alpha_hi, got ({self.alpha_lo}, {self.alpha_hi})"
            )


@dataclass(frozen=True)
class HorizonGrid:
    """Step widths and node times of a warped horizon.

    deltas[j] is the width of step j (length N); cumulative[j] is the warped
    time of node j (length N+1, cumulative[0] == 0).
    """

    deltas: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self) -> None:
        if self.deltas.ndim != 1 or self.cumulative.ndim != 1:
            raise ValueError("grid arrays must be one-dimensional")
        if self.cumulative.shape[0] != self.deltas.shape[0] + 1:
            raise ValueError("cumulative must have one more entry than deltas")
        if self.cumulative[0] != 0.0:
            raise ValueError("cumulative must start at 0")
        if not np.all(self.deltas > 0.0):
            raise ValueError("all step widths must be strictly positive")

    @property
    def n_steps(self) -> int:
        return int(self.deltas.shape[0])

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])


def warp_eval(p: WarpParams, tau: float) -> float:
    """Warped time of grid coordinate tau: beta1*tau + beta2*tau**2."""
    return p.beta1 * tau + p.beta2 * tau * tau


def warp_feasibility_residuals(p: WarpParams) -> np.ndarray:
    """Constraint residuals of a warp parameter set; <= 0 means satisfied.

    Fixed public row order:
      [0] alpha_lo*T - w(N)    (total length above the lower band edge)
      [1] w(N) - alpha_hi*T    (total length below the upper band edge)
      [2] EPS_BETA - beta1     (beta1 floor)
      [3] -beta2               (beta2 nonnegative)
    """
    w_end = warp_eval(p, float(p.n_steps))
    return np.array(
        [
            p.alpha_lo * p.t_ref - w_end,
            w_end - p.alpha_hi * p.t_ref,
            EPS_BETA - p.beta1,
            -p.beta2,
        ]
    )


def warp_intervals(p: WarpParams, tol: float = 0.0) -> HorizonGrid:
    """Build the horizon grid for a feasible warp parameter set.

    Rejects parameter sets whose feasibility residuals exceed tol (default:
    strict). The returned node times come from the warp polynomial itself, so a
    uniform parameterization (beta1 = T/N, beta2 = 0) reproduces the fixed-step
    grid bitwise.
    """
    residuals = warp_feasibility_residuals(p)
    if residuals[2] > tol:
        raise WarpConstraintError(
            f"beta1 = {p.beta1} is below the floor {EPS_BETA}"
        )
    if residuals[3] > tol:
        raise WarpConstraintError(f"beta2 = {p.beta2} must be nonnegative")
    w_end = warp_eval(p, float(p.n_steps))
    if residuals[0] > tol:
        raise WarpConstraintError(
            f"total warped length {w_end} is below the band floor "
            f"{p.alpha_lo * p.t_ref}"
        )
    if residuals[1] > tol:
        raise WarpConstraintError(
            f"total warped length {w_end} exceeds the band ceiling "
            f"{p.alpha_hi * p.t_ref}"
        )
    j = np.arange(p.n_steps, dtype=float)
    deltas = p.beta1 + p.beta2 * (2.0 * j + 1.0)
    nodes = np.arange(p.n_steps + 1, dtype=float)
    cumulative = p.beta1 * nodes + p.beta2 * nodes * nodes
    return HorizonGrid(deltas=deltas, cumulative=cumulative)
