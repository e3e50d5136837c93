"""Battery energy storage scheduling for a wind farm.

A battery of capacity q_c [MWh] sits behind a wind farm with nameplate power
q_n [MW]. Every period the operator commits a power schedule u [MW]; selling
earns alpha1 per MWh, shortfalls against the commitment beyond what the battery
can discharge are penalized (reserve: against the forecast; dispatch: against
the realized wind), and changing the commitment costs alpha4 per MW of ramp.
State of charge x lives in [0, 1] with an operating band [soc_min, soc_max].

The predicted stage cost smooths the plus-part and absolute-value kinks so the
horizon problem is C1; exact-kink variants are kept for verification and for
the realized (simulation) accounting.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Optional
from dataclasses import dataclass

import numpy as np

from .discretize import DynamicsModel
from .ocp import OcpSpec, PathPartials, StagePartials

# shared smoothing constant inside sqrt for the plus-part and abs smoothers
SMOOTH_EPS = 0.01


class PowerLimitDomainError(ValueError):
    """State of charge outside [0, 1]."""


@dataclass(frozen=True)
class BessParams:
    """Plant and market constants.

    q_n     nameplate power bound [MW] (also the schedule's upper box)
    q_c     storage capacity [MWh]
    alpha1  energy price, alpha2 reserve-shortfall price,
    alpha3  dispatch-shortfall price, alpha4 ramp price
    n_steps, t_ref, alpha_lo, alpha_hi   horizon geometry (steps, reference
            length [h], and the allowed total-length band multipliers)
    """

    q_n: float = 400.0
    q_c: float = 400.0
    soc_min: float = 0.3
    soc_max: float = 0.9
    alpha1: float = 1.0
    alpha2: float = 1.03
    alpha3: float = 1.0
    alpha4: float = 0.5455
    n_steps: int = 10
    t_ref: float = 1.0
    alpha_lo: float = 1.0
    alpha_hi: float = 4.0
    x0: float = 0.4

    def __post_init__(self) -> None:
        if self.q_n <= 0.0 or self.q_c <= 0.0:
            raise ValueError("q_n and q_c must be positive")
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError(
                f"need 0 <= soc_min < soc_max <= 1, got ({self.soc_min}, {self.soc_max})"
            )
        if not 0.0 <= self.x0 <= 1.0:
            raise ValueError(f"x0 must lie in [0, 1], got {self.x0}")
        if min(self.alpha1, self.alpha2, self.alpha3, self.alpha4) < 0.0:
            raise ValueError("prices must be nonnegative")


# ---------------------------------------------------------------------------
# smoothers

def smooth_plus(x: float) -> float:
    """C-infinity overestimate of max(x, 0); gap peaks at 0.05 at x = 0."""
    return 0.5 * (x + math.sqrt(x * x + SMOOTH_EPS))


def smooth_plus_slope(x: float) -> float:
    return 0.5 * (1.0 + x / math.sqrt(x * x + SMOOTH_EPS))


def smooth_abs(x: float) -> float:
    """C-infinity overestimate of |x|; gap peaks at 0.1 at x = 0."""
    return math.sqrt(x * x + SMOOTH_EPS)


def smooth_abs_slope(x: float) -> float:
    return x / math.sqrt(x * x + SMOOTH_EPS)


# ---------------------------------------------------------------------------
# plant pieces

def soc_derivative(x: float, u: float, w: float, q_c: float) -> float:
    """Rate of change of the state of charge: (w - u) / q_c."""
    return (w - u) / q_c


def _power_limits_unchecked(x: float, q_c: float, q_n: float) -> tuple[float, float]:
    if q_c <= q_n:
        return q_c * x, q_c * (x - 1.0)
    knot_hi = q_n / q_c
    p_hi = q_c * x if x <= knot_hi else q_n
    knot_lo = 1.0 - knot_hi
    p_lo = -q_n if x <= knot_lo else q_c * (x - 1.0)
    return p_hi, p_lo


def _power_limit_slopes(x: float, q_c: float, q_n: float) -> tuple[float, float]:
    if q_c <= q_n:
        return q_c, q_c
    d_hi = q_c if x <= q_n / q_c else 0.0
    d_lo = 0.0 if x <= 1.0 - q_n / q_c else q_c
    return d_hi, d_lo


def _power_limits_v(x: np.ndarray, q_c: float, q_n: float):
    # vector mirror of _power_limits_unchecked, identical branch predicates
    if q_c <= q_n:
        return q_c * x, q_c * (x - 1.0)
    knot_hi = q_n / q_c
    p_hi = np.where(x <= knot_hi, q_c * x, q_n)
    p_lo = np.where(x <= 1.0 - knot_hi, -q_n, q_c * (x - 1.0))
    return p_hi, p_lo


def _power_limit_slopes_v(x: np.ndarray, q_c: float, q_n: float):
    if q_c <= q_n:
        full = np.full(x.shape, q_c)
        return full, full
    d_hi = np.where(x <= q_n / q_c, q_c, 0.0)
    d_lo = np.where(x <= 1.0 - q_n / q_c, 0.0, q_c)
    return d_hi, d_lo


def _smooth_plus_v(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.sqrt(x * x + SMOOTH_EPS))


def _smooth_plus_slope_v(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + x / np.sqrt(x * x + SMOOTH_EPS))


def _smooth_abs_v(x: np.ndarray) -> np.ndarray:
    return np.sqrt(x * x + SMOOTH_EPS)


def _smooth_abs_slope_v(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(x * x + SMOOTH_EPS)


def power_limits(x: float, q_c: float, q_n: float) -> tuple[float, float]:
    """Discharge/charge power envelope (upper, lower) at state of charge x.

    The envelope is capacity-limited near the band edges and nameplate-limited
    in between when q_c > q_n; both branches meet continuously at the knots.
    Raises PowerLimitDomainError outside x in [0, 1].
    """
    if not 0.0 <= x <= 1.0:
        raise PowerLimitDomainError(f"state of charge {x} outside [0, 1]")
    return _power_limits_unchecked(x, q_c, q_n)


# ---------------------------------------------------------------------------
# wind

def _forecast_raw(t: float) -> float:
    return (
        120.0 * math.sin(math.pi * t / 3.0)
        + 100.0 * math.sin(2.0 * math.pi * (t + 2.0) / 3.0 + 0.4)
        + 150.0
    )


def _forecast_raw_rate(t: float) -> float:
    return 120.0 * (math.pi / 3.0) * math.cos(math.pi * t / 3.0) + 100.0 * (
        2.0 * math.pi / 3.0
    ) * math.cos(2.0 * math.pi * (t + 2.0) / 3.0 + 0.4)


# The forecast is a fixed formula (independent of seed and mode), so vector
# evaluations can be memoized by content. Inside one solver line search the
# same time grid is requested hundreds of times. Cached arrays are frozen so
# an accidental in-place write fails loudly instead of corrupting the cache.
_VEC_CACHE: dict[tuple[str, bytes], np.ndarray] = {}


def _vec_cached(kind: str, tt: np.ndarray, compute) -> np.ndarray:
    key = (kind, tt.tobytes())
    hit = _VEC_CACHE.get(key)
    if hit is None:
        hit = compute(tt)
        hit.flags.writeable = False
        if len(_VEC_CACHE) > 512:
            _VEC_CACHE.clear()
        _VEC_CACHE[key] = hit
    return hit


def _forecast_vec(tt: np.ndarray) -> np.ndarray:
    raw = (
        120.0 * np.sin(np.pi * tt / 3.0)
        + 100.0 * np.sin(2.0 * np.pi * (tt + 2.0) / 3.0 + 0.4)
        + 150.0
    )
    return np.maximum(0.0, raw)


def _forecast_rate_vec(tt: np.ndarray) -> np.ndarray:
    raw = (
        120.0 * np.sin(np.pi * tt / 3.0)
        + 100.0 * np.sin(2.0 * np.pi * (tt + 2.0) / 3.0 + 0.4)
        + 150.0
    )
    rate = 120.0 * (np.pi / 3.0) * np.cos(np.pi * tt / 3.0) + 100.0 * (
        2.0 * np.pi / 3.0
    ) * np.cos(2.0 * np.pi * (tt + 2.0) / 3.0 + 0.4)
    return np.where(raw <= 0.0, 0.0, rate)


@dataclass(frozen=True)
class WindModel:
    """Forecast plus an optional per-step Gaussian disturbance on the actual.

    mode is "perfect" (actual == forecast) or "noisy" (one independent draw
    per simulation step, derived from (seed, step index), so the sequence is
    reproducible and randomly accessible). Actual wind is clipped at zero.
    """

    mode: str = "noisy"
    noise_sigma: float = 40.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("perfect", "noisy"):
            raise ValueError(f"mode must be 'perfect' or 'noisy', got {self.mode!r}")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def forecast(self, t):
        """Forecast wind power at absolute time t [h]; nonnegative."""
        if np.ndim(t) == 0:
            return max(0.0, _forecast_raw(float(t)))
        return _vec_cached("f", np.asarray(t, dtype=float), _forecast_vec)

    def forecast_rate(self, t):
        """Time derivative of the (clipped) forecast."""
        if np.ndim(t) == 0:
            t = float(t)
            if _forecast_raw(t) <= 0.0:
                return 0.0
            return _forecast_raw_rate(t)
        return _vec_cached("r", np.asarray(t, dtype=float), _forecast_rate_vec)

    def noise(self, step_index: int) -> float:
        """The Gaussian draw attached to simulation step step_index."""
        ss = np.random.SeedSequence(entropy=(self.seed, int(step_index)))
        gen = np.random.Generator(np.random.PCG64(ss))
        return float(gen.normal(0.0, self.noise_sigma))

    def actual(self, t: float, step_index: int) -> float:
        """Realized wind power for simulation step step_index; nonnegative."""
        wf = self.forecast(t)
        if self.mode == "perfect":
            return float(wf)
        return max(0.0, float(wf) + self.noise(step_index))


def write_wind_trace(path, times, forecast, actual) -> None:
    """Write (time, forecast, actual) rows as comma-separated text."""
    with open(path, "w") as fh:
        fh.write("t,forecast,actual\n")
        for t, wf, wa in zip(times, forecast, actual):
            fh.write(f"{float(t)!r},{float(wf)!r},{float(wa)!r}\n")


def read_wind_trace(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a wind trace written by write_wind_trace; values round-trip exactly."""
    times: list[float] = []
    wf: list[float] = []
    wa: list[float] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "t,forecast,actual":
            raise ValueError(f"unrecognized wind trace header: {header!r}")
        for line in fh:
            a, b, c = line.strip().split(",")
            times.append(float(a))
            wf.append(float(b))
            wa.append(float(c))
    return np.array(times), np.array(wf), np.array(wa)


# ---------------------------------------------------------------------------
# costs

@dataclass(frozen=True)
class CostBreakdown:
    """Realized cost of one step, split by source. total is their sum."""

    revenue: float    # -alpha1 * u (negative when selling)
    reserve: float
    dispatch: float
    ramp: float

    @property
    def total(self) -> float:
        return self.revenue + self.reserve + self.dispatch + self.ramp


def realized_cost(
    u: float, u_prev: float, w_f: float, w_a: float, x: float, params: BessParams
) -> CostBreakdown:
    """Exact-kink accounting cost of one simulation step at true SOC x."""
    p_hi, _ = power_limits(x, params.q_c, params.q_n)
    r = max(u - w_f, 0.0)
    d = max(u - w_a, 0.0)
    return CostBreakdown(
        revenue=-params.alpha1 * u,
        reserve=params.alpha2 * max(r - p_hi, 0.0),
        dispatch=params.alpha3 * max(d - p_hi, 0.0),
        ramp=params.alpha4 * abs(u - u_prev),
    )


def predicted_stage_cost(
    j: int,
    x: float,
    u: float,
    t: float,
    u_prev: float,
    params: BessParams,
    wind: WindModel,
    smooth: bool = True,
    w_f: Optional[float] = None,
) -> float:
    """Horizon stage cost: revenue, forecast-reserve shortfall, ramp.

    The reserve and dispatch prices merge on the forecast shortfall term (the
    horizon knows only the forecast). smooth=True (solver path) replaces the
    plus-part/abs kinks with their sqrt smoothers; smooth=False is the exact
    variant used for verification. w_f short-circuits the forecast lookup when
    the caller already evaluated it for this t.
    """
    p_hi, _ = _power_limits_unchecked(x, params.q_c, params.q_n)
    wf = wind.forecast(t) if w_f is None else w_f
    if smooth:
        r = smooth_plus(u - wf)
        shortfall = smooth_plus(r - p_hi)
        ramp = smooth_abs(u - u_prev)
    else:
        r = max(u - wf, 0.0)
        shortfall = max(r - p_hi, 0.0)
        ramp = abs(u - u_prev)
    return (
        -params.alpha1 * u
        + (params.alpha2 + params.alpha3) * shortfall
        + params.alpha4 * ramp
    )


# ---------------------------------------------------------------------------
# horizon problem builder

def bess_prediction_model(params: BessParams, wind: WindModel) -> DynamicsModel:
    """SOC dynamics against the forecast, with analytic Jacobians."""
    q_c = params.q_c

    def rhs(x, u, t):
        return np.array([(wind.forecast(t) - u[0]) / q_c])

    def dfdx(x, u, t):
        return np.zeros((1, 1))

    def dfdu(x, u, t):
        return np.array([[-1.0 / q_c]])

    def dfdt(x, u, t):
        return np.array([wind.forecast_rate(t) / q_c])

    return DynamicsModel(
        state_dim=1, input_dim=1, rhs=rhs, rhs_jacobians=(dfdx, dfdu, dfdt)
    )


def build_bess_ocp(
    params: BessParams,
    wind: WindModel,
    t_k: float,
    x_k: float,
    u_prev: float,
) -> OcpSpec:
    """Horizon problem at time t_k from measured SOC x_k with ramp context u_prev.

    Path rows per step j (6 rows, fixed order):
      2 SOC-band rows on the successor state (scaled to power-like units),
      2 input-band rows (also present as box bounds),
      2 power-band rows  P_lo(x_j) <= u_j - w_f(t_j) <= P_hi(x_j).
    Plus the four warp rows appended by the assembler. If x_k sits outside the
    SOC band (possible under forecast error), the band is relaxed to include
    x_k so the problem always has a feasible point (u = forecast holds SOC).
    """
    if not 0.0 <= x_k <= 1.0:
        raise ValueError(f"measured SOC {x_k} outside [0, 1]")
    a14 = (params.alpha1, params.alpha2, params.alpha3, params.alpha4)
    alpha1, alpha2, alpha3, alpha4 = a14
    a_merge = alpha2 + alpha3
    q_c, q_n = params.q_c, params.q_n
    lo_band = min(params.soc_min, x_k)
    hi_band = max(params.soc_max, x_k)
    # SOC rows scaled to power-like units so their u-sensitivity is O(1)
    soc_scale = q_c / params.t_ref

    # stage times repeat across the callbacks evaluated at one iterate, so a
    # small memo on the forecast pays for itself many times over per solve
    @lru_cache(maxsize=512)
    def wf_at(t: float) -> float:
        return wind.forecast(t)

    @lru_cache(maxsize=512)
    def wf_rate_at(t: float) -> float:
        return wind.forecast_rate(t)

    def stage_cost(j, x, u, delta, t, ctx):
        prev = ctx.aux["u_prev"] if j == 0 else float(ctx.controls[j - 1, 0])
        return predicted_stage_cost(
            j, float(x[0]), float(u[0]), t, prev, params, wind,
            smooth=True, w_f=wf_at(t),
        )

    def stage_cost_partials(j, x, u, delta, t, ctx):
        prev = ctx.aux["u_prev"] if j == 0 else float(ctx.controls[j - 1, 0])
        xf, uf = float(x[0]), float(u[0])
        wf = wf_at(t)
        p_hi, _ = _power_limits_unchecked(xf, q_c, q_n)
        d_hi, _ = _power_limit_slopes(xf, q_c, q_n)
        r = smooth_plus(uf - wf)
        s_out = smooth_plus_slope(r - p_hi)
        s_in = smooth_plus_slope(uf - wf)
        ramp_slope = smooth_abs_slope(uf - prev)
        wf_rate = wf_rate_at(t)
        return StagePartials(
            dc_dx=np.array([-a_merge * s_out * d_hi]),
            dc_du=np.array([-alpha1 + a_merge * s_out * s_in + alpha4 * ramp_slope]),
            dc_dprev=np.array([-alpha4 * ramp_slope]),
            dc_ddelta=0.0,
            dc_dt=-a_merge * s_out * s_in * wf_rate,
        )

    def path_ineq(j, x, u, delta, t, ctx):
        xf, uf = float(x[0]), float(u[0])
        wf = wf_at(t)
        x_next = xf + delta * (wf - uf) / q_c
        p_hi, p_lo = _power_limits_unchecked(xf, q_c, q_n)
        return np.array(
            [
                (lo_band - x_next) * soc_scale,
                (x_next - hi_band) * soc_scale,
                -uf,
                uf - q_n,
                p_lo - (uf - wf),
                (uf - wf) - p_hi,
            ]
        )

    def path_ineq_partials(j, x, u, delta, t, ctx):
        xf, uf = float(x[0]), float(u[0])
        wf = wf_at(t)
        wf_rate = wf_rate_at(t)
        d_hi, d_lo = _power_limit_slopes(xf, q_c, q_n)
        dxn_du = -delta / q_c
        dxn_ddelta = (wf - uf) / q_c
        dxn_dt = delta * wf_rate / q_c
        s = soc_scale
        dg_dx = np.array([[-s], [s], [0.0], [0.0], [d_lo], [-d_hi]])
        dg_du = np.array(
            [[-s * dxn_du], [s * dxn_du], [-1.0], [1.0], [-1.0], [1.0]]
        )
        dg_ddelta = np.array(
            [-s * dxn_ddelta, s * dxn_ddelta, 0.0, 0.0, 0.0, 0.0]
        )
        dg_dt = np.array([-s * dxn_dt, s * dxn_dt, 0.0, 0.0, wf_rate, -wf_rate])
        return PathPartials(
            dg_dx=dg_dx, dg_du=dg_du, dg_ddelta=dg_ddelta, dg_dt=dg_dt
        )

    # vectorized twins of the callbacks above; same formulas over all stages
    def _prev_vec(us, ctx):
        prev = np.empty_like(us)
        prev[0] = ctx.aux["u_prev"]
        prev[1:] = us[:-1]
        return prev

    def stage_cost_batch(states, u, deltas, times, ctx):
        xs, us = states[:, 0], u[:, 0]
        wf = wind.forecast(times)
        p_hi, _ = _power_limits_v(xs, q_c, q_n)
        shortfall = _smooth_plus_v(_smooth_plus_v(us - wf) - p_hi)
        ramp = _smooth_abs_v(us - _prev_vec(us, ctx))
        return -alpha1 * us + a_merge * shortfall + alpha4 * ramp

    def stage_cost_partials_batch(states, u, deltas, times, ctx):
        xs, us = states[:, 0], u[:, 0]
        wf = wind.forecast(times)
        wf_rate = wind.forecast_rate(times)
        p_hi, _ = _power_limits_v(xs, q_c, q_n)
        d_hi, _ = _power_limit_slopes_v(xs, q_c, q_n)
        r = _smooth_plus_v(us - wf)
        s_out = _smooth_plus_slope_v(r - p_hi)
        s_in = _smooth_plus_slope_v(us - wf)
        ramp_slope = _smooth_abs_slope_v(us - _prev_vec(us, ctx))
        return (
            (-a_merge * s_out * d_hi)[:, None],
            (-alpha1 + a_merge * s_out * s_in + alpha4 * ramp_slope)[:, None],
            (-alpha4 * ramp_slope)[:, None],
            np.zeros(us.shape[0]),
            -a_merge * s_out * s_in * wf_rate,
        )

    def path_ineq_batch(states, u, deltas, times, ctx):
        xs, us = states[:, 0], u[:, 0]
        wf = wind.forecast(times)
        x_next = xs + deltas * (wf - us) / q_c
        p_hi, p_lo = _power_limits_v(xs, q_c, q_n)
        rows = np.empty((us.shape[0], 6))
        rows[:, 0] = (lo_band - x_next) * soc_scale
        rows[:, 1] = (x_next - hi_band) * soc_scale
        rows[:, 2] = -us
        rows[:, 3] = us - q_n
        rows[:, 4] = p_lo - (us - wf)
        rows[:, 5] = (us - wf) - p_hi
        return rows

    def path_ineq_partials_batch(states, u, deltas, times, ctx):
        xs, us = states[:, 0], u[:, 0]
        n_j = us.shape[0]
        wf = wind.forecast(times)
        wf_rate = wind.forecast_rate(times)
        d_hi, d_lo = _power_limit_slopes_v(xs, q_c, q_n)
        dxn_du = -deltas / q_c
        dxn_ddelta = (wf - us) / q_c
        dxn_dt = deltas * wf_rate / q_c
        s = soc_scale
        dg_dx = np.zeros((n_j, 6, 1))
        dg_dx[:, 0, 0] = -s
        dg_dx[:, 1, 0] = s
        dg_dx[:, 4, 0] = d_lo
        dg_dx[:, 5, 0] = -d_hi
        dg_du = np.zeros((n_j, 6, 1))
        dg_du[:, 0, 0] = -s * dxn_du
        dg_du[:, 1, 0] = s * dxn_du
        dg_du[:, 2, 0] = -1.0
        dg_du[:, 3, 0] = 1.0
        dg_du[:, 4, 0] = -1.0
        dg_du[:, 5, 0] = 1.0
        dg_ddelta = np.zeros((n_j, 6))
        dg_ddelta[:, 0] = -s * dxn_ddelta
        dg_ddelta[:, 1] = s * dxn_ddelta
        dg_dt = np.zeros((n_j, 6))
        dg_dt[:, 0] = -s * dxn_dt
        dg_dt[:, 1] = s * dxn_dt
        dg_dt[:, 4] = wf_rate
        dg_dt[:, 5] = -wf_rate
        return dg_dx, dg_du, dg_ddelta, dg_dt

    def u_init(t):
        return np.array([min(max(wf_at(t), 0.0), q_n)])

    def rhs(x, u, t):
        return np.array([(wf_at(t) - u[0]) / q_c])

    def dfdx(x, u, t):
        return np.zeros((1, 1))

    def dfdu(x, u, t):
        return np.array([[-1.0 / q_c]])

    def dfdt(x, u, t):
        return np.array([wf_rate_at(t) / q_c])

    def rhs_jacobians_batch(states, u, times):
        n_j = states.shape[0]
        return (
            np.zeros((n_j, 1, 1)),
            np.full((n_j, 1, 1), -1.0 / q_c),
            (wind.forecast_rate(times) / q_c)[:, None],
        )

    def rollout_batch(x0, u, deltas, times):
        # the rhs never reads the state, so the Euler chain telescopes
        drift = deltas * (wind.forecast(times) - u[:, 0]) / q_c
        states = np.empty((u.shape[0] + 1, 1))
        states[0] = x0
        states[1:, 0] = x0[0] + np.cumsum(drift)
        return states

    model = DynamicsModel(
        state_dim=1,
        input_dim=1,
        rhs=rhs,
        rhs_jacobians=(dfdx, dfdu, dfdt),
        rhs_jacobians_batch=rhs_jacobians_batch,
        rollout_batch=rollout_batch,
    )

    return OcpSpec(
        model=model,
        n_steps=params.n_steps,
        t_ref=params.t_ref,
        alpha_lo=params.alpha_lo,
        alpha_hi=params.alpha_hi,
        stage_cost=stage_cost,
        stage_cost_partials=stage_cost_partials,
        path_ineq=path_ineq,
        path_ineq_partials=path_ineq_partials,
        u_lower=np.array([0.0]),
        u_upper=np.array([q_n]),
        u_init=u_init,
        aux={"u_prev": float(u_prev), "t_k": float(t_k)},
        average_cost=True,
        stage_cost_batch=stage_cost_batch,
        stage_cost_partials_batch=stage_cost_partials_batch,
        path_ineq_batch=path_ineq_batch,
        path_ineq_partials_batch=path_ineq_partials_batch,
    )
