"""Augmented-Lagrangian solver for smooth NLPs with box bounds.

Problems carry a smooth objective, optional inequality (g(z) <= 0) and equality
(h(z) = 0) constraint stacks, and box bounds. The outer loop updates
multipliers and a penalty on the constraint stacks; each outer iteration runs a
projected quasi-Newton descent (L-BFGS-B) on the augmented merit over the box.
Everything is deterministic: no randomness, no wall-clock dependence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.optimize import Bounds, lsq_linear, minimize

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible_detected"


class FiniteDifferenceError(ArithmeticError):
    """A finite-difference probe hit a non-finite function value."""


class _NonFiniteEval(Exception):
    """Internal: objective or constraints returned a non-finite value."""

    def __init__(self, z: np.ndarray, what: str):
        super().__init__(what)
        self.z = z
        self.what = what


@dataclass
class NlpProblem:
    """Smooth NLP: minimize objective(z) s.t. ineq(z) <= 0, eq(z) = 0, box.

    Parameters
    ----------
    dim : int
        Decision-vector length.
    objective : callable
        z -> float.
    gradient : callable, optional
        z -> (dim,) array. When omitted the solver differentiates the merit
        internally with central finite differences.
    ineq, ineq_jac : callable, optional
        Inequality stack z -> (k,) and its Jacobian z -> (k, dim).
    eq, eq_jac : callable, optional
        Equality stack z -> (l,) and its Jacobian z -> (l, dim).
    lower, upper : array, optional
        Box bounds, shape (dim,). Missing sides default to -inf/+inf.

    Analytic derivatives are used only when every required piece is present
    (gradient plus the Jacobian of each supplied constraint stack).
    """

    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        for name in ("lower", "upper"):
            b = getattr(self, name)
            if b is not None:
                b = np.asarray(b, dtype=float)
                if b.shape != (self.dim,):
                    raise ValueError(
                        f"{name} bounds must have shape ({self.dim},), got {b.shape}"
                    )
                object.__setattr__(self, name, b)
        lo, hi = self.box()
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound somewhere")

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.lower if self.lower is not None else np.full(self.dim, -np.inf)
        hi = self.upper if self.upper is not None else np.full(self.dim, np.inf)
        return lo, hi

    def has_analytic(self) -> bool:
        if self.gradient is None:
            return False
        if self.ineq is not None and self.ineq_jac is None:
            return False
        if self.eq is not None and self.eq_jac is None:
            return False
        return True


@dataclass
class SolveOptions:
    tol_feas: float = 1e-6       # max constraint violation at convergence
    tol_stat: float = 1e-5       # projected-gradient norm at convergence
    max_outer: int = 50
    max_inner: int = 200         # projected quasi-Newton iterations per outer pass
    fd_step: float = 1e-6        # relative central-difference step
    # a weak initial penalty lets the first inner pass trade constraint
    # violation for objective and the later passes pay to undo it; starting
    # near the scale where violations cost as much as the objective gains
    # keeps a near-feasible warm start near-feasible
    penalty0: float = 1e3
    penalty_growth: float = 10.0
    # beyond ~1e6 the merit valley is narrower than double precision can
    # line-search; multiplier updates, not brute penalty, close the last
    # digits of feasibility
    penalty_max: float = 1e6
    keep_trace: bool = False


@dataclass
class TraceRecord:
    iteration: int
    merit_start: float
    merit: float
    violation: float
    stationarity: float
    penalty: float


@dataclass
class SolveResult:
    z: np.ndarray
    f: float
    max_violation: float
    stationarity: float
    iterations: int              # outer iterations
    inner_iterations: int        # total quasi-Newton iterations
    status: str
    trace: List[TraceRecord] = field(default_factory=list)
    mult_ineq: Optional[np.ndarray] = None
    mult_eq: Optional[np.ndarray] = None
    penalty_final: float = 0.0


def finite_diff_gradient(
    fun: Callable[[np.ndarray], float], z: np.ndarray, h_rel: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient with per-coordinate step h_rel*max(1, |z_i|)."""
    z = np.asarray(z, dtype=float)
    grad = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        step = h_rel * max(1.0, abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += step
        zm[i] -= step
        fp, fm = fun(zp), fun(zm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FiniteDifferenceError(
                f"non-finite value while probing coordinate {i}"
            )
        grad[i] = (fp - fm) / (2.0 * step)
    return grad


def _max_violation(g: np.ndarray, h: np.ndarray) -> float:
    v = 0.0
    if g.size:
        v = max(v, float(np.max(g)))
    if h.size:
        v = max(v, float(np.max(np.abs(h))))
    return max(v, 0.0)


def _projected_backtrack(fused, zeta, lo_s, hi_s, max_steps: int = 25):
    """Armijo projected-gradient descent; rescues aborted line searches."""
    val, grad = fused(zeta)
    taken = 0
    for _ in range(max_steps):
        moved = False
        step = 1.0
        for _ in range(40):
            cand = np.clip(zeta - step * grad, lo_s, hi_s)
            direction = cand - zeta
            if not np.any(direction):
                break
            cval, cgrad = fused(cand)
            if cval <= val + 1e-4 * float(grad @ direction):
                zeta, val, grad = cand, cval, cgrad
                moved = True
                taken += 1
                break
            step *= 0.25
        if not moved:
            break
    return zeta, taken


def solve(
    problem: NlpProblem,
    z0: np.ndarray,
    options: SolveOptions | None = None,
    mult_ineq0: np.ndarray | None = None,
    mult_eq0: np.ndarray | None = None,
) -> SolveResult:
    """Solve the NLP from z0 (projected into the box if outside).

    Returns a SolveResult whose status is one of
    ``converged`` (max_violation <= tol_feas and projected-gradient norm of the
    Lagrangian <= tol_stat), ``max_iter`` (outer budget exhausted; best iterate
    returned), or ``infeasible_detected`` (non-finite evaluation at a visited
    point, or the penalty saturated with no feasibility progress). Never raises
    on non-finite evaluations.

    Multiplier warm starts (mult_ineq0 / mult_eq0) change the iteration count
    only, not the limit point.
    """
    opts = options or SolveOptions()
    lo, hi = problem.box()
    z = np.clip(np.asarray(z0, dtype=float), lo, hi)
    if z.shape != (problem.dim,):
        raise ValueError(f"z0 must have shape ({problem.dim},), got {z.shape}")

    # Diagonal variable scaling from box widths. Decision vectors mixing
    # units (hundreds of MW next to hundredths of an hour) give the merit a
    # badly anisotropic landscape that breaks quasi-Newton line searches;
    # the inner solver works on z/dscale and results map back exactly.
    width = hi - lo
    dscale = np.where(np.isfinite(width) & (width > 0.0), width, 1.0)
    lo_s = lo / dscale
    hi_s = hi / dscale

    def eval_ineq(zz: np.ndarray) -> np.ndarray:
        if problem.ineq is None:
            return np.empty(0)
        g = np.atleast_1d(np.asarray(problem.ineq(zz), dtype=float))
        if not np.all(np.isfinite(g)):
            raise _NonFiniteEval(zz.copy(), "inequality stack")
        return g

    def eval_eq(zz: np.ndarray) -> np.ndarray:
        if problem.eq is None:
            return np.empty(0)
        h = np.atleast_1d(np.asarray(problem.eq(zz), dtype=float))
        if not np.all(np.isfinite(h)):
            raise _NonFiniteEval(zz.copy(), "equality stack")
        return h

    def eval_f(zz: np.ndarray) -> float:
        f = float(problem.objective(zz))
        if not np.isfinite(f):
            raise _NonFiniteEval(zz.copy(), "objective")
        return f

    analytic = problem.has_analytic()

    # Constraint rows whose gradients span orders of magnitude make a single
    # penalty meaningless: the stiff rows get over-squeezed long before the
    # loose ones move. The augmented terms therefore act on row-equilibrated
    # residuals (gradient norms measured in the scaled coordinates, scaled
    # down to at most 1) with matching internal multipliers. Everything
    # reported or tested against a tolerance stays in native units.
    rowscale_g = np.empty(0)
    rowscale_h = np.empty(0)

    def merit_and_grad(zz: np.ndarray, lam_g, lam_h, rho) -> tuple[float, np.ndarray]:
        f = eval_f(zz)
        g = eval_ineq(zz)
        h = eval_eq(zz)
        val = f
        if g.size:
            gs = rowscale_g * g
            shifted = np.maximum(0.0, lam_g + rho * gs)
            val += float(np.sum(shifted**2 - lam_g**2)) / (2.0 * rho)
        if h.size:
            hs = rowscale_h * h
            val += float(lam_h @ hs) + 0.5 * rho * float(hs @ hs)
        if analytic:
            grad = np.asarray(problem.gradient(zz), dtype=float).copy()
            if g.size:
                jg = np.asarray(problem.ineq_jac(zz), dtype=float)
                grad += jg.T @ (rowscale_g * shifted)
            if h.size:
                jh = np.asarray(problem.eq_jac(zz), dtype=float)
                grad += jh.T @ (rowscale_h * (lam_h + rho * hs))
            if not np.all(np.isfinite(grad)):
                raise _NonFiniteEval(zz.copy(), "gradient")
        else:
            def scalar(zp: np.ndarray) -> float:
                fv = eval_f(zp)
                gv = eval_ineq(zp)
                hv = eval_eq(zp)
                out = fv
                if gv.size:
                    gvs = rowscale_g * gv
                    sh = np.maximum(0.0, lam_g + rho * gvs)
                    out += float(np.sum(sh**2 - lam_g**2)) / (2.0 * rho)
                if hv.size:
                    hvs = rowscale_h * hv
                    out += float(lam_h @ hvs) + 0.5 * rho * float(hvs @ hvs)
                return out

            grad = finite_diff_gradient(scalar, zz, opts.fd_step)
        return val, grad

    def lagrangian_stationarity(zz, lam_g_hat, lam_h_hat) -> float:
        # ||z - P_box(z - grad L)||_inf with the given multiplier estimates
        if analytic:
            grad = np.asarray(problem.gradient(zz), dtype=float).copy()
            if lam_g_hat.size:
                grad += np.asarray(problem.ineq_jac(zz), dtype=float).T @ lam_g_hat
            if lam_h_hat.size:
                grad += np.asarray(problem.eq_jac(zz), dtype=float).T @ lam_h_hat
        else:
            def scalar(zp: np.ndarray) -> float:
                out = eval_f(zp)
                gv = eval_ineq(zp)
                hv = eval_eq(zp)
                if gv.size:
                    out += float(lam_g_hat @ gv)
                if hv.size:
                    out += float(lam_h_hat @ hv)
                return out

            grad = finite_diff_gradient(scalar, zz, opts.fd_step)
        projected = zz - np.clip(zz - grad, lo, hi)
        return float(np.max(np.abs(projected))) if projected.size else 0.0

    def certified_stationarity(zz, g, h, lam_g_hat, lam_h_hat, viol) -> float:
        """Stationarity with the best multiplier certificate available.

        First-order AL estimates drive the iteration, but as a KKT
        certificate they are far too coarse when constraint columns span
        orders of magnitude; re-estimating multipliers for the near-active
        rows by bounded least squares tests the iterate itself rather than
        the multiplier accuracy.
        """
        stat_al = lagrangian_stationarity(zz, lam_g_hat, lam_h_hat)
        if not analytic or stat_al <= opts.tol_stat:
            return stat_al
        if viol > 10.0 * opts.tol_feas:
            # an infeasible iterate cannot pass the convergence test no
            # matter what stationarity says; save the least-squares fit
            # for iterates that are actually candidates
            return stat_al
        grad_f = np.asarray(problem.gradient(zz), dtype=float)
        interior = (zz > lo + 1e-10 * dscale) & (zz < hi - 1e-10 * dscale)
        if not np.any(interior):
            return stat_al
        blocks = []
        lo_mult: list[float] = []
        act_idx = np.empty(0, dtype=int)
        jac_g = None
        if g.size:
            act_tol = max(10.0 * opts.tol_feas, 100.0 * float(np.max(g, initial=0.0)))
            act_idx = np.where(g >= -act_tol)[0]
            if act_idx.size:
                jac_g = np.asarray(problem.ineq_jac(zz), dtype=float)
                blocks.append(jac_g[act_idx])
                lo_mult += [0.0] * act_idx.size
        jac_h = None
        if h.size:
            jac_h = np.asarray(problem.eq_jac(zz), dtype=float)
            blocks.append(jac_h)
            lo_mult += [-np.inf] * h.size
        if not blocks:
            return stat_al
        a_mat = np.vstack(blocks)[:, interior].T
        lower = np.asarray(lo_mult)
        upper = np.full(lower.shape, np.inf)
        try:
            with np.errstate(all="ignore"):
                fit = lsq_linear(a_mat, -grad_f[interior], bounds=(lower, upper))
        except (ValueError, np.linalg.LinAlgError):
            return stat_al
        if not np.all(np.isfinite(fit.x)):
            return stat_al
        grad = grad_f.copy()
        k_act = act_idx.size
        if k_act:
            lam_fit = np.zeros(g.shape[0])
            lam_fit[act_idx] = np.maximum(fit.x[:k_act], 0.0)
            grad = grad + jac_g.T @ lam_fit
        if h.size:
            grad = grad + jac_h.T @ fit.x[k_act:]
        projected = zz - np.clip(zz - grad, lo, hi)
        stat_fit = float(np.max(np.abs(projected))) if projected.size else 0.0
        return min(stat_al, stat_fit)

    # curvature model of the smooth part (objective plus multiplier-weighted
    # constraints), shared across the outer iterations of one solve
    bfgs_state: dict = {"B": None}

    def inner_newton(z_start, lam_g, lam_h, rho, omega) -> tuple[np.ndarray, int]:
        """Projected quasi-Newton descent on the merit over the box.

        The merit Hessian splits into rho * J_act^T J_act (exact, from the
        analytic Jacobians) plus the curvature of the smooth part, which a
        damped BFGS model tracks. First-order methods need thousands of
        iterations on these penalty landscapes; this needs a handful.
        """
        zeta = np.clip(z_start / dscale, lo_s, hi_s)

        def value_at(zeta_):
            zz = zeta_ * dscale
            val = eval_f(zz)
            g_ = eval_ineq(zz)
            h_ = eval_eq(zz)
            if g_.size:
                sh = np.maximum(0.0, lam_g + rho * (rowscale_g * g_))
                val += float(np.sum(sh**2 - lam_g**2)) / (2.0 * rho)
            if h_.size:
                hs = rowscale_h * h_
                val += float(lam_h @ hs) + 0.5 * rho * float(hs @ hs)
            return val

        def full_at(zeta_):
            zz = zeta_ * dscale
            val = eval_f(zz)
            g_ = eval_ineq(zz)
            h_ = eval_eq(zz)
            grad_f = np.asarray(problem.gradient(zz), dtype=float) * dscale
            grad = grad_f.copy()
            jg_s = None
            jh_s = None
            sh = np.empty(0)
            wh = np.empty(0)
            if g_.size:
                gs = rowscale_g * g_
                sh = np.maximum(0.0, lam_g + rho * gs)
                val += float(np.sum(sh**2 - lam_g**2)) / (2.0 * rho)
                jg_s = (
                    np.asarray(problem.ineq_jac(zz), dtype=float)
                    * dscale
                    * rowscale_g[:, None]
                )
                grad += jg_s.T @ sh
            if h_.size:
                hs = rowscale_h * h_
                val += float(lam_h @ hs) + 0.5 * rho * float(hs @ hs)
                wh = lam_h + rho * hs
                jh_s = (
                    np.asarray(problem.eq_jac(zz), dtype=float)
                    * dscale
                    * rowscale_h[:, None]
                )
                grad += jh_s.T @ wh
            if not np.all(np.isfinite(grad)):
                raise _NonFiniteEval(zz.copy(), "gradient")
            return val, grad, grad_f, jg_s, sh, jh_s, wh

        val, grad, grad_f, jg_s, sh, jh_s, wh = full_at(zeta)
        B = bfgs_state["B"]
        if B is None or not np.all(np.isfinite(B)) or (
            float(np.trace(B)) > 1e10 * problem.dim
        ):
            B = np.eye(problem.dim)
        nit = 0
        flat = 0
        for _ in range(opts.max_inner):
            pg = zeta - np.clip(zeta - grad, lo_s, hi_s)
            if float(np.max(np.abs(pg), initial=0.0)) <= omega:
                break
            hess = B.copy()
            if jg_s is not None and np.any(sh > 0.0):
                ja = jg_s[sh > 0.0]
                hess += rho * (ja.T @ ja)
            if jh_s is not None and jh_s.size:
                hess += rho * (jh_s.T @ jh_s)
            at_lo = (zeta <= lo_s + 1e-12) & (grad > 0.0)
            at_hi = (zeta >= hi_s - 1e-12) & (grad < 0.0)
            free = ~(at_lo | at_hi)
            p = np.zeros(problem.dim)
            ridge = 0.0
            repaired = False
            if np.any(free):
                gf = grad[free]
                base = 1e-8 * max(1.0, float(np.trace(hess)) / hess.shape[0])
                for _ in range(8):
                    hff = hess[np.ix_(free, free)]
                    try:
                        c = np.linalg.cholesky(
                            hff + ridge * np.eye(hff.shape[0])
                        )
                        p[free] = np.linalg.solve(
                            c.T, np.linalg.solve(c, -gf)
                        )
                        break
                    except np.linalg.LinAlgError:
                        if not repaired:
                            # the quasi-Newton block has drifted indefinite;
                            # clip its spectrum instead of drowning the whole
                            # system in a ridge
                            ew, ev = np.linalg.eigh(B)
                            ew = np.clip(ew, 1e-8 * max(ew[-1], 1.0), None)
                            B = (ev * ew) @ ev.T
                            repaired = True
                            hess = B.copy()
                            if jg_s is not None and np.any(sh > 0.0):
                                ja = jg_s[sh > 0.0]
                                hess += rho * (ja.T @ ja)
                            if jh_s is not None and jh_s.size:
                                hess += rho * (jh_s.T @ jh_s)
                        else:
                            ridge = base if ridge == 0.0 else ridge * 100.0
                else:
                    p[free] = -gf
            accepted = False
            alpha = 1.0
            for _ in range(30):
                cand = np.clip(zeta + alpha * p, lo_s, hi_s)
                d = cand - zeta
                if not np.any(d):
                    break
                slope = float(grad @ d)
                shrink = 0.5
                if slope < 0.0:
                    cval = value_at(cand)
                    if cval <= val + 1e-4 * slope:
                        accepted = True
                        break
                    # quadratic fit through (val, slope, cval) along the
                    # projected segment; far fewer trials than plain halving
                    denom = cval - val - slope
                    if denom > 0.0:
                        shrink = min(0.5, max(0.1, -0.5 * slope / denom))
                alpha *= shrink
            if not accepted:
                # Newton direction failed; one projected-gradient rescue
                alpha = 1.0
                for _ in range(40):
                    cand = np.clip(zeta - alpha * grad, lo_s, hi_s)
                    d = cand - zeta
                    if not np.any(d):
                        break
                    slope = float(grad @ d)
                    shrink = 0.25
                    if slope < 0.0:
                        cval = value_at(cand)
                        if cval <= val + 1e-4 * slope:
                            accepted = True
                            break
                        denom = cval - val - slope
                        if denom > 0.0:
                            shrink = min(0.5, max(0.05, -0.5 * slope / denom))
                    alpha *= shrink
            if not accepted:
                break
            nit += 1
            nval, ngrad, ngrad_f, njg, nsh, njh, nwh = full_at(cand)
            # once accepted decreases drop below double-precision resolution
            # of the merit value, further iterations only burn evaluations
            if val - nval <= 1e-13 * max(1.0, abs(val)):
                flat += 1
                if flat >= 3:
                    zeta = cand
                    break
            else:
                flat = 0
            s = cand - zeta
            # Fixed-weight Lagrangian difference: the curvature the rho J^T J
            # term cannot see (constraint second derivatives times the shifted
            # multipliers). Weights are held at their new values so the pair
            # measures geometry, not the weight change.
            yv = ngrad_f - grad_f
            if jg_s is not None and nsh.size:
                yv += njg.T @ nsh - jg_s.T @ nsh
            if jh_s is not None and nwh.size:
                yv += njh.T @ nwh - jh_s.T @ nwh
            bs = B @ s
            sbs = float(s @ bs)
            sy = float(s @ yv)
            if sbs > 0.0:
                # Powell damping keeps the model positive definite
                if sy < 0.2 * sbs:
                    theta = 0.8 * sbs / (sbs - sy)
                    yv = theta * yv + (1.0 - theta) * bs
                    sy = float(s @ yv)
                # a pair straddling an active-set kink at large rho would
                # inject a phantom eigenvalue of y.y/s.y into the model, and
                # a full-memory B never forgets it; drop such pairs
                if sy > 1e-12 and float(yv @ yv) / sy <= 1e9:
                    B = B - np.outer(bs, bs) / sbs + np.outer(yv, yv) / sy
                    if not np.all(np.isfinite(B)):
                        B = np.eye(problem.dim)
            zeta, val, grad, grad_f = cand, nval, ngrad, ngrad_f
            jg_s, sh, jh_s, wh = njg, nsh, njh, nwh
        bfgs_state["B"] = B
        return np.clip(zeta * dscale, lo, hi), nit

    def inner_solve(z_start, lam_g, lam_h, rho, omega) -> tuple[np.ndarray, int]:
        if analytic:
            return inner_newton(z_start, lam_g, lam_h, rho, omega)

        def fused(zeta: np.ndarray) -> tuple[float, np.ndarray]:
            val, grad = merit_and_grad(zeta * dscale, lam_g, lam_h, rho)
            return val, grad * dscale

        lbfgsb_options = {
            "maxiter": opts.max_inner,
            "maxfun": 50 * opts.max_inner,
            "ftol": 1e-18,
            "gtol": float(omega),
            # small problems afford full-memory corrections, which matters
            # on the stiff merit landscapes large penalties produce
            "maxcor": int(max(10, min(problem.dim + 2, 64))),
        }
        res = minimize(
            fused, z_start / dscale, method="L-BFGS-B", jac=True,
            bounds=Bounds(lo_s, hi_s), options=lbfgsb_options,
        )
        nit = int(res.nit)
        zeta = np.clip(np.asarray(res.x, dtype=float), lo_s, hi_s)
        if res.status == 2:
            # aborted line search; sidestep the wedge point with projected
            # backtracking descent, then hand back to the quasi-Newton loop
            zeta, extra = _projected_backtrack(fused, zeta, lo_s, hi_s)
            nit += extra
            if extra:
                res = minimize(
                    fused, zeta, method="L-BFGS-B", jac=True,
                    bounds=Bounds(lo_s, hi_s), options=lbfgsb_options,
                )
                nit += int(res.nit)
                zeta = np.clip(np.asarray(res.x, dtype=float), lo_s, hi_s)
        return np.clip(zeta * dscale, lo, hi), nit

    trace: List[TraceRecord] = []
    inner_total = 0
    rho = opts.penalty0
    try:
        g = eval_ineq(z)
        h = eval_eq(z)
        rowscale_g = np.ones(g.shape[0])
        rowscale_h = np.ones(h.shape[0])
        if analytic:
            # square root: full equilibration starves the stiff rows of
            # feasibility pressure, none leaves the merit a canyon
            if g.size:
                jg0 = np.atleast_2d(np.asarray(problem.ineq_jac(z), dtype=float))
                rowscale_g = 1.0 / np.sqrt(
                    np.maximum(1.0, np.max(np.abs(jg0 * dscale), axis=1, initial=0.0))
                )
            if h.size:
                jh0 = np.atleast_2d(np.asarray(problem.eq_jac(z), dtype=float))
                rowscale_h = 1.0 / np.sqrt(
                    np.maximum(1.0, np.max(np.abs(jh0 * dscale), axis=1, initial=0.0))
                )
        # multiplier warm starts arrive in native units; iterate on the
        # equilibrated ones so lam_hat + rho*g_hat stays balanced across rows
        lam_g = (
            np.zeros(g.shape[0])
            if mult_ineq0 is None
            else np.asarray(mult_ineq0, dtype=float).copy()
        )
        lam_h = (
            np.zeros(h.shape[0])
            if mult_eq0 is None
            else np.asarray(mult_eq0, dtype=float).copy()
        )
        if lam_g.shape != g.shape or lam_h.shape != h.shape:
            raise ValueError("multiplier warm start has the wrong shape")
        lam_g = np.maximum(lam_g, 0.0) / rowscale_g
        lam_h = lam_h / rowscale_h

        has_constraints = bool(g.size or h.size)
        omega_floor = opts.tol_stat / 10.0 * min(1.0, float(np.min(dscale)))
        omega = max(1.0 / rho, omega_floor)
        eta = max(1.0 / rho**0.1, opts.tol_feas)
        stalled = 0
        prev_viol = np.inf
        outer = 0

        for outer in range(1, opts.max_outer + 1):
            merit_start, _ = merit_and_grad(z, lam_g, lam_h, rho)
            z, nit = inner_solve(z, lam_g, lam_h, rho, omega)
            inner_total += nit
            merit_end, _ = merit_and_grad(z, lam_g, lam_h, rho)

            g = eval_ineq(z)
            h = eval_eq(z)
            viol = _max_violation(g, h)
            lam_g_hat = (
                np.maximum(0.0, lam_g + rho * (rowscale_g * g)) if g.size else lam_g
            )
            lam_h_hat = lam_h + rho * (rowscale_h * h) if h.size else lam_h
            stat = certified_stationarity(
                z, g, h, rowscale_g * lam_g_hat, rowscale_h * lam_h_hat, viol
            )
            if opts.keep_trace:
                trace.append(
                    TraceRecord(outer, merit_start, merit_end, viol, stat, rho)
                )

            if viol <= opts.tol_feas and stat <= opts.tol_stat:
                return SolveResult(
                    z, eval_f(z), viol, stat, outer, inner_total,
                    STATUS_CONVERGED, trace,
                    rowscale_g * lam_g_hat, rowscale_h * lam_h_hat, rho,
                )

            if not has_constraints:
                # pure box problem: only stationarity matters, keep polishing
                omega = max(omega / 10.0, omega_floor)
                continue

            # a multiplier update is only trustworthy when the iterate made
            # real feasibility progress; updating on a stalled violation sends
            # lam chasing rho upward and poisons every later iteration. Once
            # the penalty is capped and the iterate is near-feasible, lam is
            # the only lever left, so let it polish.
            progressed = viol <= max(0.5 * prev_viol, opts.tol_feas) or (
                rho >= opts.penalty_max and viol <= 1e3 * opts.tol_feas
            )
            if viol <= max(eta, opts.tol_feas) and progressed:
                lam_g = np.minimum(lam_g_hat, 1e12)
                lam_h = np.clip(lam_h_hat, -1e12, 1e12)
                eta = max(eta / rho**0.9, opts.tol_feas)
                omega = max(omega / rho, omega_floor)
            else:
                if rho >= opts.penalty_max:
                    stalled += 1
                    if (
                        viol >= 0.5 * prev_viol
                        and stalled >= 3
                        and viol > 1e3 * opts.tol_feas
                    ):
                        return SolveResult(
                            z, eval_f(z), viol, stat, outer, inner_total,
                            STATUS_INFEASIBLE, trace,
                            rowscale_g * lam_g_hat, rowscale_h * lam_h_hat, rho,
                        )
                rho = min(rho * opts.penalty_growth, opts.penalty_max)
                eta = max(1.0 / rho**0.1, opts.tol_feas)
                omega = max(1.0 / rho, omega_floor)
            prev_viol = min(prev_viol, viol)

        g = eval_ineq(z)
        h = eval_eq(z)
        viol = _max_violation(g, h)
        lam_g_hat = (
            np.maximum(0.0, lam_g + rho * (rowscale_g * g)) if g.size else lam_g
        )
        lam_h_hat = lam_h + rho * (rowscale_h * h) if h.size else lam_h
        stat = certified_stationarity(
            z, g, h, rowscale_g * lam_g_hat, rowscale_h * lam_h_hat, viol
        )
        return SolveResult(
            z, eval_f(z), viol, stat, outer, inner_total,
            STATUS_MAX_ITER, trace,
            rowscale_g * lam_g_hat, rowscale_h * lam_h_hat, rho,
        )
    except _NonFiniteEval as bad:
        return SolveResult(
            bad.z, np.nan, np.inf, np.inf, 0, inner_total,
            STATUS_INFEASIBLE, trace, None, None, rho,
        )
