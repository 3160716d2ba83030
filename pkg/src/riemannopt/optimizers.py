"""Geodesic optimizers: steepest descent, Newton's method and the
conjugate gradient iteration, generic over a manifold and an objective,
plus their line-search building blocks (Wolfe-Powell bracketing and
sectioning, curvature-bound steps, closed-form circle maximization).

All optimizers minimize; maximization problems are wrapped with
``objectives.Negated`` at the boundary so there is a single sign
convention inside the iteration loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ArgumentError
from .manifolds import Stiefel
from .objectives import IndefiniteHessianError, SingularShiftError


@dataclass
class LineSearchParams:
    """Wolfe-Powell parameters: Armijo fraction rho, curvature fraction
    sigma, bracket expansion tau1, sectioning margins tau2/tau3."""

    rho: float = 0.01
    sigma: float = 0.1
    tau1: float = 9.0
    tau2: float = 0.1
    tau3: float = 0.5
    max_evals: int = 30

    def __post_init__(self):
        if not 0.0 < self.rho < self.sigma < 1.0:
            raise ArgumentError("need 0 < rho < sigma < 1")
        if self.tau1 <= 1.0:
            raise ArgumentError("need tau1 > 1")
        if not 0.0 < self.tau2 < self.tau3 < 1.0:
            raise ArgumentError("need 0 < tau2 < tau3 < 1")


@dataclass
class StoppingCriteria:
    grad_tol: float = 1e-10
    max_iters: int = 500
    f_tol: float = 0.0  # successive-value change; 0 disables

    def __post_init__(self):
        if self.grad_tol < 0 or self.f_tol < 0 or self.max_iters < 0:
            raise ArgumentError("tolerances must be nonnegative")


@dataclass
class IterateRecord:
    iter: int
    f: float
    grad_norm: float
    step: float
    dist_to_reference: float | None = None


@dataclass
class OptimizeResult:
    point: object
    records: list
    status: str

    @property
    def iterations(self):
        return len(self.records) - 1 if self.records else 0


@dataclass
class LineSearchResult:
    t: float
    phi: float
    dphi: float | None
    status: str  # "ok", "max_evals", "collapsed"
    evals: int


def wolfe_powell_search(phi, dphi, t_trial, params: LineSearchParams,
                        phi0=None, dphi0=None) -> LineSearchResult:
    """Bracketing/sectioning line search enforcing the Armijo and curvature
    conditions on a descent parameterization (dphi(0) < 0).

    Returns the first t with phi(t) <= phi(0) + rho t phi'(0) and
    |phi'(t)| <= -sigma phi'(0); on budget exhaustion the best Armijo
    point seen so far is returned with a ``max_evals`` status.
    """
    phi0 = phi(0.0) if phi0 is None else phi0
    dphi0 = dphi(0.0) if dphi0 is None else dphi0
    if not dphi0 < 0.0:
        raise ArgumentError("wolfe_powell_search needs a descent direction")
    rho, sigma = params.rho, params.sigma
    evals = 0
    best = (0.0, phi0, None)

    def armijo(t, ft):
        return ft <= phi0 + rho * t * dphi0

    def curved(dft):
        return abs(dft) <= -sigma * dphi0

    # bracketing phase
    a, fa, dfa = 0.0, phi0, dphi0
    t = float(t_trial) if t_trial and t_trial > 0 else 1.0
    bracket = None
    while evals < params.max_evals:
        ft = phi(t)
        evals += 1
        if armijo(t, ft) and ft < best[1]:
            best = (t, ft, None)
        if not armijo(t, ft) or ft >= fa:
            bracket = (a, fa, dfa, t, ft)
            break
        dft = dphi(t)
        if curved(dft):
            return LineSearchResult(t, ft, dft, "ok", evals)
        if dft >= 0.0:
            bracket = (t, ft, dft, a, fa)
            break
        a, fa, dfa = t, ft, dft
        t = t * params.tau1
    if bracket is None:
        t, ft, _ = best
        return LineSearchResult(t, ft, None, "max_evals", evals)

    # sectioning phase: a end satisfies Armijo with dfa (b - a) < 0
    a, fa, dfa, b, fb = bracket
    while evals < params.max_evals:
        s = b - a
        lo, hi = a + params.tau2 * s, b - params.tau3 * s
        # quadratic interpolation through (fa, dfa, fb), clamped to [lo, hi]
        c2 = (fb - fa - dfa * s) / (s * s) if s != 0.0 else 0.0
        if c2 > 0.0:
            u = -dfa / (2.0 * c2)
        else:
            u = 0.5 * s
        t = a + np.clip(u, min(params.tau2 * s, (1 - params.tau3) * s),
                        max(params.tau2 * s, (1 - params.tau3) * s))
        if abs(s) <= 1e-14 * (1.0 + abs(a)):
            return LineSearchResult(a, fa, dfa, "collapsed", evals)
        ft = phi(t)
        evals += 1
        if armijo(t, ft) and ft < best[1]:
            best = (t, ft, None)
        if not armijo(t, ft) or ft >= fa:
            b, fb = t, ft
            continue
        dft = dphi(t)
        if curved(dft):
            return LineSearchResult(t, ft, dft, "ok", evals)
        if dft * (b - a) >= 0.0:
            b, fb = a, fa
        a, fa, dfa = t, ft, dft
    t, ft, _ = best
    return LineSearchResult(t, ft, None, "max_evals", evals)


def brockett_step(h, omega, n_diag):
    """Curvature-bound stepsize 2 tr(H Omega N) / (||ad_Omega H|| ||ad_Omega N||)
    along Theta e^{Omega t}; the weighted trace is nondecreasing on [0, t]."""
    n = np.diag(np.asarray(n_diag, dtype=float)) if np.ndim(n_diag) == 1 else n_diag
    slope = 2.0 * float(np.trace(h @ omega @ n))
    if slope <= 0.0:
        raise ArgumentError("not an ascent direction (phi'(0) <= 0)")
    denom = np.linalg.norm(h @ omega - omega @ h) * np.linalg.norm(n @ omega - omega @ n)
    if denom <= 1e-300:
        raise ArgumentError("degenerate curvature bound")
    return slope / denom


def newton_trial_step(slope0, curvature0, grad_norm):
    """Quadratic-model trial step -phi'(0)/phi''(0) for the line search,
    falling back to 1/||G|| when the curvature is unusable."""
    fallback = 1.0 / max(grad_norm, 1e-30) if grad_norm > 0 else 1.0
    if curvature0 is None:
        return fallback
    if abs(curvature0) < 1e-14 * (1.0 + abs(slope0)):
        return 1.0
    t = -slope0 / curvature0
    return t if t > 0.0 else fallback


@dataclass
class CircleStep:
    c: float
    s: float
    status: str  # "ok" or "flat"

    @property
    def angle(self):
        return float(np.arctan2(self.s, self.c))


def rayleigh_exact_step(a, b) -> CircleStep:
    """Closed-form maximizer of rho(x cos t + h sin t) on the great circle,
    from a = 2 x^T Q h and b = x^T Q x - h^T Q h."""
    r = float(np.hypot(a, b))
    if r == 0.0:
        return CircleStep(1.0, 0.0, "flat")
    if b >= 0.0:
        c = np.sqrt(0.5 * (1.0 + b / r))
        s = a / (2.0 * r * c)
    else:
        s = np.sqrt(0.5 * (1.0 - b / r))
        c = a / (2.0 * r * s)
    return CircleStep(float(c), float(s), "ok")


def _distance(manifold, p, reference):
    if reference is None:
        return None
    return manifold.distance(p, reference)


def steepest_descent(manifold, objective, p0, linesearch=None,
                     stop=None, step_rule=None, reference=None) -> OptimizeResult:
    """Gradient descent along geodesics with a Wolfe-Powell (or caller
    supplied) stepsize rule; the objective trace is non-increasing."""
    params = linesearch or LineSearchParams()
    stop = stop or StoppingCriteria()
    p = p0
    f = objective.value(p)
    records = []
    status = "max_iters"
    for it in range(stop.max_iters + 1):
        grad = objective.gradient(p)
        gn = manifold.norm(p, grad)
        records.append(IterateRecord(it, f, gn, 0.0, _distance(manifold, p, reference)))
        if gn <= stop.grad_tol:
            status = "grad_tol"
            break
        if it == stop.max_iters:
            break
        h = -1.0 * grad
        r = objective.line_restriction(p, h)
        slope0 = -gn * gn
        if step_rule is not None:
            t = step_rule(p, h, r)
            ft = r.phi(t)
        else:
            try:
                curv0 = r.curvature0()
            except NotImplementedError:
                curv0 = None
            trial = newton_trial_step(slope0, curv0, gn)
            ls = wolfe_powell_search(r.phi, r.dphi, trial, params,
                                     phi0=f, dphi0=slope0)
            if ls.t == 0.0:
                status = "line_search_failure"
                break
            t, ft = ls.t, ls.phi
        if stop.f_tol > 0.0 and abs(f - ft) <= stop.f_tol * (1.0 + abs(f)):
            p, f = r.point(t), ft
            records[-1].step = t
            status = "f_tol"
            break
        p, f = r.point(t), ft
        records[-1].step = t
    return OptimizeResult(point=p, records=records, status=status)


def newton(manifold, objective, p0, stop=None, reference=None) -> OptimizeResult:
    """Newton's method: step along exp of -(hess)^{-1} grad."""
    stop = stop or StoppingCriteria()
    p = p0
    records = []
    status = "max_iters"
    for it in range(stop.max_iters + 1):
        f = objective.value(p)
        grad = objective.gradient(p)
        gn = manifold.norm(p, grad)
        records.append(IterateRecord(it, f, gn, 0.0, _distance(manifold, p, reference)))
        if gn <= stop.grad_tol:
            status = "grad_tol"
            break
        if it == stop.max_iters:
            break
        try:
            h = objective.newton_solve(p, -1.0 * grad)
        except (IndefiniteHessianError, SingularShiftError) as exc:
            status = f"hessian_failure:{type(exc).__name__}"
            break
        records[-1].step = manifold.norm(p, h)
        p = manifold.exp(p, h, 1.0)
    return OptimizeResult(point=p, records=records, status=status)


class CgDriver:
    """State machine for one conjugate-gradient iteration (the shared core
    of the batch solver and the per-sample subspace tracker).

    Holds the current point, the negative gradient G, the search direction
    H and the step count since the last reset.  ``gamma_mode`` selects the
    conjugacy coefficient: "hessian" uses the second-covariant-differential
    form (the only mode available on the Stiefel manifold, where parallel
    translation of the gradient is impractical), "transported" the
    transported-gradient formula.
    """

    def __init__(self, manifold, objective, p0, linesearch=None,
                 gamma_mode="hessian", reset_period=None):
        if gamma_mode not in ("hessian", "transported"):
            raise ArgumentError(f"unknown gamma_mode {gamma_mode!r}")
        if gamma_mode == "transported" and isinstance(manifold, Stiefel):
            raise ArgumentError(
                "transported-gradient mode is unavailable on the Stiefel "
                "manifold; use gamma_mode='hessian'")
        self.manifold = manifold
        self.objective = objective
        self.params = linesearch or LineSearchParams()
        self.gamma_mode = gamma_mode
        self.reset_period = reset_period or manifold.dim
        self.p = p0
        self.f = objective.value(p0)
        self.grad = objective.gradient(p0)
        self.g = -1.0 * self.grad
        self.h = self.g
        self.since_reset = 0
        self.last_step = 0.0
        self.last_gamma = 0.0
        self.last_tau_h = None

    @property
    def grad_norm(self):
        return self.manifold.norm(self.p, self.g)

    def reset_direction(self):
        self.h = self.g
        self.since_reset = 0

    def rebuild_direction(self):
        """Recombine the current negative gradient with the transported
        previous direction (used after an objective swap that kept the
        conjugacy memory, e.g. a new tracking sample)."""
        if self.last_tau_h is None or self.since_reset == 0:
            self.h = self.g
        else:
            self.h = self.g + self.last_gamma * self.last_tau_h

    def set_objective(self, objective, reset=True):
        """Swap the objective (tracking, resorted weights); gradients are
        recomputed at the current point."""
        self.objective = objective
        self.f = objective.value(self.p)
        self.grad = objective.gradient(self.p)
        self.g = -1.0 * self.grad
        if reset:
            self.reset_direction()

    def step(self):
        """One conjugate-gradient step; returns (accepted stepsize, line
        search status)."""
        gn = self.grad_norm
        slope0 = self.manifold.inner(self.p, self.grad, self.h)
        if not slope0 < 0.0:
            self.reset_direction()
            slope0 = -gn * gn
            if not slope0 < 0.0:
                return 0.0, "zero_gradient"
        r = self.objective.line_restriction(self.p, self.h)
        try:
            curv0 = r.curvature0()
        except NotImplementedError:
            curv0 = None
        trial = newton_trial_step(slope0, curv0, gn)
        ls = wolfe_powell_search(r.phi, r.dphi, trial, self.params,
                                 phi0=self.f, dphi0=slope0)
        if ls.t == 0.0:
            return 0.0, "line_search_failure"
        lam = ls.t
        denom_prev = self.manifold.inner(self.p, self.g, self.h)
        p_new = r.point(lam)
        grad_new = r.gradient(lam)
        g_new = -1.0 * grad_new
        tau_h = r.transported_dir(lam)
        gamma = 0.0
        force_reset = False
        if self.gamma_mode == "hessian":
            num, den = r.hess_pair(lam, g_new)
            if abs(den) < 1e-14 * (1.0 + abs(num)) or not np.isfinite(den):
                force_reset = True
            else:
                gamma = -num / den
        else:
            tau_g = r.transport(lam, self.g)
            if abs(denom_prev) < 1e-14 * (1.0 + self.manifold.norm(p_new, g_new) ** 2):
                force_reset = True
            else:
                gamma = self.manifold.inner(p_new, g_new - tau_g, g_new) / denom_prev
        if not np.isfinite(gamma):
            force_reset = True
        self.p = p_new
        self.f = ls.phi
        self.grad = grad_new
        self.g = g_new
        self.since_reset += 1
        self.last_step = lam
        self.last_gamma = gamma
        self.last_tau_h = tau_h
        if force_reset or self.since_reset >= self.reset_period:
            self.reset_direction()
        else:
            self.h = self.g + gamma * tau_h
        return lam, ls.status


def conjugate_gradient(manifold, objective, p0, linesearch=None,
                       gamma_mode="hessian", reset_period=None, stop=None,
                       reference=None, callback=None) -> OptimizeResult:
    """Conjugate gradient along geodesics (minimization).

    ``callback(driver, iteration)`` runs before each step and may mutate
    the driver (swap objectives, force resets); used by the eigensolver
    sorting policy and the subspace tracker.
    """
    stop = stop or StoppingCriteria()
    driver = CgDriver(manifold, objective, p0, linesearch=linesearch,
                      gamma_mode=gamma_mode, reset_period=reset_period)
    records = []
    status = "max_iters"
    f_prev = driver.f
    for it in range(stop.max_iters + 1):
        if callback is not None:
            callback(driver, it)
        gn = driver.grad_norm
        records.append(IterateRecord(it, driver.f, gn, driver.last_step,
                                     _distance(manifold, driver.p, reference)))
        if gn <= stop.grad_tol:
            status = "grad_tol"
            break
        if it == stop.max_iters:
            break
        lam, ls_status = driver.step()
        if ls_status in ("line_search_failure", "zero_gradient"):
            status = ls_status
            break
        if stop.f_tol > 0.0 and abs(driver.f - f_prev) <= stop.f_tol * (1.0 + abs(f_prev)):
            records.append(IterateRecord(it + 1, driver.f, driver.grad_norm,
                                         lam, _distance(manifold, driver.p, reference)))
            status = "f_tol"
            break
        f_prev = driver.f
    return OptimizeResult(point=driver.p, records=records, status=status)
