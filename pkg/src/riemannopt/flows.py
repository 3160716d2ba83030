"""Matrix gradient flows: the double-bracket diagonalizing flow, the
rotation-group ascent it descends from, the generalized-Rayleigh flow on
the Stiefel manifold, and the singular-value-decomposition flows, all
integrated by fixed-step RK4 with conserved-quantity monitors and
exponential-rate regression on the trajectory tails.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ArgumentError, check_symmetric
from .manifolds import Stiefel, StiefelPoint
from .objectives import GenRayleigh


def bracket_op(a, b):
    """Scaled commutator-like form (A B^T - B A^T) / (m - 2) on m-by-l
    arrays, with the coefficient replaced by one for m <= 2; the output is
    skew-symmetric m-by-m."""
    m = a.shape[0]
    denom = float(m - 2) if m > 2 else 1.0
    return (a @ b.T - b @ a.T) / denom


def rect_diag(m, n, values):
    out = np.zeros((m, n))
    np.fill_diagonal(out, values)
    return out


@dataclass
class FlowTrace:
    times: np.ndarray
    monitors: dict        # name -> array indexed like times
    state: object         # final state
    status: str
    projections: int = 0  # manifold re-projection count

    def monitor(self, name):
        return self.monitors[name]


def rk4_integrate(rhs, state0, t_end, dt, observer=None, observe_every=1,
                  postprocess=None):
    """Classical fixed-step RK4 over an ndarray (or tuple of ndarrays)
    state.  ``observer(t, state) -> dict`` records monitors every
    ``observe_every`` steps; ``postprocess(state) -> state`` runs after
    each step (manifold drift control).  Aborts on non-finite states.
    """
    if dt <= 0:
        raise ArgumentError("dt must be positive")
    is_tuple = isinstance(state0, tuple)
    y = tuple(np.array(a, dtype=float) for a in state0) if is_tuple \
        else np.array(state0, dtype=float)

    def axpy(a, x, b, ys):
        if is_tuple:
            return tuple(a * xi + b * yi for xi, yi in zip(x, ys))
        return a * x + b * ys

    f = rhs
    nsteps = int(np.ceil(t_end / dt - 1e-12)) if t_end > 0 else 0
    times = []
    rows = []
    status = "ok"

    def record(t, y):
        if observer is None:
            return
        times.append(t)
        rows.append(observer(t, y))

    record(0.0, y)
    t = 0.0
    for step in range(nsteps):
        h = min(dt, t_end - t)
        k1 = f(y)
        k2 = f(axpy(1.0, y, 0.5 * h, k1))
        k3 = f(axpy(1.0, y, 0.5 * h, k2))
        k4 = f(axpy(1.0, y, h, k3))
        if is_tuple:
            y = tuple(yi + (h / 6.0) * (a + 2 * b + 2 * c + d)
                      for yi, a, b, c, d in zip(y, k1, k2, k3, k4))
        else:
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if postprocess is not None:
            y = postprocess(y)
        flat_ok = all(np.all(np.isfinite(a)) for a in (y if is_tuple else (y,)))
        if not flat_ok:
            status = "nonfinite_state"
            break
        t += h
        if (step + 1) % observe_every == 0 or step == nsteps - 1:
            record(t, y)
    monitors = {}
    if rows:
        for key in rows[0]:
            monitors[key] = np.array([r[key] for r in rows])
    return FlowTrace(times=np.array(times), monitors=monitors, state=y,
                     status=status)


def _newton_schulz(q):
    """One orthogonalization sweep toward the polar factor."""
    return q @ (1.5 * np.eye(q.shape[1]) - 0.5 * (q.T @ q))


def double_bracket_flow(h0, n_diag, t_end, dt=1e-3, observe_every=10) -> FlowTrace:
    """Isospectral diagonalizing flow H' = [H, [H, N]].

    tr(HN) is non-decreasing and the trajectory converges to a diagonal
    matrix whose entries are ordered similarly to diag(N).
    """
    h0 = check_symmetric(h0, "H0")
    n = np.diag(np.asarray(n_diag, dtype=float))

    def rhs(h):
        w = h @ n - n @ h
        return h @ w - w @ h

    def observer(t, h):
        off = h - np.diag(np.diag(h))
        return {
            "trace_objective": float(np.sum(np.diag(h) * np.diag(n))),
            "offdiag": float(np.linalg.norm(off)),
            "spectrum": np.sort(np.linalg.eigvalsh(h))[::-1],
            "diag": np.diag(h).copy(),
        }

    def symmetrize(h):
        return 0.5 * (h + h.T)

    return rk4_integrate(rhs, h0, t_end, dt, observer=observer,
                         observe_every=observe_every, postprocess=symmetrize)


def so_gradient_flow(q, n_diag, theta0, t_end, dt=1e-3, observe_every=10,
                     drift_tol=1e-9) -> FlowTrace:
    """Ascent flow Theta' = Theta [Theta^T Q Theta, N] on SO(n); the
    conjugated trajectory H = Theta^T Q Theta follows the double-bracket
    flow.  Orthogonality drift is re-projected when it exceeds the
    tolerance (the integration itself runs in ambient coordinates)."""
    q = check_symmetric(q, "Q")
    n = np.diag(np.asarray(n_diag, dtype=float))
    projections = [0]

    def rhs(theta):
        h = theta.T @ q @ theta
        return theta @ (h @ n - n @ h)

    def observer(t, theta):
        h = theta.T @ q @ theta
        return {
            "trace_objective": float(np.sum(np.diag(h) * np.diag(n))),
            "orth_drift": float(np.linalg.norm(theta.T @ theta - np.eye(q.shape[0]))),
            "det": float(np.linalg.det(theta)),
            "conjugated": h,
        }

    def project(theta):
        if np.linalg.norm(theta.T @ theta - np.eye(theta.shape[0])) > drift_tol:
            projections[0] += 1
            return _newton_schulz(theta)
        return theta

    trace = rk4_integrate(rhs, theta0, t_end, dt, observer=observer,
                          observe_every=observe_every, postprocess=project)
    trace.projections = projections[0]
    return trace


def genray_flow(a, n_diag, p0: StiefelPoint, t_end, dt=1e-3,
                observe_every=10) -> FlowTrace:
    """Gradient ascent of tr p^T A p N on V(n,k) integrated by geodesic
    Euler steps p <- exp_p(dt * grad): the iterate stays orthonormal
    exactly, so no projection control is needed."""
    objective = GenRayleigh(a, n_diag)
    man: Stiefel = objective.manifold
    nsteps = int(np.ceil(t_end / dt - 1e-12)) if t_end > 0 else 0
    p = p0
    times, rows = [], []

    def observe(t, p):
        times.append(t)
        rows.append({
            "rho": objective.value(p),
            "diag": objective.diag_estimates(p).copy(),
            "grad_norm": man.norm(p, objective.gradient(p)),
            "orth_drift": float(np.linalg.norm(p.p.T @ p.p - np.eye(man.k))),
        })

    observe(0.0, p)
    t = 0.0
    status = "ok"
    for step in range(nsteps):
        h = min(dt, t_end - t)
        grad = objective.gradient(p)
        p = man.exp(p, grad, h)
        if not np.all(np.isfinite(p.p)):
            status = "nonfinite_state"
            break
        t += h
        if (step + 1) % observe_every == 0 or step == nsteps - 1:
            observe(t, p)
    monitors = {key: np.array([r[key] for r in rows]) for key in rows[0]}
    return FlowTrace(times=np.array(times), monitors=monitors, state=p,
                     status=status)


def svd_flow_sigma(sigma0, n_rect, t_end, dt=1e-3, observe_every=10,
                   entries=()) -> FlowTrace:
    """Gradient ascent of tr N^T Sigma on the matrices with fixed singular
    values: Sigma' = Sigma [[Sigma^T, N^T]] - [[Sigma, N]] Sigma."""
    sigma0 = np.asarray(sigma0, dtype=float)
    n_rect = np.asarray(n_rect, dtype=float)
    if sigma0.shape != n_rect.shape:
        raise ArgumentError("Sigma and N must have equal shapes")

    def rhs(s):
        return s @ bracket_op(s.T, n_rect.T) - bracket_op(s, n_rect) @ s

    def observer(t, s):
        row = {
            "trace_objective": float(np.sum(n_rect * s)),
            "diag": np.diag(s).copy(),
            "singular_values": np.linalg.svd(s, compute_uv=False),
        }
        for (i, j) in entries:
            row[f"abs_{i+1}{j+1}"] = abs(float(s[i, j]))
        return row

    return rk4_integrate(rhs, sigma0, t_end, dt, observer=observer,
                         observe_every=observe_every)


def svd_flow_uv(k_mat, n_rect, u0, v0, t_end, dt=1e-3, observe_every=10,
                entries=(), drift_tol=1e-9) -> FlowTrace:
    """Coupled orthogonal-pair flow U' = U [[U^T K V, N]],
    V' = V [[V^T K^T U, N^T]]; (U^T K V, U, V) converges to a singular
    value decomposition of K up to singular-value signs."""
    k_mat = np.asarray(k_mat, dtype=float)
    n_rect = np.asarray(n_rect, dtype=float)
    projections = [0]

    def rhs(state):
        u, v = state
        s = u.T @ k_mat @ v
        return (u @ bracket_op(s, n_rect), v @ bracket_op(s.T, n_rect.T))

    def observer(t, state):
        u, v = state
        s = u.T @ k_mat @ v
        drift = max(float(np.linalg.norm(u.T @ u - np.eye(u.shape[1]))),
                    float(np.linalg.norm(v.T @ v - np.eye(v.shape[1]))))
        row = {
            "trace_objective": float(np.sum(n_rect * s)),
            "diag": np.diag(s).copy(),
            "singular_values": np.linalg.svd(s, compute_uv=False),
            "orth_drift": drift,
        }
        for (i, j) in entries:
            row[f"abs_{i+1}{j+1}"] = abs(float(s[i, j]))
        return row

    def project(state):
        u, v = state
        n_id, k_id = np.eye(u.shape[1]), np.eye(v.shape[1])
        if np.linalg.norm(u.T @ u - n_id) > drift_tol:
            projections[0] += 1
            u = _newton_schulz(u)
        if np.linalg.norm(v.T @ v - k_id) > drift_tol:
            projections[0] += 1
            v = _newton_schulz(v)
        return (u, v)

    trace = rk4_integrate(rhs, (u0, v0), t_end, dt, observer=observer,
                          observe_every=observe_every, postprocess=project)
    trace.projections = projections[0]
    return trace


# ---------------------------------------------------------------------------
# exponential-rate regression and predictions


@dataclass
class RateFit:
    rate: float
    intercept: float
    residual: float
    samples: int
    status: str  # "ok" or "unmeasurable"


@dataclass
class RateReport:
    fits: dict              # entry label -> RateFit
    predicted: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)


def fit_exponential_rate(times, values, floor=1e-10, ceiling=1e-2,
                         min_samples=5) -> RateFit:
    """Fit log|v| = -r t + c over the most cleanly exponential stretch of
    the decay.

    Samples are restricted to magnitudes in [floor, ceiling]; within that
    window, overlapping segments are fitted and the one with the smallest
    RMS residual wins.  This rejects both the entry transient and the late
    tail where second-order products of slower modes contaminate fast
    entries (a log-plot of a two-exponential mixture is curved, so those
    stretches fit badly).
    """
    times = np.asarray(times, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    idx = np.flatnonzero((values >= floor) & (values <= ceiling))
    if idx.size < min_samples:
        return RateFit(np.nan, np.nan, np.nan, int(idx.size), "unmeasurable")
    seg = max(min_samples, int(0.35 * idx.size))
    stride = max(1, int(0.08 * idx.size))
    best = None
    for start in range(0, idx.size - seg + 1, stride):
        sub = idx[start:start + seg]
        coef = np.polyfit(times[sub], np.log(values[sub]), 1)
        resid = float(np.sqrt(np.mean(
            (np.polyval(coef, times[sub]) - np.log(values[sub])) ** 2)))
        if best is None or resid < best[0]:
            best = (resid, coef, sub.size)
    resid, coef, nsamp = best
    return RateFit(rate=float(-coef[0]), intercept=float(coef[1]),
                   residual=resid, samples=nsamp, status="ok")


def svd_rate_matrix_r1(si, sj, ni, nj, n, k):
    """2x2 linearization block of the Sigma flow for the (i,j)/(j,i)
    off-diagonal pair near a diagonal critical point."""
    cn, ck = float(n - 2) if n > 2 else 1.0, float(k - 2) if k > 2 else 1.0
    return np.array([
        [ni * si / ck + nj * sj / cn, -(nj * si / ck + ni * sj / cn)],
        [-(nj * si / cn + ni * sj / ck), ni * si / cn + nj * sj / ck],
    ])


def svd_rate_matrix_r2(si, sj, ni, nj, n, k):
    """Companion block for the (U, V) pair flow; derived from the first
    order perturbation of the coupled flow, it shares the R1 spectrum
    (equal traces and determinants)."""
    cn, ck = float(n - 2) if n > 2 else 1.0, float(k - 2) if k > 2 else 1.0
    return np.array([
        [(ni * si + nj * sj) / cn, -(ni * sj + nj * si) / cn],
        [-(ni * sj + nj * si) / ck, (ni * si + nj * sj) / ck],
    ])


def predicted_svd_rates(sigma, nu, n, k, entries) -> dict:
    """Slowest exponential rate of each requested Sigma entry near the
    similarly-ordered critical point: the smaller eigenvalue of the 2x2
    pair block for i, j <= k, and nu_j sigma_j / (n-2) for rows beyond k."""
    sigma = np.asarray(sigma, dtype=float)
    nu = np.asarray(nu, dtype=float)
    out = {}
    for (i, j) in entries:
        if i < k and j < k:
            r1 = svd_rate_matrix_r1(sigma[i], sigma[j], nu[i], nu[j], n, k)
            out[(i, j)] = float(np.min(np.linalg.eigvals(r1).real))
        else:
            col = j
            cn = float(n - 2) if n > 2 else 1.0
            out[(i, j)] = float(nu[col] * sigma[col] / cn)
    return out


def rate_report(trace: FlowTrace, entries, sigma, nu, n, k,
                square_symmetric=False) -> RateReport:
    """Measured-versus-predicted convergence rates for the requested Sigma
    entries of an SVD flow trace."""
    fits = {}
    for (i, j) in entries:
        key = f"abs_{i+1}{j+1}"
        fits[(i, j)] = fit_exponential_rate(trace.times, trace.monitors[key])
    predicted = predicted_svd_rates(sigma, nu, n, k, entries)
    notes = {}
    if square_symmetric:
        notes["time_scale"] = (
            f"square symmetric input: the Sigma flow equals the double-bracket "
            f"flow with time scaled by k-2 = {k - 2}")
    return RateReport(fits=fits, predicted=predicted, notes=notes)
