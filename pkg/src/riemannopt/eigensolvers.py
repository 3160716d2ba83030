"""End-user eigensolvers: extreme eigenpair on the sphere (closed-form
line search, one matrix-vector product per iteration), the Newton/RQI
iteration, and the top-k solver on the Stiefel manifold with the
sort-and-reset policy.  The data-matrix variant reuses the top-k solver
through a matrix-free operator, so the data is never squared explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ArgumentError, check_symmetric
from .manifolds import StiefelPoint
from .objectives import (
    GenRayleigh,
    Negated,
    RayleighQuotient,
    SingularShiftError,
    SymmetricOperator,
    as_operator,
)
from .optimizers import (
    CgDriver,
    LineSearchParams,
    StoppingCriteria,
    rayleigh_exact_step,
)


@dataclass
class SphereEigRecord:
    iter: int
    rho: float
    grad_norm: float
    step: float
    dist_to_reference: float | None = None


@dataclass
class SphereEigResult:
    value: float
    vector: np.ndarray
    records: list
    status: str
    matvecs: int

    @property
    def iterations(self):
        return len(self.records) - 1 if self.records else 0


def similarly_ordered(u, v):
    """True when the two sequences sort with the same permutation."""
    return np.array_equal(np.argsort(-np.asarray(u), kind="stable"),
                          np.argsort(-np.asarray(v), kind="stable"))


def extreme_eigpair_sphere(q, x0=None, stop=None, method="cg",
                           reset_period=None, rng=None,
                           reference=None) -> SphereEigResult:
    """Largest eigenpair of a symmetric matrix by geodesic CG (or steepest
    ascent) on the sphere with the closed-form circle maximizer.

    Uses the true gradient G = 2 (Q - rho I) x; the exact line search makes
    the gradient scale immaterial to the iterates.  Costs one matrix-vector
    product plus O(n) work per iteration.
    """
    q = check_symmetric(q, "Q")
    n = q.shape[0]
    stop = stop or StoppingCriteria(grad_tol=1e-10, max_iters=max(30 * n, 300))
    if x0 is None:
        rng = rng or np.random.default_rng(0)
        x0 = rng.standard_normal(n)
    x = np.asarray(x0, dtype=float)
    x = x / np.linalg.norm(x)
    reset_period = reset_period or (n - 1)
    matvecs = 0
    qx = q @ x
    matvecs += 1
    records = []
    status = "max_iters"
    h_dir = None
    since_reset = 0
    stall = 0
    rho_prev = None

    def ref_dist(x):
        if reference is None:
            return None
        return float(min(np.linalg.norm(x - reference), np.linalg.norm(x + reference)))

    for it in range(stop.max_iters + 1):
        rho = float(x @ qx)
        grad = 2.0 * (qx - rho * x)
        gn = float(np.linalg.norm(grad))
        records.append(SphereEigRecord(it, rho, gn, 0.0, ref_dist(x)))
        if gn <= stop.grad_tol * (1.0 + abs(rho)):
            status = "grad_tol"
            break
        if it == stop.max_iters:
            break
        if rho_prev is not None and rho - rho_prev <= 1e-15 * (1.0 + abs(rho)):
            stall += 1
            if stall >= 3 * (n - 1):
                status = "stagnation"
                break
        else:
            stall = 0
        rho_prev = rho
        if h_dir is None or method == "sd":
            h_dir = grad
            since_reset = 0
        h_norm = np.linalg.norm(h_dir)
        h = h_dir / h_norm
        qh = q @ h
        matvecs += 1
        a = 2.0 * float(x @ qh)
        b = rho - float(h @ qh)
        step = rayleigh_exact_step(a, b)
        if step.status == "flat":
            status = "flat_circle"
            break
        c, s = step.c, step.s
        x_new = x * c + h * s
        x_new /= np.linalg.norm(x_new)
        qx_new = qx * c + qh * s
        if method == "cg":
            v = s * s / (1.0 + c)
            tau_h = h_dir * c - x * (h_norm * s)
            tau_g = grad - (h @ grad) * (x * s + h * v)
            rho_new = float(x_new @ qx_new)
            g_new = 2.0 * (qx_new - rho_new * x_new)
            denom = float(grad @ h_dir)
            if abs(denom) < 1e-14 * (1.0 + float(g_new @ g_new)):
                h_dir = g_new
                since_reset = 0
            else:
                gamma = float((g_new - tau_g) @ g_new) / denom
                since_reset += 1
                if since_reset >= reset_period:
                    h_dir = g_new
                    since_reset = 0
                else:
                    h_dir = g_new + gamma * tau_h
        x, qx = x_new, qx_new
        records[-1].step = step.angle / h_norm
    rho = float(x @ qx)
    return SphereEigResult(value=rho, vector=x, records=records,
                           status=status, matvecs=matvecs)


def newton_rayleigh(q, x0, variant="geodesic", stop=None,
                    reference=None) -> SphereEigResult:
    """Newton iteration for an eigenvector of a symmetric matrix: shifted
    solve y = (Q - rho I)^{-1} x, stepped either along the geodesic through
    the tangent intersection (variant "geodesic") or by normalizing y
    (variant "rqi").  Both converge cubically to simple eigenvectors."""
    q = check_symmetric(q, "Q")
    if variant not in ("geodesic", "rqi"):
        raise ArgumentError(f"unknown variant {variant!r}")
    stop = stop or StoppingCriteria(grad_tol=1e-12, max_iters=30)
    obj = RayleighQuotient(q)
    x = np.asarray(x0, dtype=float)
    x = x / np.linalg.norm(x)
    records = []
    status = "max_iters"

    def ref_dist(x):
        if reference is None:
            return None
        return float(min(np.linalg.norm(x - reference), np.linalg.norm(x + reference)))

    for it in range(stop.max_iters + 1):
        rho = obj.value(x)
        grad = obj.gradient(x)
        gn = float(np.linalg.norm(grad))
        records.append(SphereEigRecord(it, rho, gn, 0.0, ref_dist(x)))
        if gn <= stop.grad_tol * (1.0 + abs(rho)):
            status = "grad_tol"
            break
        if it == stop.max_iters:
            break
        try:
            y = obj.shifted_solve(x)
        except SingularShiftError:
            status = "converged_singular"
            break
        if variant == "rqi":
            x = y / np.linalg.norm(y)
        else:
            alpha = 1.0 / float(x @ y)
            h = -x + alpha * y
            theta = float(np.linalg.norm(h))
            records[-1].step = theta
            if theta > 0.0:
                x = x * np.cos(theta) + h * (np.sin(theta) / theta)
                x /= np.linalg.norm(x)
    return SphereEigResult(value=obj.value(x), vector=x, records=records,
                           status=status, matvecs=0)


# ---------------------------------------------------------------------------
# top-k eigenpairs on the Stiefel manifold


@dataclass
class TopkRecord:
    iter: int
    rho: float
    grad_norm: float
    step: float
    diag: np.ndarray
    resorted: bool
    reset: bool
    orth_defect: float
    matvecs: int


@dataclass
class EigResult:
    eigenvalues: np.ndarray
    frame: StiefelPoint
    records: list
    status: str
    matvecs: int
    resorts: int
    residual: float

    @property
    def iterations(self):
        return len(self.records) - 1 if self.records else 0


@dataclass
class SortPolicy:
    enabled: bool = True
    action: str = "resort-N"  # or "resort-columns" for the final frame


def sort_frame(p, a_op, n_diag):
    """Permute the columns of p so diag(p^T A p) is ordered similarly to
    diag(N).  O(k log k) comparisons; the frame stays orthonormal."""
    op = as_operator(a_op)
    mat = p.p if isinstance(p, StiefelPoint) else np.asarray(p, dtype=float)
    diag = np.einsum("ij,ij->j", mat, op.apply(mat))
    nu = np.asarray(n_diag, dtype=float)
    perm = np.empty(nu.size, dtype=int)
    perm[np.argsort(-nu, kind="stable")] = np.argsort(-diag, kind="stable")
    return StiefelPoint(mat[:, perm]), perm


def canonical_signs(p):
    """Flip column signs so the largest-magnitude entry of each column is
    positive (maximizers are unique only modulo k sign choices)."""
    mat = p.p.copy() if isinstance(p, StiefelPoint) else np.asarray(p, dtype=float).copy()
    for j in range(mat.shape[1]):
        i = int(np.argmax(np.abs(mat[:, j])))
        if mat[i, j] < 0:
            mat[:, j] = -mat[:, j]
    return StiefelPoint(mat)


def topk_eigpairs_stiefel(a_op, n_diag=None, p0=None, *, k=None, stop=None,
                          linesearch=None, reset_period=None, rng=None,
                          sort_policy=None, reference_value=None) -> EigResult:
    """Top-k eigenpairs of a symmetric operator by geodesic conjugate
    gradients on V(n,k), Hessian-conjugacy coefficients, Wolfe-Powell
    steps seeded by the quadratic-model trial stepsize.

    Whenever diag(p^T A p) stops being similarly ordered to diag(N), the
    N weights are resorted, the direction is reset to the gradient and the
    step count restarts.  Mixed-sign N weights select largest/smallest
    eigenvectors per the sign pattern.
    """
    op = as_operator(a_op)
    rng = rng or np.random.default_rng(0)
    op.check_symmetry(rng)
    if n_diag is None:
        if k is None:
            raise ArgumentError("give n_diag or k")
        n_diag = np.arange(float(k), 0.0, -1.0)
    nu0 = np.asarray(n_diag, dtype=float)
    objective = GenRayleigh(op, nu0)
    manifold = objective.manifold
    if p0 is None:
        p0 = manifold.random_point(rng)
    stop = stop or StoppingCriteria(grad_tol=1e-9, max_iters=40 * manifold.dim)
    sort_policy = sort_policy or SortPolicy()
    driver = CgDriver(manifold, Negated(objective), p0,
                      linesearch=linesearch or LineSearchParams(),
                      gamma_mode="hessian",
                      reset_period=reset_period or manifold.dim)
    records = []
    status = "max_iters"
    resorts = 0
    for it in range(stop.max_iters + 1):
        p = driver.p
        diag = objective.diag_estimates(p)
        resorted = False
        if sort_policy.enabled and not similarly_ordered(diag, objective.nu):
            order = np.empty(nu0.size, dtype=int)
            order[np.argsort(-diag, kind="stable")] = np.argsort(
                -objective.nu, kind="stable")
            objective = objective.resorted(order)
            driver.set_objective(Negated(objective))
            resorted = True
            resorts += 1
        orth = float(np.linalg.norm(p.p.T @ p.p - np.eye(manifold.k)))
        gn = driver.grad_norm
        records.append(TopkRecord(it, -driver.f, gn, driver.last_step,
                                  diag.copy(), resorted,
                                  driver.since_reset == 0, orth, op.count))
        if gn <= stop.grad_tol * (1.0 + abs(driver.f)):
            status = "grad_tol"
            break
        if it == stop.max_iters:
            break
        lam, ls_status = driver.step()
        if ls_status in ("line_search_failure", "zero_gradient"):
            status = ls_status
            break
    # canonical output: columns reordered to the original weights, signs fixed
    frame, _ = sort_frame(driver.p, op, nu0)
    frame = canonical_signs(frame)
    ap = op.apply(frame.p)
    eigenvalues = np.einsum("ij,ij->j", frame.p, ap)
    residual = float(np.linalg.norm(ap - frame.p * eigenvalues))
    return EigResult(eigenvalues=eigenvalues, frame=frame, records=records,
                     status=status, matvecs=op.count, resorts=resorts,
                     residual=residual)


def topk_left_singular(factor, n_diag=None, p0=None, *, k=None,
                       **kwargs) -> EigResult:
    """Leading left singular vectors of a data matrix K (or factor L),
    through the matrix-free operator v -> K (K^T v): the returned
    eigenvalues are the squared singular values and the data is never
    squared into an explicit covariance matrix."""
    op = SymmetricOperator(factor=np.asarray(factor, dtype=float))
    return topk_eigpairs_stiefel(op, n_diag=n_diag, p0=p0, k=k, **kwargs)
