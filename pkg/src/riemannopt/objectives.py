"""Objective functions over the sphere, SO(n) and the Stiefel manifold,
each bundling value, Riemannian gradient, and the second-covariant-
differential bilinear form behind one interface.

Every objective also hands the optimizers a ``line_restriction``: the
one-dimensional problem t -> f(exp_p(tX)) along a geodesic.  The generic
restriction recomputes everything per evaluation; GenRayleigh overrides
it with a prefactored version whose evaluations, endpoint gradient and
Hessian pairs all reuse one block of operator applications per iterate.
"""

from __future__ import annotations

import numpy as np

from .linalg import ArgumentError, check_finite, check_symmetric
from .manifolds import Sphere, SpecialOrthogonal, Stiefel, StiefelPoint, TangentM


class SingularShiftError(RuntimeError):
    """Shifted system is singular: the iterate is (numerically) an eigenvector."""


class IndefiniteHessianError(RuntimeError):
    """Inner CG detected an indefinite or singular Hessian operator."""


class NonDifferentiablePointError(RuntimeError):
    """Objective is not differentiable at the requested point."""


# ---------------------------------------------------------------------------
# base interface


class Objective:
    """Interface: value, gradient, Hessian bilinear form, optional Newton solve."""

    manifold = None

    def value(self, p):
        raise NotImplementedError

    def gradient(self, p):
        raise NotImplementedError

    def hess_bilinear(self, p, x, y):
        raise NotImplementedError

    def newton_solve(self, p, rhs):
        """Tangent u with hess_apply(p, u) = rhs; optional."""
        raise NotImplementedError(f"{type(self).__name__} offers no Newton solve")

    def slope(self, p, x):
        """Directional derivative d/dt f(exp_p(tx)) at t = 0."""
        return self.manifold.inner(p, self.gradient(p), x)

    def line_restriction(self, p, x):
        return GenericLineRestriction(self, p, x)

    def fd_hess_bilinear(self, p, x, y, step=1e-4):
        """Second covariant differential by central differences of the
        analytic gradient along geodesics, polarized to be symmetric."""

        def along(z):
            nz = self.manifold.norm(p, z)
            if nz == 0.0:
                return 0.0
            h = step / nz

            def psi(t):
                q = self.manifold.exp(p, z, t)
                return self.manifold.inner(
                    q, self.gradient(q), self.manifold.transport_dir(p, z, t))

            return (psi(h) - psi(-h)) / (2.0 * h)

        return 0.25 * (along(x + y) - along(x - y))


class GenericLineRestriction:
    """Plain geodesic restriction: every evaluation goes through exp/gradient."""

    def __init__(self, objective, p, x):
        self.objective = objective
        self.manifold = objective.manifold
        self.p = p
        self.x = x
        self._points = {}

    def point(self, t):
        if t not in self._points:
            self._points[t] = self.manifold.exp(self.p, self.x, t)
        return self._points[t]

    def transported_dir(self, t):
        return self.manifold.transport_dir(self.p, self.x, t)

    def phi(self, t):
        return self.objective.value(self.point(t))

    def dphi(self, t):
        q = self.point(t)
        return self.manifold.inner(q, self.objective.gradient(q), self.transported_dir(t))

    def gradient(self, t):
        return self.objective.gradient(self.point(t))

    def hess_pair(self, t, w):
        q = self.point(t)
        tau = self.transported_dir(t)
        return (self.objective.hess_bilinear(q, tau, w),
                self.objective.hess_bilinear(q, tau, tau))

    def curvature0(self):
        return self.objective.hess_bilinear(self.p, self.x, self.x)

    def transport(self, t, w):
        return self.manifold.transport_along(self.p, self.x, t, w)


class Negated(Objective):
    """Sign-flipped objective; lets minimizing optimizers run maximizations."""

    def __init__(self, inner):
        self.inner_objective = inner
        self.manifold = inner.manifold

    def value(self, p):
        return -self.inner_objective.value(p)

    def gradient(self, p):
        return -1.0 * self.inner_objective.gradient(p)

    def hess_bilinear(self, p, x, y):
        return -self.inner_objective.hess_bilinear(p, x, y)

    def newton_solve(self, p, rhs):
        return self.inner_objective.newton_solve(p, -1.0 * rhs)

    def slope(self, p, x):
        return -self.inner_objective.slope(p, x)

    def line_restriction(self, p, x):
        return _NegatedRestriction(self.inner_objective.line_restriction(p, x))


class _NegatedRestriction:
    def __init__(self, inner):
        self._r = inner

    def point(self, t):
        return self._r.point(t)

    def transported_dir(self, t):
        return self._r.transported_dir(t)

    def phi(self, t):
        return -self._r.phi(t)

    def dphi(self, t):
        return -self._r.dphi(t)

    def gradient(self, t):
        return -1.0 * self._r.gradient(t)

    def hess_pair(self, t, w):
        num, den = self._r.hess_pair(t, w)
        return -num, -den

    def curvature0(self):
        return -self._r.curvature0()

    def transport(self, t, w):
        return self._r.transport(t, w)


# ---------------------------------------------------------------------------
# Rayleigh quotient on the sphere


def tangent_solve(a, x, v):
    """Solve the tangent-restricted system (I - x x^T) A u = v for u _|_ x:
    u = A^{-1} (v - x (x^T A^{-1} v) / (x^T A^{-1} x))."""
    try:
        sol = np.linalg.solve(a, np.column_stack([v, x]))
    except np.linalg.LinAlgError as exc:
        raise SingularShiftError(str(exc)) from exc
    ainv_v, ainv_x = sol[:, 0], sol[:, 1]
    denom = x @ ainv_x
    if denom == 0.0 or not np.isfinite(denom):
        raise SingularShiftError("x^T A^{-1} x vanished")
    return ainv_v - (x @ ainv_v) / denom * ainv_x


class RayleighQuotient(Objective):
    """rho(x) = x^T Q x on the unit sphere."""

    def __init__(self, q):
        self.q = check_symmetric(q, "Q")
        self.manifold = Sphere(q.shape[0])

    def value(self, x):
        return float(x @ self.q @ x)

    def gradient(self, x):
        qx = self.q @ x
        return 2.0 * (qx - (x @ qx) * x)

    def hess_bilinear(self, x, u, v):
        rho = self.value(x)
        return float(2.0 * (u @ self.q @ v - rho * (u @ v)))

    def hess_apply(self, x, u):
        rho = self.value(x)
        w = 2.0 * (self.q @ u - rho * u)
        return w - (x @ w) * x

    def shifted_solve(self, x):
        """y = (Q - rho(x) I)^{-1} x, the backbone of the Newton iteration.

        An exactly singular shift means x is numerically an eigenvector; a
        tiny diagonal perturbation then recovers the solve, whose result is
        dominated by that eigenvector.
        """
        rho = self.value(x)
        eye = np.eye(self.q.shape[0])
        for bump in (0.0, 1.0, 1e3):
            shift = self.q - (rho + bump * np.finfo(float).eps * (1 + abs(rho))) * eye
            try:
                y = np.linalg.solve(shift, x)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(y)):
                return y
        raise SingularShiftError("shifted system is singular")

    def newton_solve(self, x, rhs):
        shift = self.q - self.value(x) * np.eye(self.q.shape[0])
        rhs_t = rhs - (x @ rhs) * x
        return 0.5 * tangent_solve(shift, x, rhs_t)


# ---------------------------------------------------------------------------
# trace objectives on SO(n)


def _ad(x, y):
    return x @ y - y @ x


def _solve_skew_cg(op, rhs, max_iters, rel_tol=1e-12):
    """Conjugate gradients for op(x) = rhs on so(n), op self-adjoint negative
    definite (as near a maximum); runs on -op and flags indefiniteness."""
    x = np.zeros_like(rhs)
    r = -rhs  # residual of (-op)(x) = -rhs
    p = r.copy()
    rs = float(np.sum(r * r))
    target = rel_tol * np.sqrt(rs) if rs > 0 else 0.0
    for _ in range(max_iters):
        if np.sqrt(rs) <= max(target, 1e-300):
            return x
        mp = -op(p)
        curv = float(np.sum(p * mp))
        if curv <= 0.0:
            raise IndefiniteHessianError("non-positive curvature in inner CG")
        alpha = rs / curv
        x = x + alpha * p
        r = r - alpha * mp
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) > max(10 * target, 1e-10 * (1 + np.linalg.norm(rhs))):
        raise IndefiniteHessianError("inner CG did not converge")
    return x


class TraceQN(Objective):
    """f(Theta) = tr Theta^T Q Theta N on SO(n), N diagonal with distinct
    entries.  Tangent vectors are left-translated skew matrices."""

    def __init__(self, q, n_diag):
        self.q = check_symmetric(q, "Q")
        self.n_diag = np.asarray(n_diag, dtype=float)
        if self.n_diag.ndim != 1 or self.n_diag.size != q.shape[0]:
            raise ArgumentError("n_diag must be a length-n vector of diagonal weights")
        self.manifold = SpecialOrthogonal(q.shape[0])

    def conjugated(self, theta):
        return theta.T @ self.q @ theta

    def value(self, theta):
        return float(np.diag(self.conjugated(theta)) @ self.n_diag)

    def gradient(self, theta):
        h = self.conjugated(theta)
        n = np.diag(self.n_diag)
        return _ad(h, n)

    def hess_operator(self, theta):
        h = self.conjugated(theta)
        n = np.diag(self.n_diag)

        def op(x):
            return _ad(h, _ad(x, n)) - _ad(_ad(x, h), n)

        return op

    def hess_bilinear(self, theta, x, y):
        lx = self.hess_operator(theta)(x)
        return float(-0.5 * np.sum(lx * y.T))

    def newton_solve(self, theta, rhs):
        op = self.hess_operator(theta)
        dim = self.manifold.dim
        return _solve_skew_cg(op, 2.0 * rhs, max_iters=dim + 20)

    def newton_direction(self, theta):
        """Solution X of L_Theta(X) = 2 [H, N] (the raw Newton equation; the
        ascent step toward the maximum is its negative)."""
        return self.newton_solve(theta, self.gradient(theta))


class DiagSquaresTrace(Objective):
    """f(Theta) = sum_i H_ii^2 with H = Theta^T Q Theta: concentrating the
    conjugated matrix on its diagonal (the Jacobi-method objective)."""

    def __init__(self, q):
        self.q = check_symmetric(q, "Q")
        self.manifold = SpecialOrthogonal(q.shape[0])

    def conjugated(self, theta):
        return theta.T @ self.q @ theta

    def value(self, theta):
        return float(np.sum(np.diag(self.conjugated(theta)) ** 2))

    def gradient(self, theta):
        h = self.conjugated(theta)
        return 2.0 * _ad(h, np.diag(np.diag(h)))

    def hess_operator(self, theta):
        h = self.conjugated(theta)
        pi_h = np.diag(np.diag(h))

        def op(x):
            ad_xh = _ad(x, h)
            return (_ad(h, _ad(x, pi_h)) - _ad(ad_xh, pi_h)
                    - 2.0 * _ad(h, np.diag(np.diag(ad_xh))))

        return op

    def hess_bilinear(self, theta, x, y):
        lx = self.hess_operator(theta)(x)
        return float(-np.sum(lx * y.T))

    def newton_solve(self, theta, rhs):
        dim = self.manifold.dim
        return _solve_skew_cg(self.hess_operator(theta), rhs, max_iters=dim + 20)


# ---------------------------------------------------------------------------
# generalized Rayleigh quotient on the Stiefel manifold


class SymmetricOperator:
    """Symmetric operator v -> A v, either an explicit matrix or matrix-free.

    ``factor`` L realizes v -> L (L^T v), avoiding the squaring of a data
    matrix.  Applications are counted column by column so solvers can
    expose their per-iteration operator budget.
    """

    def __init__(self, matrix=None, factor=None, apply_fn=None, n=None):
        given = sum(arg is not None for arg in (matrix, factor, apply_fn))
        if given != 1:
            raise ArgumentError("give exactly one of matrix, factor, apply_fn")
        self.count = 0
        if matrix is not None:
            self.matrix = check_symmetric(matrix, "A")
            self.n = matrix.shape[0]
            self._apply = lambda m: self.matrix @ m
        elif factor is not None:
            self.factor = check_finite(factor, "L")
            self.matrix = None
            self.n = factor.shape[0]
            self._apply = lambda m: self.factor @ (self.factor.T @ m)
        else:
            if n is None:
                raise ArgumentError("apply_fn needs the dimension n")
            self.matrix = None
            self.n = n
            self._apply = apply_fn

    def apply(self, m):
        m = np.asarray(m, dtype=float)
        self.count += 1 if m.ndim == 1 else m.shape[1]
        return self._apply(m)

    def check_symmetry(self, rng, tol=1e-8):
        """Two-application sampling test of <Av, w> = <v, Aw>."""
        v = rng.standard_normal(self.n)
        w = rng.standard_normal(self.n)
        av, aw = self.apply(v), self.apply(w)
        scale = np.linalg.norm(av) * np.linalg.norm(w) + 1.0
        if abs(av @ w - v @ aw) > tol * scale:
            raise ArgumentError("operator failed the symmetry sampling test")


def as_operator(a) -> SymmetricOperator:
    if isinstance(a, SymmetricOperator):
        return a
    return SymmetricOperator(matrix=np.asarray(a, dtype=float))


class GenRayleigh(Objective):
    """Generalized Rayleigh quotient rho(p) = tr p^T A p N on V(n,k).

    N is a diagonal weight vector with distinct entries; positive weights
    select the largest eigenvectors, negative ones the smallest.  All
    gradients and Hessian forms are assembled in the compressed (a, b)
    blocks, never via n-by-n intermediates.
    """

    def __init__(self, a_op, n_diag, stiefel=None):
        self.op = as_operator(a_op)
        self.nu = np.asarray(n_diag, dtype=float)
        k = self.nu.size
        if np.unique(self.nu).size != k:
            import warnings

            warnings.warn("repeated N weights: maximizers are not isolated")
        self.manifold = stiefel if stiefel is not None else Stiefel(self.op.n, k)
        if self.manifold.k != k:
            raise ArgumentError("n_diag length must equal k")

    def resorted(self, order):
        """Same objective with the N weights permuted by ``order``."""
        return GenRayleigh(self.op, self.nu[order], stiefel=self.manifold)

    # cached per-point products -------------------------------------------
    def ap(self, p: StiefelPoint):
        key = ("Ap", self.op)  # the key holds the operator alive: no id reuse
        if key not in p.cache:
            p.cache[key] = self.op.apply(p.p)
        return p.cache[key]

    def b_block(self, p: StiefelPoint):
        key = ("B", self.op)
        if key not in p.cache:
            p.cache[key] = p.coset.apply_transpose(self.ap(p))
        return p.cache[key]

    # objective interface ---------------------------------------------------
    def value(self, p):
        diag = np.einsum("ij,ij->j", p.p, self.ap(p))
        return float(diag @ self.nu)

    def diag_estimates(self, p):
        """diag(p^T A p), the running eigenvalue estimates."""
        return np.einsum("ij,ij->j", p.p, self.ap(p))

    def gradient(self, p):
        k = self.manifold.k
        b = self.b_block(p)
        b1n = b[:k] * self.nu
        return TangentM(b1n - b1n.T, b[k:] * self.nu)

    def slope(self, p, x):
        """phi'(0) = 2 tr p^T A g x o N, reusing the cached A p."""
        xc = x.compressed()
        return float(2.0 * np.sum(self.nu * np.einsum("ij,ij->j", self.b_block(p), xc)))

    def _hess_terms(self, b, w, x, y):
        """(nabla^2 rho)(X, Y) given B = g^T A p and W = g^T A g (y o)."""
        k = self.manifold.k
        s = x.a @ y.a + y.a @ x.a - x.b.T @ y.b - y.b.T @ x.b
        t = x.b @ y.a + y.b @ x.a
        term1 = np.sum(self.nu * (np.einsum("ij,ij->j", b[:k], s)
                                  + np.einsum("ij,ij->j", b[k:], t)))
        inner_k = x.a @ w[:k] - x.b.T @ w[k:]
        term2 = -2.0 * np.sum(self.nu * np.diag(inner_k))
        return float(term1 + term2)

    def hess_bilinear(self, p, x, y):
        g = p.coset
        w = g.apply_transpose(self.op.apply(g.apply(y.compressed())))
        return self._hess_terms(self.b_block(p), w, x, y)

    def line_restriction(self, p, x):
        if 2 * self.manifold.k <= self.manifold.n:
            return GenRayRestriction(self, p, x)
        return GenericLineRestriction(self, p, x)


class GenRayRestriction:
    """Geodesic restriction of GenRayleigh, prefactored so the whole
    iteration (all line-search probes, the accepted point's gradient, and
    the Hessian pair for the conjugacy coefficient) costs one block of at
    most 2k operator applications."""

    def __init__(self, objective: GenRayleigh, p: StiefelPoint, x: TangentM):
        self.objective = objective
        self.manifold = objective.manifold
        self.p = p
        self.x = x
        self.ray = self.manifold.ray(p, x)
        k = self.manifold.k
        # columns 1..k of the moving basis are p itself: reuse its cached A p
        right = objective.op.apply(self.ray.basis[:, k:])
        self.applied_basis = np.column_stack([objective.ap(p), right])
        core = self.ray.basis.T @ self.applied_basis
        self.core = 0.5 * (core + core.T)
        self._points = {}

    def _factors(self, t):
        return self.ray.factors(t)

    def point(self, t) -> StiefelPoint:
        if t not in self._points:
            m, _ = self._factors(t)
            q = StiefelPoint(self.ray.basis @ m)
            # endpoint products come free from the cached applied basis
            q.cache[("Ap", self.objective.op)] = self.applied_basis @ m
            self._points[t] = q
        return self._points[t]

    def transported_dir(self, t) -> TangentM:
        return self.ray.direction_at(t, self.point(t).coset)

    def phi(self, t):
        m, _ = self._factors(t)
        return float(np.sum(self.objective.nu * np.einsum(
            "ij,ij->j", m, self.core @ m)))

    def dphi(self, t):
        m, dm = self._factors(t)
        return float(2.0 * np.sum(self.objective.nu * np.einsum(
            "ij,ij->j", dm, self.core @ m)))

    def curvature0(self):
        k = self.manifold.k
        m0 = np.zeros((2 * k, k))
        np.fill_diagonal(m0, 1.0)
        dm0 = self.ray.reduced_generator[:, :k]
        ddm0 = self.ray.reduced_generator @ dm0
        cm, cdm = self.core @ m0, self.core @ dm0
        return float(2.0 * np.sum(self.objective.nu * np.einsum("ij,ij->j", ddm0, cm))
                     + 2.0 * np.sum(self.objective.nu * np.einsum("ij,ij->j", dm0, cdm)))

    def gradient(self, t):
        return self.objective.gradient(self.point(t))

    def hess_pair(self, t, w):
        q = self.point(t)
        tau = self.transported_dir(t)
        _, dm = self._factors(t)
        w_amb = self.applied_basis @ dm  # A applied to the transported direction
        w_rep = q.coset.apply_transpose(w_amb)
        b = self.objective.b_block(q)
        num = self.objective._hess_terms(b, w_rep, w, tau)
        den = self.objective._hess_terms(b, w_rep, tau, tau)
        return num, den

    def transport(self, t, w):
        raise NotImplementedError(
            "general parallel translation is not used on the Stiefel manifold; "
            "use the Hessian-conjugacy mode")


# ---------------------------------------------------------------------------
# singular-value objectives


class LeftSingularObjective(Objective):
    """sigma'(p) = tr q^T A^T p N with q the column-normalized A^T p;
    maximized when the columns of p are the leading left singular vectors
    of A, similarly ordered to N."""

    def __init__(self, a, n_diag):
        self.a = check_finite(a, "A")
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ArgumentError("A must be square")
        self.nu = np.asarray(n_diag, dtype=float)
        self.manifold = Stiefel(self.a.shape[0], self.nu.size)

    def _normalized(self, p):
        b = self.a.T @ p.p
        norms = np.linalg.norm(b, axis=0)
        if np.any(norms <= 1e-12 * (1.0 + np.linalg.norm(self.a))):
            raise NonDifferentiablePointError("A^T p has a (near-)zero column")
        return b / norms, norms

    def value(self, p):
        _, norms = self._normalized(p)
        return float(norms @ self.nu)

    def gradient(self, p):
        k = self.manifold.k
        q, _ = self._normalized(p)
        c = p.coset.apply_transpose(self.a @ q) * self.nu
        return TangentM(0.5 * (c[:k] - c[:k].T), 0.5 * c[k:])

    def hess_bilinear(self, p, x, y):
        return self.fd_hess_bilinear(p, x, y)


class TangentPair:
    """Tangent vector on a product manifold, supporting the same arithmetic
    as its components so generic optimizer code can stay oblivious."""

    def __init__(self, left, right):
        self.left = left
        self.right = right

    def __iter__(self):
        return iter((self.left, self.right))

    def __add__(self, other):
        return TangentPair(self.left + other.left, self.right + other.right)

    def __sub__(self, other):
        return TangentPair(self.left - other.left, self.right - other.right)

    def __neg__(self):
        return TangentPair(-self.left, -self.right)

    def __mul__(self, c):
        return TangentPair(c * self.left, c * self.right)

    __rmul__ = __mul__


class ProductStiefel:
    """Product manifold V(m,k) x V(n,k); points are pairs, tangents TangentPair."""

    def __init__(self, m, n, k):
        self.left = Stiefel(m, k)
        self.right = Stiefel(n, k)

    @property
    def dim(self):
        return self.left.dim + self.right.dim

    def exp(self, p, x, t=1.0):
        return (self.left.exp(p[0], x.left, t), self.right.exp(p[1], x.right, t))

    def transport_dir(self, p, x, t):
        return TangentPair(self.left.transport_dir(p[0], x.left, t),
                           self.right.transport_dir(p[1], x.right, t))

    def inner(self, p, x, y):
        return (self.left.inner(None, x.left, y.left)
                + self.right.inner(None, x.right, y.right))

    def norm(self, p, x):
        return float(np.sqrt(max(self.inner(p, x, x), 0.0)))

    def random_point(self, rng):
        return (self.left.random_point(rng), self.right.random_point(rng))

    def random_tangent(self, rng, p=None, scale=1.0):
        x = TangentPair(self.left.random_tangent(rng), self.right.random_tangent(rng))
        return x * (scale / self.norm(p, x))


class SingularPairObjective(Objective):
    """sigma''(p, q) = tr p^T A q N on V(m,k) x V(n,k); critical exactly at
    matched left/right singular-vector frames."""

    def __init__(self, a, n_diag):
        self.a = check_finite(a, "A")
        self.nu = np.asarray(n_diag, dtype=float)
        m, n = self.a.shape
        self.manifold = ProductStiefel(m, n, self.nu.size)

    def value(self, pq):
        p, q = pq
        return float(np.einsum("ij,ij->j", p.p, self.a @ q.p) @ self.nu)

    def _half_gradient(self, point, mate_image, k):
        c = point.coset.apply_transpose(mate_image) * self.nu
        return TangentM(0.5 * (c[:k] - c[:k].T), 0.5 * c[k:])

    def gradient(self, pq):
        p, q = pq
        k = self.nu.size
        return TangentPair(self._half_gradient(p, self.a @ q.p, k),
                           self._half_gradient(q, self.a.T @ p.p, k))

    def hess_bilinear(self, pq, x, y):
        return self.fd_hess_bilinear(pq, x, y)
