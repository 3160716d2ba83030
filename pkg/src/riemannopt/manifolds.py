"""Exact geodesics, parallel translation and metric structure for the
sphere S^{n-1}, the rotation group SO(n), and the Stiefel manifold V(n,k)
realized as the homogeneous space O(n)/O(n-k).

Stiefel tangent vectors are stored compressed: a k-by-k skew block ``a``
and an (n-k)-by-k block ``b``, standing for the n-by-n skew matrix
[[a, -b^T], [b, 0]].  The identification of such a block with a tangent
vector at a point depends on the chosen coset representative, so every
TangentM is bound to the coset it was expressed in; cross-point
comparisons go through ``Stiefel.change_coset``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    ArgumentError,
    FactoredQR,
    check_finite,
    check_skew,
    householder_qr,
    skew_canonical,
    skew_expm,
)


# ---------------------------------------------------------------------------
# sphere


class Sphere:
    """Unit sphere S^{n-1} embedded in R^n with the induced round metric."""

    def __init__(self, n):
        if n < 2:
            raise ArgumentError("sphere needs ambient dimension >= 2")
        self.n = n

    @property
    def dim(self):
        return self.n - 1

    def check_point(self, x):
        x = check_finite(x, "x")
        if x.shape != (self.n,) or abs(x @ x - 1.0) > 1e-12 * self.n:
            raise ArgumentError("x is not a unit vector in R^n")
        return x

    def check_tangent(self, x, v):
        v = check_finite(v, "v")
        if abs(x @ v) > 1e-8 * (1.0 + np.linalg.norm(v)):
            raise ArgumentError("v is not tangent at x")
        return v

    def exp(self, x, v, t=1.0):
        """Geodesic from x with velocity v, evaluated at parameter t."""
        self.check_tangent(x, v)
        speed = np.linalg.norm(v)
        theta = t * speed
        if theta == 0.0:
            return x.copy()
        out = x * np.cos(theta) + (v / speed) * np.sin(theta)
        return out / np.linalg.norm(out)  # keep the unit invariant exact

    def transport(self, x, h, t, w):
        """Parallel translation of w along the geodesic with unit direction h."""
        nh = np.linalg.norm(h)
        if abs(nh - 1.0) > 1e-10:
            raise ArgumentError("transport needs a unit direction h")
        return w - (h @ w) * (x * np.sin(t) + h * (1.0 - np.cos(t)))

    def transport_along(self, x, v, t, w):
        """Parallel translation of w along exp_x(tv) for v of any length."""
        speed = np.linalg.norm(v)
        if speed == 0.0:
            return w.copy()
        return self.transport(x, v / speed, t * speed, w)

    def transport_dir(self, x, v, t):
        """Transport of v along its own geodesic (tau v = v cos - x ||v|| sin)."""
        speed = np.linalg.norm(v)
        theta = t * speed
        return v * np.cos(theta) - x * (speed * np.sin(theta))

    def inner(self, x, u, v):
        return float(u @ v)

    def norm(self, x, v):
        return float(np.linalg.norm(v))

    def distance(self, x, y):
        # arccos(x . y), evaluated in the chord form that is exact near 0
        return float(2.0 * np.arcsin(np.clip(0.5 * np.linalg.norm(x - y), -1.0, 1.0)))

    def project(self, x, v):
        return v - (x @ v) * x

    def random_point(self, rng):
        x = rng.standard_normal(self.n)
        return x / np.linalg.norm(x)

    def random_tangent(self, rng, x, scale=1.0):
        v = self.project(x, rng.standard_normal(self.n))
        return scale * v / np.linalg.norm(v)

    def zero_tangent(self, x):
        return np.zeros(self.n)


# ---------------------------------------------------------------------------
# special orthogonal group


class SpecialOrthogonal:
    """SO(n) with the bi-invariant metric <X,Y> = tr X^T Y on so(n).

    Tangent vectors are kept left-translated: the skew matrix Omega stands
    for the tangent vector Theta @ Omega at the point Theta.
    """

    def __init__(self, n):
        if n < 2:
            raise ArgumentError("SO(n) needs n >= 2")
        self.n = n

    @property
    def dim(self):
        return self.n * (self.n - 1) // 2

    def check_point(self, theta):
        theta = check_finite(theta, "Theta")
        if np.linalg.norm(theta.T @ theta - np.eye(self.n)) > 1e-10 * self.n:
            raise ArgumentError("Theta is not orthogonal")
        if np.linalg.det(theta) < 0:
            raise ArgumentError("Theta has determinant -1 (not in SO(n))")
        return theta

    def exp(self, theta, omega, t=1.0):
        check_skew(omega, "Omega")
        return theta @ skew_expm(omega, t)

    def transport(self, theta, omega, t, y0):
        """Left-translated representation of the parallel translation of y0
        along the geodesic with direction omega: e^{-(t/2) X} Y0 e^{(t/2) X}."""
        check_skew(y0, "Y0")
        half = skew_expm(omega, t / 2.0)
        return half.T @ y0 @ half

    def transport_along(self, theta, omega, t, y0):
        return self.transport(theta, omega, t, y0)

    def transport_dir(self, theta, omega, t):
        return omega.copy()  # commutes with its own geodesic

    def inner(self, theta, x, y):
        return float(np.sum(x * y))

    def norm(self, theta, x):
        return float(np.linalg.norm(x))

    def distance(self, theta, psi):
        angles = np.angle(np.linalg.eigvals(theta.T @ psi))
        return float(np.linalg.norm(angles) / np.sqrt(2.0))

    def random_point(self, rng):
        q = gram_schmidt(rng.standard_normal((self.n, self.n)))
        if np.linalg.det(q) < 0:
            q[:, -1] = -q[:, -1]
        return q

    def random_tangent(self, rng, theta=None, scale=1.0):
        m = rng.standard_normal((self.n, self.n))
        w = m - m.T
        return scale * w / np.linalg.norm(w)

    def zero_tangent(self, theta):
        return np.zeros((self.n, self.n))


# ---------------------------------------------------------------------------
# Stiefel manifold


def gram_schmidt(m):
    """Orthonormalize the columns of m by modified Gram-Schmidt."""
    q = np.array(m, dtype=float, copy=True)
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        nj = np.linalg.norm(q[:, j])
        if nj == 0.0:
            raise ArgumentError("rank-deficient input to Gram-Schmidt")
        q[:, j] /= nj
    return q


@dataclass
class TangentM:
    """Compressed Stiefel tangent: k-by-k skew ``a`` over (n-k)-by-k ``b``.

    The metric inherited from tr X^T Y on the full skew matrices is
    <x, y> = tr(a_x^T a_y) + 2 tr(b_x^T b_y); the b block appears twice in
    the embedding, hence the factor two.
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if np.linalg.norm(self.a + self.a.T) > 1e-10 * (1.0 + np.linalg.norm(self.a)):
            raise ArgumentError("a block must be skew-symmetric")

    @property
    def k(self):
        return self.a.shape[0]

    @property
    def n(self):
        return self.a.shape[0] + self.b.shape[0]

    def compressed(self):
        """The n-by-k stack (a over b)."""
        return np.vstack([self.a, self.b])

    def full(self):
        """The full n-by-n skew matrix [[a, -b^T], [b, 0]]."""
        n, k = self.n, self.k
        x = np.zeros((n, n))
        x[:k, :k] = self.a
        x[k:, :k] = self.b
        x[:k, k:] = -self.b.T
        return x

    def __add__(self, other):
        return TangentM(self.a + other.a, self.b + other.b)

    def __sub__(self, other):
        return TangentM(self.a - other.a, self.b - other.b)

    def __neg__(self):
        return TangentM(-self.a, -self.b)

    def __mul__(self, c):
        return TangentM(c * self.a, c * self.b)

    __rmul__ = __mul__


@dataclass
class StiefelCoset:
    """Coset representative g = Q diag(R1, I) of a Stiefel point, held in
    factored form: the Householder QR of p plus the snapped sign block."""

    qr: FactoredQR
    signs: np.ndarray  # (k,) entries +/-1

    @property
    def n(self):
        return self.qr.n

    @property
    def k(self):
        return self.qr.k

    def apply(self, m):
        """g @ m without materializing g."""
        out = np.array(m, dtype=float, copy=True)
        out[: self.k] *= self.signs[:, None] if out.ndim == 2 else self.signs
        return self.qr.apply(out)

    def apply_transpose(self, m):
        """g^T @ m without materializing g."""
        out = self.qr.apply_transpose(m)
        if out.ndim == 2:
            out[: self.k] *= self.signs[:, None]
        else:
            out[: self.k] *= self.signs
        return out

    def origin_image(self):
        """g . o, the point this coset represents."""
        e = np.zeros((self.n, self.k))
        np.fill_diagonal(e, 1.0)
        return self.apply(e)


@dataclass
class StiefelPoint:
    """Point on V(n,k) with a lazily computed coset representative."""

    p: np.ndarray
    _coset: StiefelCoset | None = None
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        p = check_finite(self.p, "p")
        n, k = p.shape
        if k > n:
            raise ArgumentError("Stiefel point needs k <= n")
        if np.linalg.norm(p.T @ p - np.eye(k)) > 1e-8 * k:
            raise ArgumentError("p does not have orthonormal columns")

    @property
    def n(self):
        return self.p.shape[0]

    @property
    def k(self):
        return self.p.shape[1]

    @property
    def coset(self):
        if self._coset is None:
            self._coset = stiefel_coset(self.p)
        return self._coset


def stiefel_coset(p) -> StiefelCoset:
    """Coset representative g = Q diag(R1, I) from the factored QR of p.

    For orthonormal p the triangular factor is diagonal +/-1; under the
    nonnegative-diagonal reflector convention it snaps to the identity,
    but the signs are kept explicit so a slightly drifted p still maps to
    an exactly orthogonal g.
    """
    qr = householder_qr(p)
    d = np.diag(qr.r_upper)
    if np.any(np.abs(np.abs(d) - 1.0) > 1e-6):
        raise ArgumentError("p is too far from orthonormal for a coset representative")
    signs = np.where(d >= 0.0, 1.0, -1.0)
    return StiefelCoset(qr=qr, signs=signs)


class StiefelGeodesicRay:
    """One geodesic t -> g e^{xt} . o on V(n,k), prefactored for repeated
    evaluation along the ray.

    Uses the reduced 2k-by-2k path (QR of the b block, canonical
    decomposition of the reduced generator), so each evaluation after the
    O(nk^2) setup costs O(nk^2) with no further decompositions.  Requires
    2k <= n.
    """

    def __init__(self, point: StiefelPoint, x: TangentM):
        n, k = point.n, point.k
        if 2 * k > n:
            raise ArgumentError("reduced geodesic path requires 2k <= n")
        self.point = point
        self.x = x
        self.n, self.k = n, k
        self.qr_b = householder_qr(x.b)
        self.r1 = self.qr_b.r_upper
        xp = np.zeros((2 * k, 2 * k))
        xp[:k, :k] = x.a
        xp[k:, :k] = self.r1
        xp[:k, k:] = -self.r1.T
        self.reduced_generator = xp
        self.canonical = skew_canonical(xp)
        # basis of the 2k-dim subspace the geodesic moves in, pushed by g
        e = np.zeros((n, 2 * k))
        np.fill_diagonal(e[:k], 1.0)
        e[k:, k:] = self.qr_b.q_columns(k)
        self.basis = point.coset.apply(e)  # n x 2k, orthonormal columns

    def reduced_rotation(self, t):
        return self.canonical.rotation(t)

    def factors(self, t):
        """(point factor, velocity factor): 2k-by-k blocks M_t and x' M_t."""
        w = self.reduced_rotation(t)
        m = w[:, : self.k]
        return m, self.reduced_generator @ m

    def point_at(self, t) -> StiefelPoint:
        m, _ = self.factors(t)
        return StiefelPoint(self.basis @ m)

    def velocity_ambient(self, t):
        _, dm = self.factors(t)
        return self.basis @ dm

    def direction_at(self, t, coset: StiefelCoset) -> TangentM:
        """m-representation, w.r.t. ``coset``, of the transported direction
        tau x at the point reached at parameter t.

        Along its own geodesic the direction keeps the same block (a, b)
        w.r.t. the traveled representative g e^{xt}; only the coset change
        to the fresh representative of the endpoint is computed.
        """
        w = self.reduced_rotation(t)
        stacked = w @ np.vstack([self.x.a, self.r1])  # e^{x't} (a over R1)
        ambient = self.basis @ stacked  # g e^{xt} (a over b)
        rep = coset.apply_transpose(ambient)
        return TangentM(self.x.a.copy(), rep[self.k:])


class Stiefel:
    """V(n,k) = O(n)/O(n-k) with the metric induced by tr X^T Y on m."""

    def __init__(self, n, k):
        if not 1 <= k <= n:
            raise ArgumentError("Stiefel needs 1 <= k <= n")
        self.n = n
        self.k = k

    @property
    def dim(self):
        return self.k * (self.k - 1) // 2 + (self.n - self.k) * self.k

    def point(self, p) -> StiefelPoint:
        return StiefelPoint(np.array(p, dtype=float, copy=True))

    def origin(self) -> StiefelPoint:
        e = np.zeros((self.n, self.k))
        np.fill_diagonal(e, 1.0)
        return StiefelPoint(e)

    def ray(self, p: StiefelPoint, x: TangentM) -> StiefelGeodesicRay:
        return StiefelGeodesicRay(p, x)

    def exp(self, p: StiefelPoint, x: TangentM, t=1.0) -> StiefelPoint:
        """Geodesic g e^{xt} . o; reduced 2k-by-2k path when 2k <= n,
        full n-by-n skew exponential otherwise."""
        if 2 * self.k <= self.n:
            return StiefelGeodesicRay(p, x).point_at(t)
        rot = skew_expm(x.full(), t)
        return StiefelPoint(p.coset.apply(rot[:, : self.k]))

    def transport_dir(self, p: StiefelPoint, x: TangentM, t) -> TangentM:
        """tau x at exp_p(tx), w.r.t. the fresh coset of the endpoint."""
        if 2 * self.k <= self.n:
            ray = StiefelGeodesicRay(p, x)
            return ray.direction_at(t, ray.point_at(t).coset)
        target = self.exp(p, x, t)
        rot = skew_expm(x.full(), t)
        ambient = p.coset.apply((rot @ x.compressed()))
        rep = target.coset.apply_transpose(ambient)
        return TangentM(x.a.copy(), rep[self.k:])

    def change_coset(self, x: TangentM, g1: StiefelCoset, g2: StiefelCoset) -> TangentM:
        """Re-express x, given w.r.t. g1, in the basis implied by g2.

        Both cosets must represent the same point; then h = g2^{-1} g1 is
        in the isotropy group, the a block is unchanged, and b picks up
        the O(n-k) rotation h'.
        """
        if np.linalg.norm(g1.origin_image() - g2.origin_image()) > 1e-8:
            raise ArgumentError("cosets represent different points")
        w = g2.apply_transpose(g1.apply(x.compressed()))
        return TangentM(x.a.copy(), w[self.k:])

    def transport(self, p: StiefelPoint, x: TangentM, t, y0: TangentM,
                  steps_per_unit=200) -> TangentM:
        """Parallel translation of y0 along the geodesic with direction x,
        by RK4 integration of y' = -1/2 [x, y]_m on the same parameter
        clock as ``exp`` (the result at t lives at exp_p(tx), expressed
        w.r.t. the traveled representative g e^{xt}).

        Reference and testing use only; the optimizers never call it.
        """
        ax, bx = x.a, x.b
        ya, yb = y0.a.copy(), y0.b.copy()

        def rhs(ya, yb):
            da = -0.5 * ((ax @ ya - ya @ ax) + yb.T @ bx - bx.T @ yb)
            db = -0.5 * (bx @ ya - yb @ ax)
            return da, db

        scale = 1.0 + np.linalg.norm(ax) + np.linalg.norm(bx)
        nsteps = max(int(np.ceil(abs(t) * scale * steps_per_unit)), 1)
        h = t / nsteps
        for _ in range(nsteps):
            k1a, k1b = rhs(ya, yb)
            k2a, k2b = rhs(ya + 0.5 * h * k1a, yb + 0.5 * h * k1b)
            k3a, k3b = rhs(ya + 0.5 * h * k2a, yb + 0.5 * h * k2b)
            k4a, k4b = rhs(ya + h * k3a, yb + h * k3b)
            ya = ya + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
            yb = yb + (h / 6.0) * (k1b + 2 * k2b + 2 * k3b + k4b)
        ya = 0.5 * (ya - ya.T)
        return TangentM(ya, yb)

    def inner(self, p, x: TangentM, y: TangentM):
        return float(np.sum(x.a * y.a) + 2.0 * np.sum(x.b * y.b))

    def norm(self, p, x: TangentM):
        return float(np.sqrt(max(self.inner(p, x, x), 0.0)))

    def distance(self, p: StiefelPoint, q: StiefelPoint):
        """Chordal surrogate ||p - q||_F (used for convergence regression)."""
        return float(np.linalg.norm(p.p - q.p))

    def random_point(self, rng) -> StiefelPoint:
        return StiefelPoint(gram_schmidt(rng.standard_normal((self.n, self.k))))

    def random_tangent(self, rng, p=None, scale=1.0) -> TangentM:
        a = rng.standard_normal((self.k, self.k))
        a = a - a.T
        b = rng.standard_normal((self.n - self.k, self.k))
        x = TangentM(a, b)
        nx = self.norm(p, x)
        return x * (scale / nx) if nx > 0 else x

    def zero_tangent(self, p) -> TangentM:
        return TangentM(np.zeros((self.k, self.k)), np.zeros((self.n - self.k, self.k)))

    def tangent_from_ambient(self, p: StiefelPoint, v) -> TangentM:
        """m-representation (w.r.t. p's coset) of an ambient tangent matrix v
        with p^T v skew."""
        w = p.coset.apply_transpose(v)
        a = 0.5 * (w[: self.k] - w[: self.k].T)
        return TangentM(a, w[self.k:])

    def ambient_from_tangent(self, p: StiefelPoint, x: TangentM):
        """Ambient n-by-k velocity of t -> g e^{xt} . o at t = 0 (= g x o)."""
        return p.coset.apply(x.compressed())
