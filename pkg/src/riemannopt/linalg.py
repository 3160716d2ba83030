"""Dense kernels: factored Householder QR, canonical skew-symmetric
decomposition and exponential, and a cyclic-Jacobi symmetric eigensolver
used as an independent oracle by the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = np.finfo(float).eps


class ArgumentError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_finite(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ArgumentError(f"{name} contains NaN/Inf entries")
    return m


def check_skew(w, name="matrix"):
    """Reject matrices beyond the skew tolerance ||W+W^T||_F <= 1e-10 (1+||W||_F)."""
    w = check_finite(w, name)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ArgumentError(f"{name} must be square, got {w.shape}")
    defect = np.linalg.norm(w + w.T)
    if defect > 1e-10 * (1.0 + np.linalg.norm(w)):
        raise ArgumentError(f"{name} is not skew-symmetric (defect {defect:.3e})")
    return w


def check_symmetric(s, name="matrix", tol=1e-10):
    s = check_finite(s, name)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ArgumentError(f"{name} must be square, got {s.shape}")
    defect = np.linalg.norm(s - s.T)
    if defect > tol * (1.0 + np.linalg.norm(s)):
        raise ArgumentError(f"{name} is not symmetric (defect {defect:.3e})")
    return s


@dataclass
class FactoredQR:
    """QR factorization of an n-by-k matrix held in factored form.

    The orthogonal factor is never materialized: it is the product
    Q = P_1 ... P_k of Householder reflections P_i = I - beta_i v_i v_i^T,
    stored as the columns of ``reflectors``.  Column j of a reflector is
    nonzero only from row j down; a zero column encodes the identity
    reflection (used for zero pivot columns).  Storage is O(nk).

    Applications run through the compact WY form Q = I - V T V^T (T k-by-k
    upper triangular), so Q m and Q^T m are two skinny matrix products
    instead of k rank-one updates.
    """

    reflectors: np.ndarray  # (n, k), column j = v_j
    betas: np.ndarray       # (k,), beta_j = 2 / v_j^T v_j (0 for identity)
    r_upper: np.ndarray     # (k, k) upper triangular R_1, diagonal >= 0
    n: int
    k: int
    t_block: np.ndarray = None  # (k, k) upper triangular WY factor

    def __post_init__(self):
        if self.t_block is None:
            v = self.reflectors
            t = np.zeros((self.k, self.k))
            for j in range(self.k):
                b = self.betas[j]
                t[j, j] = b
                if j and b != 0.0:
                    t[:j, j] = -b * (t[:j, :j] @ (v[:, :j].T @ v[:, j]))
            self.t_block = t

    def apply(self, m):
        """Return Q @ m = m - V (T (V^T m))."""
        out = np.asarray(m, dtype=float)
        if out.shape[0] != self.n:
            raise ArgumentError(f"apply: expected {self.n} rows, got {out.shape[0]}")
        return out - self.reflectors @ (self.t_block @ (self.reflectors.T @ out))

    def apply_transpose(self, m):
        """Return Q^T @ m = m - V (T^T (V^T m))."""
        out = np.asarray(m, dtype=float)
        if out.shape[0] != self.n:
            raise ArgumentError(f"apply_transpose: expected {self.n} rows, got {out.shape[0]}")
        return out - self.reflectors @ (self.t_block.T @ (self.reflectors.T @ out))

    def q_columns(self, ncols=None):
        """First ``ncols`` columns of Q (default k), materialized explicitly."""
        ncols = self.k if ncols is None else ncols
        e = np.zeros((self.n, ncols))
        np.fill_diagonal(e, 1.0)
        return self.apply(e)


def householder_qr(f) -> FactoredQR:
    """Factored Householder QR of an n-by-k matrix, k <= n.

    Sign convention: each reflector is chosen so the diagonal of R_1 is
    nonnegative; a zero pivot column yields a zero diagonal entry and an
    identity reflector.  Cost k^2 (n - k/3) + O(nk).
    """
    f = check_finite(f, "F")
    if f.ndim != 2:
        raise ArgumentError(f"F must be 2-d, got shape {f.shape}")
    n, k = f.shape
    if k > n:
        raise ArgumentError(f"householder_qr requires k <= n, got {f.shape}")
    r = f.copy()
    vs = np.zeros((n, k))
    betas = np.zeros(k)
    for j in range(k):
        x = r[j:, j]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue  # identity reflector, diagonal 0
        v = x.copy()
        if x[0] <= 0.0:
            v[0] = x[0] - norm_x
        else:
            # stable form of x0 - ||x|| when x0 > 0
            tail = float(x[1:] @ x[1:])
            v[0] = -tail / (x[0] + norm_x)
        vtv = float(v @ v)
        if vtv == 0.0:
            # column already +norm_x * e1: identity reflector
            r[j, j] = norm_x
            r[j + 1:, j] = 0.0
            continue
        beta = 2.0 / vtv
        r[j:, j:] -= beta * np.outer(v, v @ r[j:, j:])
        r[j, j] = norm_x
        r[j + 1:, j] = 0.0
        vs[j:, j] = v
        betas[j] = beta
    return FactoredQR(reflectors=vs, betas=betas, r_upper=r[:k, :].copy(), n=n, k=k)


@dataclass
class SkewCanonical:
    """Canonical decomposition W = theta s theta^T of a skew-symmetric matrix.

    ``s`` is block diagonal with 2x2 blocks [[0, sigma_j], [-sigma_j, 0]]
    (sigmas nonnegative, sorted descending) followed by a zero block of
    size ``zero_count``.
    """

    theta: np.ndarray
    sigmas: np.ndarray
    zero_count: int

    def canonical_matrix(self):
        m = self.theta.shape[0]
        s = np.zeros((m, m))
        for j, sig in enumerate(self.sigmas):
            s[2 * j, 2 * j + 1] = sig
            s[2 * j + 1, 2 * j] = -sig
        return s

    def reconstruct(self):
        return self.theta @ self.canonical_matrix() @ self.theta.T

    def rotation(self, t=1.0):
        """exp(W t) assembled from 2x2 rotation blocks cos/sin(sigma t)."""
        m = self.theta.shape[0]
        if t == 0.0:
            return np.eye(m)
        block = np.eye(m)
        for j, sig in enumerate(self.sigmas):
            c, s = np.cos(sig * t), np.sin(sig * t)
            block[2 * j, 2 * j] = c
            block[2 * j + 1, 2 * j + 1] = c
            block[2 * j, 2 * j + 1] = s
            block[2 * j + 1, 2 * j] = -s
        return self.theta @ block @ self.theta.T


def skew_canonical(w) -> SkewCanonical:
    """Canonical skew-symmetric decomposition via the spectral pairing of -W^2.

    -W^2 is symmetric positive semidefinite with doubled eigenvalues
    sigma_j^2; W maps each paired eigenspace onto itself and acts there as
    a 2x2 rotation generator, which fixes the theta columns.  Eigenvalues
    are clustered before pairing so that v = -W u / ||W u|| stays inside
    the invariant subspace u was drawn from.
    """
    w = check_skew(w, "W")
    m = w.shape[0]
    if m == 0:
        return SkewCanonical(theta=np.eye(0), sigmas=np.zeros(0), zero_count=0)
    scale = np.linalg.norm(w)
    if scale == 0.0:
        return SkewCanonical(theta=np.eye(m), sigmas=np.zeros(0), zero_count=m)
    evals, vecs = np.linalg.eigh(-w @ w)
    order = np.argsort(evals)[::-1]
    evals, vecs = evals[order], vecs[:, order]
    tol0 = 1e3 * EPS * scale
    # eigh resolves eigenvalues of -W^2 to about eps * ||W||^2: cluster at
    # that scale so the doubled eigenvalues pair up and nothing else merges
    cluster_gap = 1e3 * EPS * max(evals[0], 0.0)
    pairs = []
    zeros = []
    start = 0
    while start < m:
        stop = start + 1
        while stop < m and evals[stop - 1] - evals[stop] <= cluster_gap:
            stop += 1
        basis = vecs[:, start:stop].copy()
        accepted = []
        while basis.shape[1] > 0:
            u = basis[:, 0] / np.linalg.norm(basis[:, 0])
            wu = w @ u
            sig = float(np.linalg.norm(wu))
            if sig <= tol0:
                zeros.append(u)
                basis = _deflate(basis, [u])
                continue
            v = -wu / sig
            # scrub floating-point leakage outside the invariant plane
            for c in accepted:
                v -= (c @ v) * c
            v -= (u @ v) * u
            v /= np.linalg.norm(v)
            pairs.append((sig, u, v))
            accepted.extend([u, v])
            basis = _deflate(basis, [u, v])
        start = stop
    pairs.sort(key=lambda t: -t[0])
    cols = []
    for _, u, v in pairs:
        cols.append(u)
        cols.append(v)
    cols.extend(zeros)
    theta = np.column_stack(cols) if cols else np.eye(m)
    # one Newton-Schulz sweep: quadratically removes the ~1e-12 orthogonality
    # defect inherited from the eigenvector basis without disturbing pairing
    theta = theta @ (1.5 * np.eye(m) - 0.5 * (theta.T @ theta))
    sigmas = np.array([sig for sig, _, _ in pairs])
    return SkewCanonical(theta=theta, sigmas=sigmas, zero_count=m - 2 * len(pairs))


def _deflate(basis, used):
    """Project the used directions out of the basis and drop the collapsed ones."""
    p = basis.copy()
    for u in used:
        p -= np.outer(u, u @ p)
    if p.shape[1] <= len(used):
        return p[:, :0]
    # keep the strongest q - len(used) orthonormal directions
    left, _, _ = np.linalg.svd(p, full_matrices=False)
    return left[:, : p.shape[1] - len(used)]


def skew_expm(w, t=1.0):
    """Orthogonal matrix exp(W t) for skew-symmetric W, via the canonical
    decomposition (2x2 rotation blocks)."""
    return skew_canonical(w).rotation(t)


def jacobi_eigh(s, tol=1e-14, max_sweeps=50):
    """Symmetric eigendecomposition by cyclic Jacobi sweeps.

    Returns (eigenvalues sorted descending, orthonormal eigenvectors as
    columns).  Test-scale oracle: simple and quadratically convergent,
    independent of the LAPACK-backed paths it cross-checks.
    """
    a = check_symmetric(s, "S").copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a) + 1.0
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 0.25 * tol * scale / max(n, 1):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                rot_p = c * a[:, p] - sn * a[:, q]
                rot_q = sn * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - sn * a[q, :]
                rot_q = sn * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - sn * v[:, q]
                rot_q = sn * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    evals = np.diag(a).copy()
    order = np.argsort(evals)[::-1]
    return evals[order], v[:, order]
