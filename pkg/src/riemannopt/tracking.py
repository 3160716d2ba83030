"""Adaptive subspace tracking: moving-window and fading-memory covariance
estimators, time-varying test scenarios with a step change, and the
tracker that performs one (or a few) conjugate-gradient steps per sample,
resorting the diagonal weights and resetting the direction whenever the
running eigenvalue estimates fall out of order."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .linalg import ArgumentError, check_symmetric, jacobi_eigh
from .manifolds import StiefelPoint
from .objectives import GenRayleigh, Negated, SymmetricOperator
from .optimizers import CgDriver, LineSearchParams
from .eigensolvers import similarly_ordered


# ---------------------------------------------------------------------------
# covariance estimators


class CovarianceWindow:
    """Moving-window estimate R = (1/l) X X^T; until the window fills, the
    normalization uses the actual sample count.

    The data matrix is kept, so the estimate can be consumed either as an
    explicit matrix or matrix-free through v -> (1/l) X (X^T v), avoiding
    the squaring of the data.
    """

    def __init__(self, n, length):
        if length < 1:
            raise ArgumentError("window length must be positive")
        self.n = n
        self.length = length
        self.samples = deque()

    def update(self, x_new):
        x_new = np.asarray(x_new, dtype=float)
        if x_new.shape != (self.n,):
            raise ArgumentError(f"expected a length-{self.n} sample")
        self.samples.append(x_new)
        if len(self.samples) > self.length:
            self.samples.popleft()
        return self

    @property
    def count(self):
        return len(self.samples)

    def data_matrix(self):
        if not self.samples:
            raise ArgumentError("no samples yet")
        return np.column_stack(self.samples)

    def estimate(self):
        x = self.data_matrix()
        return (x @ x.T) / self.count

    def operator(self) -> SymmetricOperator:
        """Matrix-free v -> (1/l) X (X^T v) through the scaled data factor."""
        return SymmetricOperator(factor=self.data_matrix() / np.sqrt(self.count))


class FadingMemory:
    """Fading-memory covariance estimates: either the Frobenius-normalized
    accumulation P = R + x x^T, R <- P/||P||, or the weighted recursion
    R <- alpha R + beta x x^T."""

    def __init__(self, r0, mode="normalized", alpha=None, beta=None):
        self.r = check_symmetric(np.asarray(r0, dtype=float), "R0")
        if mode not in ("normalized", "weighted"):
            raise ArgumentError(f"unknown fading mode {mode!r}")
        if mode == "weighted" and (alpha is None or beta is None):
            raise ArgumentError("weighted mode needs alpha and beta")
        self.mode = mode
        self.alpha = alpha
        self.beta = beta
        self.t = 0

    def update(self, x_new):
        x_new = np.asarray(x_new, dtype=float)
        outer = np.outer(x_new, x_new)
        if self.mode == "normalized":
            p = self.r + outer
            norm = np.linalg.norm(p)
            if norm == 0.0:
                raise ArgumentError("all-zero history: estimate undefined")
            self.r = p / norm
        else:
            a = self.alpha(self.t) if callable(self.alpha) else self.alpha
            b = self.beta(self.t) if callable(self.beta) else self.beta
            self.r = a * self.r + b * outer
        self.t += 1
        return self

    def estimate(self):
        return self.r

    def operator(self) -> SymmetricOperator:
        return SymmetricOperator(matrix=self.r)


# ---------------------------------------------------------------------------
# scenarios


def plane_rotation(n, i, j, degrees):
    """Rotation of the (e_i, e_j) plane by the given angle."""
    theta = np.deg2rad(degrees)
    r = np.eye(n)
    r[i, i] = r[j, j] = np.cos(theta)
    r[i, j] = np.sin(theta)
    r[j, i] = -np.sin(theta)
    return r


@dataclass
class Scenario:
    """Time-indexed family of symmetric matrices with step changes at known
    sample indices, plus per-phase reference optima computed on demand."""

    name: str
    phases: list            # list of (start_index, matrix)
    length: int
    step_times: tuple = ()
    _cache: dict = field(default_factory=dict)

    def matrix(self, i):
        current = self.phases[0][1]
        for start, mat in self.phases:
            if i >= start:
                current = mat
        return current

    def phase_index(self, i):
        idx = 0
        for j, (start, _) in enumerate(self.phases):
            if i >= start:
                idx = j
        return idx

    def reference(self, i, nu):
        """(rho at the optimum, leading eigenvalues) for the phase of sample
        i, via the symmetric eigendecomposition oracle."""
        key = (self.phase_index(i), tuple(nu))
        if key not in self._cache:
            evals, _ = jacobi_eigh(self.matrix(i))
            nu_sorted = np.sort(np.asarray(nu, dtype=float))[::-1]
            k = nu_sorted.size
            rho_star = float(evals[:k] @ nu_sorted)
            self._cache[key] = (rho_star, evals[:k].copy())
        return self._cache[key]


def _ramp(n):
    return np.diag(np.arange(float(n), 0.0, -1.0))


def scenario_first(n=100, step=40, length=81) -> Scenario:
    """Step rotation of the leading two-dimensional invariant subspace by
    135 degrees; the spectrum is unchanged."""
    a1 = _ramp(n)
    theta1 = plane_rotation(n, 0, 1, 135.0)
    a2 = theta1 @ a1 @ theta1.T
    return Scenario("first", [(0, a1), (step + 1, a2)], length, (step + 1,))


def scenario_second(n=100, step=40, length=81) -> Scenario:
    """Step rotation of three planes by 135 degrees combined with a step in
    the eigenvalues: entries 4..6 jump above the old leaders, to n+1, n+2,
    n+3 (101, 102, 103 at the standard size)."""
    if n < 6:
        raise ArgumentError("second scenario needs n >= 6")
    a1 = _ramp(n)
    d = np.arange(float(n), 0.0, -1.0)
    d[3], d[4], d[5] = n + 1.0, n + 2.0, n + 3.0
    theta2 = (plane_rotation(n, 0, 3, 135.0) @ plane_rotation(n, 1, 4, 135.0)
              @ plane_rotation(n, 2, 5, 135.0))
    a2 = theta2 @ np.diag(d) @ theta2.T
    return Scenario("second", [(0, a1), (step + 1, a2)], length, (step + 1,))


def scenario_third(n=100, step=40, length=81) -> Scenario:
    """Step exchange of the leading subspace with an orthogonal one: the
    first and second diagonal triples swap, so the old maximizer becomes an
    exact saddle point (at the standard size the eigenvalues 100, 99, 98
    move to the 4th..6th coordinate directions)."""
    if n < 6:
        raise ArgumentError("third scenario needs n >= 6")
    a1 = _ramp(n)
    d = np.arange(float(n), 0.0, -1.0)
    d[:3], d[3:6] = d[3:6].copy(), d[:3].copy()
    return Scenario("third", [(0, a1), (step + 1, np.diag(d))], length, (step + 1,))


SCENARIOS = {"first": scenario_first, "second": scenario_second,
             "third": scenario_third}


# ---------------------------------------------------------------------------
# the tracker


@dataclass
class TrackerConfig:
    k: int = 3
    n_weights: np.ndarray | None = None  # default diag(k, ..., 1)
    steps_per_sample: int = 1
    reset_on_step: bool = False
    reset_on_jump: float | None = 0.1    # relative jump threshold; None disables
    jitter: bool = False
    jitter_magnitude: float = 1e-13
    jitter_grad_threshold: float = 1e-12
    jitter_gap_threshold: float = 1e-3
    seed: int = 0
    linesearch: LineSearchParams = field(default_factory=LineSearchParams)
    reset_period: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ArgumentError("tracker needs k >= 1")
        if self.steps_per_sample < 1:
            raise ArgumentError("steps_per_sample must be positive")

    def weights(self):
        if self.n_weights is not None:
            return np.asarray(self.n_weights, dtype=float)
        return np.arange(float(self.k), 0.0, -1.0)


@dataclass
class TrackRecord:
    i: int
    rho: float
    rho_gap: float | None
    diag: np.ndarray
    resorted: bool
    reset: bool
    grad_norm: float
    orth_defect: float


@dataclass
class TrackResult:
    records: list
    point: StiefelPoint
    status: str
    resorts: int

    def gaps(self):
        return np.array([r.rho_gap for r in self.records])

    def diag_history(self):
        return np.stack([r.diag for r in self.records])


def _escape_step(driver):
    """Saddle-escape step: minimize the geodesic restriction by a dense arc
    scan (the literal arg-min step of the tracking algorithm).

    Near a saddle the directional slope sits below floating-point noise, so
    the Wolfe bracketing cannot see the descent; the restriction itself is
    cheap (no operator applications), and the scan locates the O(1)-arc
    dip that the quadratic model cannot.
    """
    h_norm = driver.manifold.norm(driver.p, driver.h)
    if h_norm == 0.0:
        return
    r = driver.objective.line_restriction(driver.p, driver.h)
    arcs = np.geomspace(1e-6, np.pi, 60)
    ts = arcs / h_norm
    phis = np.array([r.phi(t) for t in ts])
    best = int(np.argmin(phis))
    if phis[best] >= driver.f:
        return
    lam = ts[best]
    driver.p = r.point(lam)
    driver.f = phis[best]
    driver.grad = r.gradient(lam)
    driver.g = -1.0 * driver.grad
    driver.last_step = lam
    driver.last_tau_h = None
    driver.reset_direction()


def track(scenario: Scenario, config: TrackerConfig, p0: StiefelPoint,
          operators=None) -> TrackResult:
    """One conjugate-gradient step per sample against the current matrix.

    Per sample: the gradient is recomputed for the new matrix while the
    previous direction is carried over through the conjugacy recurrence;
    if the diagonal estimates are no longer ordered like the weights, the
    weights are resorted and the direction resets; optional resets fire at
    known step times or on large objective jumps.  The seeded jitter
    (disabled by default) perturbs a vanishing gradient at a large
    objective gap, making escape from exact saddle points deterministic.
    """
    nu0 = config.weights()
    objective = GenRayleigh(scenario.matrix(0), nu0)
    manifold = objective.manifold
    driver = CgDriver(manifold, Negated(objective), p0,
                      linesearch=config.linesearch, gamma_mode="hessian",
                      reset_period=config.reset_period or manifold.dim)
    rng = np.random.default_rng(config.seed)
    records = []
    resorts = 0
    status = "ok"
    rho_prev = None
    current_matrix = scenario.matrix(0)
    for i in range(scenario.length):
        mat = scenario.matrix(i)
        reset_flag = False
        resorted_flag = False
        if mat is not current_matrix:
            # new sample matrix: refresh gradient, keep the direction
            # through the conjugacy recurrence unless a reset rule fires
            current_matrix = mat
            objective = GenRayleigh(mat, objective.nu)
            driver.set_objective(Negated(objective), reset=False)
            driver.rebuild_direction()
        if config.reset_on_step and i in scenario.step_times:
            driver.reset_direction()
            reset_flag = True
        diag = objective.diag_estimates(driver.p)
        if not similarly_ordered(diag, objective.nu):
            order = np.empty(nu0.size, dtype=int)
            order[np.argsort(-diag, kind="stable")] = np.argsort(
                -objective.nu, kind="stable")
            objective = objective.resorted(order)
            driver.set_objective(Negated(objective))
            resorts += 1
            resorted_flag = True
            reset_flag = True
        rho = -driver.f
        if (config.reset_on_jump is not None and rho_prev is not None
                and abs(rho - rho_prev) > config.reset_on_jump * abs(rho_prev)):
            driver.reset_direction()
            reset_flag = True
        rho_star, _ = scenario.reference(i, nu0)
        gap = abs(rho - rho_star)
        escape = (config.jitter and driver.grad_norm < config.jitter_grad_threshold
                  and gap > config.jitter_gap_threshold)
        if escape:
            bump = manifold.random_tangent(rng, driver.p,
                                           scale=config.jitter_magnitude)
            driver.g = driver.g + bump
            driver.grad = -1.0 * driver.g
            driver.reset_direction()
            reset_flag = True
        orth = float(np.linalg.norm(driver.p.p.T @ driver.p.p - np.eye(config.k)))
        records.append(TrackRecord(i, rho, gap, diag.copy(), resorted_flag,
                                   reset_flag or driver.since_reset == 0,
                                   driver.grad_norm, orth))
        if escape:
            # the Wolfe search is blind at noise-level slopes: take the
            # literal arg-min step along the jittered direction instead
            _escape_step(driver)
        else:
            for _ in range(config.steps_per_sample):
                lam, ls_status = driver.step()
                if ls_status in ("line_search_failure", "zero_gradient"):
                    break
        rho_prev = -driver.f
    return TrackResult(records=records, point=driver.p, status=status,
                       resorts=resorts)


def track_from_data(stream, estimator, config: TrackerConfig, p0: StiefelPoint,
                    matrix_free=True) -> TrackResult:
    """Feed a stream of data vectors through a covariance estimator and
    track its dominant subspace, one conjugate-gradient step per sample.
    With ``matrix_free`` the window estimator is consumed through its data
    factor, so the data is never squared."""
    samples = list(stream)
    if not samples:
        raise ArgumentError("empty data stream")
    nu0 = config.weights()
    records = []
    driver = None
    objective = None
    resorts = 0
    rng = np.random.default_rng(config.seed)
    for i, x in enumerate(samples):
        estimator.update(x)
        op = estimator.operator() if matrix_free and hasattr(estimator, "operator") \
            else SymmetricOperator(matrix=estimator.estimate())
        if driver is None:
            objective = GenRayleigh(op, nu0)
            if objective.manifold.n != p0.n:
                raise ArgumentError("estimator and start frame dimensions differ")
            driver = CgDriver(objective.manifold, Negated(objective), p0,
                              linesearch=config.linesearch,
                              gamma_mode="hessian",
                              reset_period=config.reset_period
                              or objective.manifold.dim)
        else:
            objective = GenRayleigh(op, objective.nu)
            driver.set_objective(Negated(objective), reset=False)
            driver.rebuild_direction()
        diag = objective.diag_estimates(driver.p)
        reset_flag = False
        if not similarly_ordered(diag, objective.nu):
            order = np.empty(nu0.size, dtype=int)
            order[np.argsort(-diag, kind="stable")] = np.argsort(
                -objective.nu, kind="stable")
            objective = objective.resorted(order)
            driver.set_objective(Negated(objective))
            resorts += 1
            reset_flag = True
        orth = float(np.linalg.norm(driver.p.p.T @ driver.p.p - np.eye(config.k)))
        records.append(TrackRecord(i, -driver.f, None, diag.copy(), reset_flag,
                                   reset_flag or driver.since_reset == 0,
                                   driver.grad_norm, orth))
        for _ in range(config.steps_per_sample):
            lam, ls_status = driver.step()
            if ls_status in ("line_search_failure", "zero_gradient"):
                break
    return TrackResult(records=records, point=driver.p, status="ok",
                       resorts=resorts)
