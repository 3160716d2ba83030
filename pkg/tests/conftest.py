import numpy as np


def fd_slope(objective, p, x, h=1e-5):
    """Central finite difference of t -> f(exp_p(tx)) at t = 0."""
    man = objective.manifold
    return (objective.value(man.exp(p, x, h))
            - objective.value(man.exp(p, x, -h))) / (2.0 * h)


def fd_second(objective, p, x, h=1e-4):
    """Central second difference of t -> f(exp_p(tx)) at t = 0."""
    man = objective.manifold
    return (objective.value(man.exp(p, x, h)) - 2.0 * objective.value(p)
            + objective.value(man.exp(p, x, -h))) / (h * h)


def loglog_slope(ts, errs):
    """Least-squares slope of log err against log t, ignoring zero errors."""
    ts = np.asarray(ts, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = errs > 0
    if keep.sum() < 3:
        return np.inf  # remainder at noise floor: better than any finite order
    return float(np.polyfit(np.log(ts[keep]), np.log(errs[keep]), 1)[0])


def taylor_remainder_slope(objective, p, x, ts=None):
    """Order of the second-order Taylor remainder of f along exp_p(tx)."""
    man = objective.manifold
    ts = np.geomspace(1e-3, 1e-1, 9) if ts is None else ts
    f0 = objective.value(p)
    s0 = man.inner(p, objective.gradient(p), x)
    h0 = objective.hess_bilinear(p, x, x)
    errs = [abs(objective.value(man.exp(p, x, t)) - f0 - t * s0 - 0.5 * t * t * h0)
            for t in ts]
    return loglog_slope(ts, errs)
