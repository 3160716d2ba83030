"""Batch experiment driver: ``riemann-opt {eig|flow|track|bench}``.

Every run resolves its configuration (defaults < config file < flags),
echoes it as ``#``-prefixed comment lines at the top of the output CSV,
and emits one row per iteration/sample.  Runs are deterministic: the same
seed and configuration produce byte-identical CSV.  ``--plot`` renders a
matplotlib figure next to the CSV.

Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .linalg import ArgumentError
from .manifolds import SpecialOrthogonal, Stiefel
from .objectives import Negated, TraceQN
from .optimizers import (
    StoppingCriteria,
    brockett_step,
    conjugate_gradient,
    newton,
    steepest_descent,
)
from .eigensolvers import extreme_eigpair_sphere, newton_rayleigh, topk_eigpairs_stiefel
from .flows import (
    double_bracket_flow,
    genray_flow,
    rate_report,
    rect_diag,
    so_gradient_flow,
    svd_flow_sigma,
    svd_flow_uv,
)
from .tracking import SCENARIOS, TrackerConfig, track


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def parse_spectrum(spec, n=None):
    """Spectrum mini-grammar: 'a..b' integer ramp, 'diag:v1,v2,...', or
    'file:<path>' with one value per line."""
    spec = str(spec)
    if ".." in spec:
        a, b = spec.split("..", 1)
        try:
            a, b = int(a), int(b)
        except ValueError as exc:
            raise UsageError(f"bad ramp spectrum {spec!r}") from exc
        step = 1 if b >= a else -1
        vals = np.arange(a, b + step, step, dtype=float)
    elif spec.startswith("diag:"):
        try:
            vals = np.array([float(v) for v in spec[5:].split(",") if v])
        except ValueError as exc:
            raise UsageError(f"bad diag spectrum {spec!r}") from exc
    elif spec.startswith("file:"):
        try:
            vals = np.loadtxt(spec[5:], ndmin=1)
        except OSError as exc:
            raise UsageError(f"cannot read spectrum file: {exc}") from exc
    else:
        raise UsageError(f"unrecognized spectrum {spec!r} "
                         "(use 'a..b', 'diag:...', or 'file:...')")
    if vals.size == 0:
        raise UsageError(f"empty spectrum {spec!r}")
    if n is not None and vals.size != n:
        raise UsageError(f"spectrum has {vals.size} entries, expected {n}")
    return vals


def read_config_file(path):
    """Flat key-value configuration: 'key = value' lines, '#' comments."""
    out = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip representation
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, config, columns, rows, footer=()):
    lines = [f"# {key} = {config[key]}" for key in sorted(config)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    for extra in footer:
        lines.append(f"# {extra}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def render_plot(path, kind, columns, rows, title):
    """Report figure next to the delimited output (Agg backend)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(rows)
    if not rows:
        return
    data = {c: np.array([r[i] for r in rows], dtype=float)
            for i, c in enumerate(columns)
            if isinstance(rows[0][i], (int, float, np.floating, np.integer))}
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    x_col = columns[0]
    x = data[x_col]
    for name, series in data.items():
        if name == x_col:
            continue
        positive = np.abs(series) + 1e-300
        if kind == "semilogy":
            ax.semilogy(x, positive, label=name, linewidth=1.0)
        elif kind == "loglog":
            ax.loglog(x, positive, marker="o", label=name, linewidth=1.0)
        else:
            ax.plot(x, series, label=name, linewidth=1.0)
    ax.set_xlabel(x_col)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(data) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands


EIG_DEFAULTS = dict(method="cg", manifold="sphere", n=21, k=3, spectrum="21..1",
                    nweights=None, seed=0, tol=1e-10, max_iters=200,
                    gamma="hessian", warm=False, reps=1, out="eig.csv",
                    plot=False)


def cmd_eig(opts):
    n = int(opts["n"])
    spectrum = parse_spectrum(opts["spectrum"], n)
    seed = int(opts["seed"])
    stop = StoppingCriteria(grad_tol=float(opts["tol"]),
                            max_iters=int(opts["max_iters"]))
    rows = []
    columns = None
    summary = []
    for rep in range(int(opts["reps"])):
        rng = np.random.default_rng(seed + rep)
        method = opts["method"]
        if opts["manifold"] == "sphere":
            q = np.diag(spectrum)
            lead = np.zeros(n)
            lead[int(np.argmax(spectrum))] = 1.0
            x0 = rng.standard_normal(n)
            if opts["warm"]:
                x0 = lead + 0.3 * rng.standard_normal(n)
            if method in ("cg", "sd"):
                res = extreme_eigpair_sphere(q, x0, stop=stop, method=method,
                                             reference=lead)
                summary.append(f"rep {rep}: {res.iterations} iterations, "
                               f"final gap {abs(res.value - spectrum.max()):.3e}, "
                               f"{res.matvecs} mat-vecs")
            elif method in ("newton", "rqi"):
                res = newton_rayleigh(q, x0, variant="geodesic" if method == "newton"
                                      else "rqi", stop=stop, reference=lead)
                summary.append(f"rep {rep}: {res.iterations} iterations, "
                               f"final gap {abs(res.value - spectrum.max()):.3e}")
            else:
                raise UsageError(f"unknown method {method!r} for sphere")
            columns = ["rep", "iter", "rho", "grad_norm", "step",
                       "dist_to_reference"]
            rows.extend([rep, r.iter, r.rho, r.grad_norm, r.step,
                         r.dist_to_reference if r.dist_to_reference is not None
                         else np.nan] for r in res.records)
        elif opts["manifold"] == "so":
            q = np.diag(spectrum)
            nu = spectrum.copy()
            obj = Negated(TraceQN(q, nu))
            so = obj.manifold
            if opts["warm"]:
                theta0 = so.exp(np.eye(n), so.random_tangent(rng, scale=0.2), 1.0)
            else:
                theta0 = so.random_point(rng)
            if method == "newton":
                res = newton(so, obj, theta0, stop=stop)
            elif method == "sd":
                def rule(p, h, restriction):
                    # h descends -f, i.e. ascends the weighted trace, so the
                    # curvature bound applies directly
                    return brockett_step(p.T @ q @ p, h, nu)

                res = steepest_descent(so, obj, theta0, stop=stop, step_rule=rule)
            elif method == "cg":
                res = conjugate_gradient(so, obj, theta0, stop=stop,
                                         gamma_mode=opts["gamma"])
            else:
                raise UsageError(f"unknown method {method!r} for so")
            columns = ["rep", "iter", "f", "grad_norm", "step"]
            rows.extend([rep, r.iter, -r.f, r.grad_norm, r.step]
                        for r in res.records)
            summary.append(f"rep {rep}: {res.iterations} iterations, "
                           f"status {res.status}")
        elif opts["manifold"] == "stiefel":
            k = int(opts["k"])
            nu = (parse_spectrum(opts["nweights"], k) if opts["nweights"]
                  else np.arange(float(k), 0.0, -1.0))
            if method != "cg":
                raise UsageError("the stiefel solver runs method 'cg'")
            if opts["gamma"] != "hessian":
                raise UsageError("on the Stiefel manifold only the "
                                 "Hessian-conjugacy mode is available "
                                 "(--gamma hessian)")
            res = topk_eigpairs_stiefel(np.diag(spectrum), nu, rng=rng, stop=stop)
            columns = (["rep", "iter", "rho", "grad_norm", "step"]
                       + [f"lambda_{j+1}" for j in range(k)]
                       + ["resorted", "reset", "orth_defect", "matvecs"])
            rows.extend([rep, r.iter, r.rho, r.grad_norm, r.step,
                         *np.sort(r.diag)[::-1], int(r.resorted), int(r.reset),
                         r.orth_defect, r.matvecs] for r in res.records)
            summary.append(f"rep {rep}: {res.iterations} iterations, residual "
                           f"{res.residual:.3e}, {res.matvecs} mat-vecs")
        else:
            raise UsageError(f"unknown manifold {opts['manifold']!r}")
    return columns, rows, summary, "semilogy"


FLOW_DEFAULTS = dict(flow="svd-uv", n=7, k=5, spectrum=None, nweights=None,
                     t_end=95.0, dt=5e-3, seed=0, observe_every=10,
                     out="flow.csv", plot=False)


def cmd_flow(opts):
    n, k = int(opts["n"]), int(opts["k"])
    seed = int(opts["seed"])
    rng = np.random.default_rng(seed)
    t_end, dt = float(opts["t_end"]), float(opts["dt"])
    every = int(opts["observe_every"])
    kind = opts["flow"]
    footer = []
    if kind == "double-bracket":
        spectrum = (parse_spectrum(opts["spectrum"], n) if opts["spectrum"]
                    else None)
        if spectrum is None:
            h0 = rng.standard_normal((n, n))
            h0 = h0 + h0.T
        else:
            theta = SpecialOrthogonal(n).random_point(rng)
            h0 = theta @ np.diag(spectrum) @ theta.T
        nu = (parse_spectrum(opts["nweights"], n) if opts["nweights"]
              else np.arange(float(n), 0.0, -1.0))
        trace = double_bracket_flow(h0, nu, t_end, dt, observe_every=every)
        columns = ["t", "trace_objective", "offdiag", "spectrum_drift"]
        spec0 = trace.monitors["spectrum"][0] if len(trace.times) else None
        rows = [[t, obj, off, float(np.max(np.abs(spec - spec0)))]
                for t, obj, off, spec in zip(trace.times,
                                             trace.monitors.get("trace_objective", []),
                                             trace.monitors.get("offdiag", []),
                                             trace.monitors.get("spectrum", []))]
    elif kind == "so-gradient":
        spectrum = parse_spectrum(opts["spectrum"] or f"{n}..1", n)
        nu = (parse_spectrum(opts["nweights"], n) if opts["nweights"]
              else spectrum.copy())
        theta0 = SpecialOrthogonal(n).random_point(rng)
        trace = so_gradient_flow(np.diag(spectrum), nu, theta0, t_end, dt,
                                 observe_every=every)
        columns = ["t", "trace_objective", "orth_drift", "det"]
        rows = [[t, obj, d, det] for t, obj, d, det in
                zip(trace.times, trace.monitors.get("trace_objective", []),
                    trace.monitors.get("orth_drift", []),
                    trace.monitors.get("det", []))]
    elif kind == "genray":
        spectrum = parse_spectrum(opts["spectrum"] or f"{n}..1", n)
        nu = (parse_spectrum(opts["nweights"], k) if opts["nweights"]
              else np.arange(float(k), 0.0, -1.0))
        p0 = Stiefel(n, k).random_point(rng)
        trace = genray_flow(np.diag(spectrum), nu, p0, t_end, dt,
                            observe_every=every)
        columns = ["t", "rho", "grad_norm", "orth_drift"] + \
            [f"lambda_{j+1}" for j in range(k)]
        rows = [[t, rho, gn, drift, *diag] for t, rho, gn, drift, diag in
                zip(trace.times, trace.monitors.get("rho", []),
                    trace.monitors.get("grad_norm", []),
                    trace.monitors.get("orth_drift", []),
                    trace.monitors.get("diag", []))]
    elif kind in ("svd-sigma", "svd-uv"):
        sigma_vals = (parse_spectrum(opts["spectrum"], k) if opts["spectrum"]
                      else np.arange(1.0, k + 1.0))
        nu_vals = (parse_spectrum(opts["nweights"], k) if opts["nweights"]
                   else np.arange(float(k), 0.0, -1.0))
        k_mat = rect_diag(n, k, sigma_vals)
        n_rect = rect_diag(n, k, nu_vals)
        entries = [(0, 1), (3, 2), (2, 0), (1, 3), (n - 1, k - 1)] \
            if n >= 4 and k >= 4 else [(i, j) for i in range(min(n, 3))
                                       for j in range(min(k, 3)) if i != j]
        if kind == "svd-sigma":
            from .manifolds import gram_schmidt

            u0 = gram_schmidt(rng.standard_normal((n, n)))
            v0 = gram_schmidt(rng.standard_normal((k, k)))
            trace = svd_flow_sigma(u0.T @ k_mat @ v0, n_rect, t_end, dt,
                                   observe_every=every, entries=entries)
        else:
            from .manifolds import gram_schmidt

            u0 = gram_schmidt(rng.standard_normal((n, n)))
            v0 = gram_schmidt(rng.standard_normal((k, k)))
            trace = svd_flow_uv(k_mat, n_rect, u0, v0, t_end, dt,
                                observe_every=every, entries=entries)
        entry_cols = [f"abs_{i+1}{j+1}" for (i, j) in entries]
        columns = ["t", "trace_objective", "sv_drift"] + entry_cols
        sv0 = np.sort(sigma_vals)[::-1]
        rows = [[t, obj, float(np.max(np.abs(np.sort(sv)[::-1] - sv0))),
                 *[trace.monitors[c][i] for c in entry_cols]]
                for i, (t, obj, sv) in enumerate(
                    zip(trace.times, trace.monitors.get("trace_objective", []),
                        trace.monitors.get("singular_values", [])))]
        if len(trace.times):
            sink_sigma = np.sort(sigma_vals)[::-1]
            order = np.argsort(-nu_vals, kind="stable")
            matched = np.empty(k)
            matched[order] = sink_sigma
            report = rate_report(trace, entries, sigma=matched, nu=nu_vals,
                                 n=n, k=k)
            footer.append("rate entry predicted measured residual")
            for (i, j) in entries:
                fit = report.fits[(i, j)]
                if fit.status == "ok":
                    footer.append(f"rate {i+1}{j+1} "
                                  f"{report.predicted[(i, j)]:.5f} "
                                  f"{fit.rate:.5f} {fit.residual:.2e}")
                else:
                    footer.append(f"rate {i+1}{j+1} "
                                  f"{report.predicted[(i, j)]:.5f} "
                                  f"unmeasurable -")
    else:
        raise UsageError(f"unknown flow {kind!r}")
    if getattr(trace, "status", "ok") != "ok":
        raise NumericalFailure(f"integrator aborted: {trace.status}")
    summary = [f"{len(rows)} samples, t_end={t_end}"] + footer
    return columns, rows, summary, "semilogy", footer


TRACK_DEFAULTS = dict(scenario="first", n=100, k=3, samples=81, seed=0,
                      reset_on_step=False, jitter=False, steps_per_sample=1,
                      reset_on_jump=0.1, out="track.csv", plot=False)


def cmd_track(opts):
    name = opts["scenario"]
    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r} "
                         f"(choose from {sorted(SCENARIOS)})")
    n, k = int(opts["n"]), int(opts["k"])
    sc = SCENARIOS[name](n=n, length=int(opts["samples"]))
    jump = opts["reset_on_jump"]
    jump = None if str(jump).lower() in ("off", "none", "") else float(jump)
    cfg = TrackerConfig(k=k, reset_on_step=_truthy(opts["reset_on_step"]),
                        jitter=_truthy(opts["jitter"]),
                        steps_per_sample=int(opts["steps_per_sample"]),
                        reset_on_jump=jump, seed=int(opts["seed"]))
    rng = np.random.default_rng(int(opts["seed"]))
    p0 = Stiefel(n, k).random_point(rng)
    res = track(sc, cfg, p0)
    columns = (["i", "rho_gap"] + [f"lambda_est_{j+1}" for j in range(k)]
               + ["resorted", "reset"])
    rows = [[r.i, r.rho_gap, *np.sort(r.diag)[::-1], int(r.resorted),
             int(r.reset)] for r in res.records]
    summary = [f"{len(rows)} samples, {res.resorts} resorts, final gap "
               f"{res.records[-1].rho_gap:.3e}"]
    return columns, rows, summary, "semilogy"


BENCH_DEFAULTS = dict(op="stiefel-exp", n_grid="64,128,256,512", k_grid="4",
                      reps=25, seed=0, out="bench.csv", plot=False)


def cmd_bench(opts):
    if opts["op"] != "stiefel-exp":
        raise UsageError("only the stiefel-exp benchmark is available")
    n_grid = [int(v) for v in str(opts["n_grid"]).split(",") if v]
    k_grid = [int(v) for v in str(opts["k_grid"]).split(",") if v]
    reps = int(opts["reps"])
    rng = np.random.default_rng(int(opts["seed"]))
    rows = []
    summary = []
    for k in k_grid:
        for n in n_grid:
            man = Stiefel(n, k)
            p = man.random_point(rng)
            x = man.random_tangent(rng, p)
            man.exp(p, x, 0.7)  # warm up
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                man.exp(p, x, 0.7)
                times.append(time.perf_counter() - t0)
            med = float(np.median(times))
            rows.append([n, k, med, reps])
            summary.append(f"n={n} k={k}: {med*1e6:.1f} us median")
    # scaling ratios between the grid endpoints
    for k in k_grid:
        sub = [(r[0], r[2]) for r in rows if r[1] == k]
        if len(sub) >= 2:
            ratio = sub[-1][1] / sub[0][1]
            summary.append(f"k={k}: time({sub[-1][0]})/time({sub[0][0]}) = {ratio:.2f}")
    return ["n", "k", "median_seconds", "reps"], rows, summary, "loglog"


def _truthy(v):
    return str(v).lower() in ("1", "true", "yes", "on")


COMMANDS = {
    "eig": (cmd_eig, EIG_DEFAULTS),
    "flow": (cmd_flow, FLOW_DEFAULTS),
    "track": (cmd_track, TRACK_DEFAULTS),
    "bench": (cmd_bench, BENCH_DEFAULTS),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="riemann-opt",
        description="Batch experiments for the geodesic optimization toolkit")
    sub = parser.add_subparsers(dest="command")
    for name, (_, defaults) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        for key, val in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(val, bool):
                p.add_argument(flag, nargs="?", const="true",
                               default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, default=argparse.SUPPRESS)
    return parser


def resolve_options(command, namespace):
    _, defaults = COMMANDS[command]
    opts = dict(defaults)
    config_path = getattr(namespace, "config", None)
    if config_path:
        file_opts = read_config_file(config_path)
        unknown = set(file_opts) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(file_opts)
    cli_opts = {k: v for k, v in vars(namespace).items()
                if k not in ("command", "config")}
    opts.update(cli_opts)
    return opts


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        opts = resolve_options(ns.command, ns)
        fn, _ = COMMANDS[ns.command]
        result = fn(opts)
        columns, rows, summary, plot_kind = result[:4]
        footer = result[4] if len(result) > 4 else ()
        out = str(opts["out"])
        write_csv(out, opts, columns, rows, footer=footer)
        if _truthy(opts.get("plot", False)):
            render_plot(out.rsplit(".", 1)[0] + ".png", plot_kind, columns,
                        rows, f"riemann-opt {ns.command}")
        for line in summary:
            print(line)
        print(f"wrote {out} ({len(rows)} rows)")
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ArgumentError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
