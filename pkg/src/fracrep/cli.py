"""Reproducible experiment harness.

Subcommands: simulate | integrate | replicate | utility | verify.  Each
run takes a JSON config, validates every parameter before any file is
written, and emits delimited data files plus a rendered figure under the
output directory together with a deterministic report record.

Exit codes: 0 pass, 1 criterion/metric failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import (acceptance, fractional, martingales, processes, replication,
               reporting, simulate, utility)


class ConfigError(ValueError):
    pass


def _need(config, key, kind=None):
    if key not in config:
        raise ConfigError(f"missing config key {key!r}")
    val = config[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"config key {key!r} must be {kind}, got {val!r}")
    return val


def build_model(spec, horizon=1.0):
    """Covariance model from a config mapping (variant name + parameters)."""
    if not isinstance(spec, dict):
        raise ConfigError("model spec must be a mapping")
    variant = _need(spec, "variant", str).lower()
    try:
        if variant == "fbm":
            return processes.FBm(H=float(_need(spec, "H")), horizon=horizon)
        if variant == "subfbm":
            return processes.SubFBm(H=float(_need(spec, "H")), horizon=horizon)
        if variant == "bifbm":
            return processes.BiFBm(A=float(_need(spec, "A")),
                                   K=float(_need(spec, "K")), horizon=horizon)
        if variant == "fou":
            return processes.FOu(H=float(_need(spec, "H")),
                                 a=float(spec.get("a", 0.0)),
                                 y0=float(spec.get("y0", 0.0)),
                                 sigma=float(spec.get("sigma", 1.0)),
                                 horizon=horizon)
        if variant == "mixed":
            return processes.mixed_fbm(float(_need(spec, "H")), horizon=horizon)
        if variant == "lincombo":
            comps = tuple((float(a), float(h))
                          for a, h in _need(spec, "components", list))
            return processes.LinearCombo(components=comps, horizon=horizon)
        if variant == "volterra_fbm":
            H = float(_need(spec, "H"))
            kern = lambda t, s: processes.fbm_kernel_batch(
                H, np.full(np.atleast_1d(s).size, t), np.atleast_1d(s))
            return processes.VolterraKernelModel(
                kernel=kern, H=H, r=H - 0.5, D1=0.05, D2=5.0, D3=5.0,
                horizon=horizon)
    except processes.ModelError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown model variant {variant!r}")


def build_theta(spec):
    if not isinstance(spec, dict):
        raise ConfigError("theta spec must be a mapping")
    kind = _need(spec, "kind", str).lower()
    if kind == "constant":
        value = float(_need(spec, "value"))
        return martingales.ThetaProcess(
            lambda t, w: np.full(np.broadcast(t, w).shape, value),
            p=math.inf, label=f"const({value})")
    if kind == "power_drift":
        try:
            return utility.fbm_market_theta(
                float(_need(spec, "H")), float(_need(spec, "mu")),
                float(_need(spec, "r_rate")), float(_need(spec, "sigma")))
        except utility.UtilityError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown theta kind {kind!r}")


def build_utility(spec):
    if not isinstance(spec, dict):
        raise ConfigError("utility spec must be a mapping")
    variant = _need(spec, "variant", str).lower()
    try:
        if variant == "exponential":
            return utility.exponential_utility(float(_need(spec, "beta"))), False
        if variant == "power":
            return utility.power_utility(float(_need(spec, "gamma"))), True
        if variant == "log":
            return utility.log_utility(), True
    except utility.UtilityError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown utility variant {variant!r}")


def _load_function(spec, out_times):
    """Integrand/integrator spec: polynomial coefficients or a CSV path."""
    if not isinstance(spec, dict):
        raise ConfigError("function spec must be a mapping")
    kind = _need(spec, "kind", str).lower()
    if kind == "poly":
        coeffs = [float(c) for c in _need(spec, "coeffs", list)]
        vals = np.polynomial.polynomial.polyval(out_times, coeffs)
        return out_times, vals
    if kind == "csv":
        times, vals = reporting.read_path_csv(_need(spec, "path", str))
        return times, vals
    if kind == "fbm_path":
        H = float(_need(spec, "H"))
        n = int(spec.get("grid_points", 512))
        seed = int(spec.get("seed", 0))
        grid = simulate.uniform_grid(out_times[-1], n)
        path = simulate.sample_path(processes.FBm(H=H), grid, seed)
        return grid.times, path.values
    raise ConfigError(f"unknown function kind {kind!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(config, out, seed, quiet):
    T = float(config.get("T", 1.0))
    n = int(_need(config, "grid_points"))
    n_paths = int(config.get("paths", 1))
    method = config.get("method", "cholesky")
    if method not in ("cholesky", "circulant"):
        raise ConfigError(f"unknown sampling method {method!r}")
    if n < 1 or n_paths < 1 or T <= 0:
        raise ConfigError("grid_points, paths and T must be positive")
    model = build_model(_need(config, "model"), horizon=T)
    grid = simulate.uniform_grid(T, n)

    X = simulate.sample_paths(model, grid, seed, n_paths, method=method)
    files = [reporting.write_path_csv(out / "paths.csv", grid.times, X)]

    # covariance spot check against the model law
    R = processes.covariance_matrix(model, grid.times)
    mean = model.mean(grid.times)
    emp = (X - mean).T @ (X - mean) / n_paths
    se = np.sqrt((np.outer(np.diag(R), np.diag(R)) + R ** 2)
                 / n_paths) + 1e-300
    max_z = float(np.max(np.abs(emp - R)[1:, 1:] / se[1:, 1:]))
    metrics = {"max_covariance_z": max_z, "paths": n_paths,
               "grid_points": n, "method": method}
    files.append(reporting.paths_figure(
        grid.times, X, out / "paths.png",
        title=f"{model.tag} paths (seed {seed})"))
    passed = max_z <= 4.0 or n_paths < 100
    return metrics, passed, files


def cmd_integrate(config, out, seed, quiet):
    interval = config.get("interval", [0.0, 1.0])
    if not (isinstance(interval, list) and len(interval) == 2
            and interval[1] > interval[0]):
        raise ConfigError("interval must be [a, b] with a < b")
    alpha = float(_need(config, "alpha"))
    if not 0.0 < alpha < 0.5:
        raise ConfigError(f"alpha must lie in (0, 1/2), got {alpha}")
    ref_times = np.linspace(interval[0], interval[1], 513)
    tf, vf = _load_function(_need(config, "f"), ref_times)
    tg, vg = _load_function(_need(config, "g"), ref_times)

    value = fractional.gls_integral((tf, vf), (tg, vg), alpha,
                                    tuple(interval), rtol=2e-3, order=16,
                                    check_norm=False)
    chk = fractional.verify_bound((tf, vf), (tg, vg), alpha, tuple(interval))
    metrics = {"integral": value, "bound_lhs": chk.lhs, "bound_rhs": chk.rhs,
               "bound_holds": bool(chk.holds),
               "lambda_alpha": chk.lambda_value,
               "weighted_norm": chk.norm_value}
    files = [reporting.write_csv(
        out / "integrate.csv",
        ("integral", "bound_lhs", "bound_rhs", "bound_holds"),
        [(value, chk.lhs, chk.rhs, chk.holds)])]
    files.append(reporting.integrate_figure(tf, vf, tg, vg, metrics,
                                            out / "integrate.png"))
    return metrics, bool(chk.holds), files


def cmd_replicate(config, out, seed, quiet):
    rc = _need(config, "replication")
    try:
        cfg = replication.ReplicationConfig(
            theta=float(_need(rc, "theta")), alpha=float(_need(rc, "alpha")),
            H=float(_need(rc, "H")), r=float(_need(rc, "r")),
            n_levels=int(_need(rc, "n_levels")),
            m_sub=int(rc.get("m_sub", 4)),
            fine_per_sub=int(rc.get("fine_per_sub", 6)),
            blocks=int(rc.get("blocks", 8)),
            gain_margin=float(rc.get("gain_margin", 0.5)),
            base_points=int(rc.get("base_points", 64)))
    except replication.ReplicationError as exc:
        raise ConfigError(str(exc)) from exc
    n_paths = int(config.get("paths", 10))
    T = float(config.get("T", 1.0))
    claim_spec = _need(config, "claim")
    name = _need(claim_spec, "name", str)
    if name not in martingales.CLAIM_NAMES:
        raise ConfigError(f"unknown claim {name!r}; "
                          f"choose from {martingales.CLAIM_NAMES}")
    claim = martingales.claim_library(
        name, T=T, c=float(claim_spec.get("c", 1.0)),
        sigma=float(claim_spec.get("sigma", 1.0)),
        H=float(claim_spec.get("H", cfg.H)))

    grid = replication.replication_grid(cfg, T=T)
    model = processes.FBm(H=cfg.H)
    traces = []
    first_trace = None
    # every claim is driven by the joint (W, B^H) pair: the integrator is
    # the transformed path, the state process reads the Wiener component
    sampler = simulate.JointSampler(cfg.H, grid)
    for i in range(n_paths):
        path = sampler.sample(seed, path_index=i)
        _, tr = replication.build_replicating_strategy(
            path, claim.state_values(path), cfg, model=model)
        traces.append(tr)
        if first_trace is None:
            first_trace = tr

    rows = [(int(n), t, xi, v, ach, sup)
            for n, t, xi, v, ach, sup in zip(
                first_trace.levels, first_trace.level_times,
                first_trace.targets, first_trace.capital_out,
                first_trace.achieved, first_trace.sup_psi)]
    files = [reporting.write_csv(
        out / "trace.csv",
        ("level", "t_n", "target", "capital", "achieved", "sup_psi"), rows)]
    term = [tr.terminal_error for tr in traces]
    track = [tr.tracking_error for tr in traces]
    metrics = {
        "paths": n_paths,
        "median_terminal_error": float(np.median(term)),
        "median_tracking_error": float(np.median(track)),
        "median_last_gap": float(np.median(
            [abs(tr.targets[-1] - tr.targets[-2]) for tr in traces])),
        "sup_psi_max": float(max(np.max(tr.sup_psi) for tr in traces)),
        "all_achieved_fraction": float(np.mean(
            [tr.achieved.all() for tr in traces])),
    }
    files.append(reporting.write_json(out / "summary.json", metrics))
    files.append(reporting.trace_figure(first_trace, out / "trace.png"))
    passed = metrics["median_tracking_error"] <= metrics["median_last_gap"]
    return metrics, passed, files


def cmd_utility(config, out, seed, quiet):
    util, restricted = build_utility(_need(config, "utility"))
    theta = build_theta(_need(config, "theta"))
    w = float(_need(config, "w"))
    n_samples = int(config.get("samples", 200_000))
    if n_samples < 100:
        raise ConfigError("samples must be at least 100")
    if restricted and w <= 0:
        raise ConfigError("restricted utilities need a positive budget w")
    problem = utility.UtilityProblem(
        utility=util, w=w, density=martingales.DensityProcess(theta=theta),
        T=float(config.get("T", 1.0)), n_samples=n_samples, seed=seed,
        restricted=restricted)
    c = utility.solve_budget_constant(problem)
    prof = utility.optimal_profile(problem, c=c)
    metrics = {
        "c": c,
        "expected_utility": prof.expected_utility,
        "expected_utility_se": prof.expected_utility_se,
        "entropy": prof.entropy,
        "entropy_se": prof.entropy_se,
        "budget_residual": prof.budget_residual,
        "budget_se": prof.budget_se,
        "infinite_utility_flag": prof.infinite_utility,
    }
    files = [reporting.write_json(out / "utility.json", metrics)]
    files.append(reporting.utility_figure(prof.samples, metrics,
                                          out / "utility.png"))
    passed = abs(prof.budget_residual) <= max(3.0 * prof.budget_se, 1e-9) \
        and not prof.infinite_utility
    return metrics, passed, files


def cmd_verify(config, out, seed, quiet):
    numbers = config.get("criteria", sorted(acceptance.CRITERIA))
    bad = [k for k in numbers if k not in acceptance.CRITERIA]
    if bad:
        raise ConfigError(f"unknown criteria {bad}; valid: "
                          f"{sorted(acceptance.CRITERIA)}")
    echo = None if quiet else print
    results = acceptance.run_criteria(numbers, seed=seed, echo=echo)
    files = reporting.render_verify_report(results, out, seed=seed)
    metrics = {"criteria_run": list(numbers),
               "passed": [r.number for r in results if r.passed],
               "failed": [r.number for r in results if not r.passed]}
    return metrics, all(r.passed for r in results), files


COMMANDS = {
    "simulate": cmd_simulate,
    "integrate": cmd_integrate,
    "replicate": cmd_replicate,
    "utility": cmd_utility,
    "verify": cmd_verify,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fracrep",
        description="pathwise fractional calculus and replication experiments")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (optional for verify)")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker threads for Monte Carlo phases")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        config = {}
        if args.config is not None:
            try:
                config = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        elif args.subcommand != "verify":
            raise ConfigError(f"{args.subcommand} requires --config")
        if not isinstance(config, dict):
            raise ConfigError("config root must be a JSON object")
        seed = args.seed if args.seed is not None else \
            int(config.get("seed", acceptance.DEFAULT_SEED))
        if seed < 0 or seed > 2 ** 64 - 1:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        metrics, passed, files = COMMANDS[args.subcommand](
            config, out, seed, args.quiet)
        wall = time.time() - t0
        record = {
            "experiment": args.subcommand,
            "config_hash": reporting.config_hash(
                {"subcommand": args.subcommand, "config": config,
                 "seed": seed}),
            "seed": seed,
            "config": config,
            "metrics": metrics,
            "passed": bool(passed),
        }
        report_path = reporting.write_json(out / "report.json", record)
        if not args.quiet:
            print(f"{args.subcommand}: {'PASS' if passed else 'FAIL'} "
                  f"({wall:.1f}s wall)")
            print(f"outputs: {', '.join(str(f) for f in files)}")
            print(f"report: {report_path}")
        return 0 if passed else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
