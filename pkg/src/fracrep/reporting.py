"""Deterministic report files and the figures rendered alongside them.

CSV uses a period decimal separator, newline-delimited rows, and a header
row; JSON is canonical (sorted keys).  Wall-clock timing never enters the
report files, so repeated runs with one seed are byte-identical; figures
are rendered next to the delimited output but are not part of that
contract.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True,
                      default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_json(path, obj):
    path = Path(path)
    path.write_text(canonical_json(obj) + "\n")
    return path


def write_csv(path, header, rows):
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_path_csv(path, times, values_matrix):
    """Long-format path export: path_id, time, value."""
    values_matrix = np.atleast_2d(values_matrix)
    rows = []
    for pid, vals in enumerate(values_matrix):
        rows.extend((pid, t, v) for t, v in zip(times, vals))
    return write_csv(path, ("path_id", "time", "value"), rows)


def read_path_csv(path):
    """Inverse of write_path_csv for single-path files (time,value pairs)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    if names and "time" in names and "value" in names:
        return np.asarray(data["time"], dtype=float), \
            np.asarray(data["value"], dtype=float)
    raw = np.loadtxt(path, delimiter=",", skiprows=1)
    return raw[:, -2], raw[:, -1]


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _save(fig, out):
    out = Path(out)
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def paths_figure(times, values_matrix, out, title="sample paths",
                 max_paths=20):
    values_matrix = np.atleast_2d(values_matrix)
    fig, ax = plt.subplots(figsize=(7, 4))
    for vals in values_matrix[:max_paths]:
        ax.plot(times, vals, lw=0.8, alpha=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("G(t)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, out)


def trace_figure(trace, out):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(trace.level_times, trace.targets, "o-", label="target $\\xi_n$")
    ax1.plot(trace.level_times, trace.capital_out, "s--",
             label="capital at level end")
    ax1.set_xlabel("$t_n$")
    ax1.legend()
    ax1.set_title("targets vs achieved capital")
    ax1.grid(alpha=0.3)
    ax2.semilogy(trace.levels, np.maximum(trace.sup_psi, 1e-300), "o-",
                 label="sup |psi| on level")
    ax2.semilogy(trace.levels, np.maximum(trace.overshoot, 1e-300), "s--",
                 label="overshoot")
    ax2.set_xlabel("level n")
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, out)


def integrate_figure(times_f, f_vals, times_g, g_vals, summary, out):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(times_f, f_vals, label="integrand f")
    ax.plot(times_g, g_vals, label="integrator g")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title("GLS integral {:.6g}; bound holds: {}".format(
        summary.get("integral", float("nan")), summary.get("bound_holds")))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, out)


def utility_figure(samples, summary, out):
    fig, ax = plt.subplots(figsize=(7, 4))
    finite = np.asarray(samples)
    finite = finite[np.isfinite(finite)]
    ax.hist(finite, bins=80, density=True, alpha=0.8)
    ax.set_xlabel("optimal profile X*")
    ax.set_ylabel("density")
    ax.set_title("E u(X*) = {:.5f}, entropy = {:.5f}".format(
        summary.get("expected_utility", float("nan")),
        summary.get("entropy", float("nan"))))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, out)


def verify_figure(results, out):
    fig, ax = plt.subplots(figsize=(8, 4))
    nums = [r.number for r in results]
    ok = [1 if r.passed else 0 for r in results]
    colors = ["tab:green" if p else "tab:red" for p in ok]
    ax.bar(nums, ok, color=colors)
    ax.set_xticks(nums)
    ax.set_yticks([0, 1])
    ax.set_yticklabels(["fail", "pass"])
    ax.set_xlabel("criterion")
    ax.set_title("acceptance criteria")
    fig.tight_layout()
    return _save(fig, out)


def render_verify_report(results, out_dir, seed, figures=True):
    """Write verify_report.json/.csv (+ summary figure); returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": int(seed),
        "criteria": [
            {"number": r.number, "name": r.name, "passed": bool(r.passed),
             "detail": r.detail,
             "metrics": _strip_timing(r.metrics)}
            for r in results],
        "all_passed": bool(all(r.passed for r in results)),
    }
    files = [write_json(out_dir / "verify_report.json", payload)]
    rows = [(r.number, r.name, r.passed, r.detail) for r in results]
    files.append(write_csv(out_dir / "verify_report.csv",
                           ("criterion", "name", "passed", "detail"), rows))
    if figures:
        files.append(verify_figure(results, out_dir / "verify.png"))
    return files


def _strip_timing(metrics):
    return {k: v for k, v in metrics.items() if not k.endswith("runtime_s")}
