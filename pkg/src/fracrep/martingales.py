"""Itô-side infrastructure: representations with known integrands.

A ClaimSpec packages a terminal payoff ξ together with the adapted
integrand ϑ of its martingale representation ξ = Eξ + ∫ϑ dW and the
state process Z(t) = E[ξ | F_t] evaluated along the path, with Z(T) = ξ.
The density process exp{∫ϑdW - 1/2∫ϑ²ds} supplies measure changes for
the utility layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import processes
from .simulate import GaussianPath, JointPath, holder_exponent_estimate


@dataclass(frozen=True)
class ThetaProcess:
    """Non-anticipating integrand: value at t_i depends on W up to t_i.

    ``evaluator(times, w_values)`` returns the integrand at every grid
    time; implementations must only look backward (library entries are
    pointwise functions of (t, W(t)), which trivially qualifies).
    ``p`` is the declared moment order for ∫|ϑ|^{2p} dt < ∞.
    """

    evaluator: object
    p: float = math.inf
    label: str = ""

    def at(self, times, w_values):
        return np.asarray(self.evaluator(np.asarray(times, dtype=float),
                                         np.asarray(w_values, dtype=float)),
                          dtype=float)


def _wiener_arrays(path):
    if isinstance(path, JointPath):
        return path.times, path.wiener.values
    if isinstance(path, GaussianPath):
        return path.times, path.values
    times, values = path
    return np.asarray(times, dtype=float), np.asarray(values, dtype=float)


def ito_integral(theta: ThetaProcess, path):
    """Forward (left-point) Itô sums of ∫ ϑ dW along the whole grid.

    Returns the cumulative integral aligned with the grid; entry 0 is 0.
    Left endpoints only: adaptedness is load-bearing downstream.
    """
    times, w = _wiener_arrays(path)
    th = theta.at(times[:-1], w[:-1])
    out = np.empty_like(w)
    out[0] = 0.0
    np.cumsum(th * np.diff(w), out=out[1:])
    return out


def quadratic_time_integral(theta: ThetaProcess, path):
    """Left-point sums of ∫ ϑ² ds on the same grid."""
    times, w = _wiener_arrays(path)
    th = theta.at(times[:-1], w[:-1])
    out = np.empty_like(w)
    out[0] = 0.0
    np.cumsum(th * th * np.diff(times), out=out[1:])
    return out


def density_terminal(theta: ThetaProcess, path):
    """φ(T) = exp{∫ϑdW - 1/2 ∫ϑ²ds} with both integrals on the same grid."""
    ito = ito_integral(theta, path)
    quad = quadratic_time_integral(theta, path)
    return float(np.exp(ito[-1] - 0.5 * quad[-1]))


@dataclass(frozen=True)
class DensityProcess:
    theta: ThetaProcess

    def terminal(self, path):
        return density_terminal(self.theta, path)


# ---------------------------------------------------------------------------
# Claim library
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClaimSpec:
    """Named claim with closed-form representation pair (ϑ, Z).

    ``state_values(path)`` evaluates Z along the grid (adapted: entry i
    uses the path only up to time i); the last entry equals the payoff.
    ``r`` is the declared Hölder order of Z; for Itô-flavored claims it
    respects the 1/2 - 1/(2p) ceiling, while fbm_terminal declares the
    regularity of the state process itself.
    """

    name: str
    theta: ThetaProcess
    mean: float
    r: float
    state_fn: object
    needs_transform: bool = False

    def state_values(self, path):
        if self.needs_transform and not isinstance(path, JointPath):
            raise ValueError(f"claim {self.name!r} needs a JointPath")
        times, w = _wiener_arrays(path)
        z = self.state_fn(times, w, path)
        return np.asarray(z, dtype=float)

    def payoff(self, path):
        return float(self.state_values(path)[-1])


def claim_library(name, T=1.0, c=1.0, sigma=1.0, H=0.7):
    """Closed-form representation pairs used by the replication pipeline.

    Available: constant, terminal_wiener, terminal_wiener_squared,
    exponential_martingale, fbm_terminal.
    """
    if name == "constant":
        theta = ThetaProcess(lambda t, w: np.zeros_like(t), p=math.inf,
                             label="0")
        return ClaimSpec(name=name, theta=theta, mean=c, r=0.45,
                         state_fn=lambda t, w, p: np.full_like(t, c))
    if name == "terminal_wiener":
        theta = ThetaProcess(lambda t, w: np.ones_like(t), p=math.inf,
                             label="1")
        return ClaimSpec(name=name, theta=theta, mean=0.0, r=0.45,
                         state_fn=lambda t, w, p: w.copy())
    if name == "terminal_wiener_squared":
        theta = ThetaProcess(lambda t, w: 2.0 * w, p=10.0, label="2W")
        return ClaimSpec(name=name, theta=theta, mean=T, r=0.45,
                         state_fn=lambda t, w, p: w ** 2 + (T - t))
    if name == "exponential_martingale":
        def z_fn(t, w, p):
            return np.exp(sigma * w - 0.5 * sigma * sigma * t)

        theta = ThetaProcess(
            lambda t, w: sigma * np.exp(sigma * w - 0.5 * sigma * sigma * t),
            p=10.0, label=f"{sigma}*Z")
        return ClaimSpec(name=name, theta=theta, mean=1.0, r=0.45,
                         state_fn=z_fn)
    if name == "fbm_terminal":
        # theta is the deterministic kernel slice s -> K^H(T, s); the state
        # process is the transformed path itself, so r comes from the fBm
        # modulus rather than the Itô-integral bound
        def theta_fn(t, w):
            out = np.zeros_like(t)
            pos = t > 0
            if np.any(pos):
                out[pos] = processes.fbm_kernel_batch(
                    H, np.full(int(np.sum(pos)), T), t[pos])
            return out

        p_max = 1.0 / (2.0 * H - 1.0)
        theta = ThetaProcess(theta_fn, p=0.5 * (1.0 + p_max),
                             label=f"K^{H}(T,.)")

        def z_fn(t, w, path):
            return path.transformed.values.copy()

        return ClaimSpec(name=name, theta=theta, mean=0.0, r=H - 0.02,
                         state_fn=z_fn, needs_transform=True)
    raise KeyError(f"unknown claim {name!r}")


CLAIM_NAMES = ("constant", "terminal_wiener", "terminal_wiener_squared",
               "exponential_martingale", "fbm_terminal")


# ---------------------------------------------------------------------------
# Hölder order of Itô integrals
# ---------------------------------------------------------------------------

def holder_of_ito_integral(theta: ThetaProcess, p=None):
    """Hölder ceiling 1/2 - 1/(2p) for ∫ϑdW under ∫|ϑ|^{2p} ds < ∞."""
    p = theta.p if p is None else p
    if not p > 1.0:
        raise ValueError(f"moment order must exceed 1, got {p}")
    if math.isinf(p):
        return 0.5
    return 0.5 - 0.5 / p


def holder_check(theta: ThetaProcess, grid, seed, n_paths=100, p=None):
    """Monte Carlo companion: median estimated exponent of ∫ϑdW paths.

    Returns (median_estimate, bound); callers assert
    median_estimate >= bound - 0.05.
    """
    from .simulate import sample_paths
    from .processes import FBm

    bound = holder_of_ito_integral(theta, p)
    w_paths = sample_paths(FBm(H=0.5, horizon=grid.T), grid, seed, n_paths)
    est = []
    for w in w_paths:
        integ = ito_integral(theta, (grid.times, w))
        est.append(holder_exponent_estimate(integ, grid.times)[0])
    return float(np.median(est)), bound


def moment_condition_check(theta: ThetaProcess, grid, seed, n_paths=200,
                           p=None):
    """Empirical quantiles of ∫|ϑ|^{2p} ds over sampled Wiener paths."""
    from .simulate import sample_paths
    from .processes import FBm

    p = theta.p if p is None else p
    expo = 20.0 if math.isinf(p) else 2.0 * p
    w_paths = sample_paths(FBm(H=0.5, horizon=grid.T), grid, seed, n_paths)
    dt = np.diff(grid.times)
    vals = []
    for w in w_paths:
        th = theta.at(grid.times[:-1], w[:-1])
        vals.append(float(np.sum(np.abs(th) ** expo * dt)))
    vals = np.asarray(vals)
    return {"q50": float(np.quantile(vals, 0.5)),
            "q99": float(np.quantile(vals, 0.99)),
            "max": float(np.max(vals)),
            "finite": bool(np.all(np.isfinite(vals)))}
