"""Exact sampling of Gaussian paths and of jointly adapted (W, G) pairs.

Sampling is exact in the finite-dimensional sense: Cholesky of the grid
covariance for any model, or circulant embedding of the stationary
increments for fractional Brownian motion on uniform grids.  Streams are
counter-based (Philox keyed by (seed, path index)), so parallel path
generation is reproducible regardless of scheduling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import processes
from .processes import CovarianceModel, FBm

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleGrid:
    """Strictly increasing times from 0 to the horizon T."""

    times: np.ndarray
    kind: str = "uniform"
    theta: float | None = None
    n_levels: int | None = None
    m: int | None = None
    level_index: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("grid needs at least two times")
        if t[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def n(self):
        return self.times.size

    def index_of(self, t, tol=1e-12):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(self.T, 1.0):
            raise KeyError(f"time {t} is not a grid point")
        return i


def uniform_grid(T, n):
    """n+1 equally spaced times on [0, T]."""
    return SampleGrid(times=np.linspace(0.0, float(T), int(n) + 1),
                      kind="uniform")


@dataclass(frozen=True)
class GaussianPath:
    grid: SampleGrid
    values: np.ndarray
    model_tag: str = ""
    seed_key: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.times.shape:
            raise ValueError("values must align with the grid")
        object.__setattr__(self, "values", v)

    @property
    def times(self):
        return self.grid.times


@dataclass(frozen=True)
class JointPath:
    """Driving Wiener path and its adapted transform on a common grid."""

    wiener: GaussianPath
    transformed: GaussianPath

    def __post_init__(self):
        if self.wiener.grid.n != self.transformed.grid.n or \
           not np.array_equal(self.wiener.times, self.transformed.times):
            raise ValueError("wiener and transformed must share the grid")

    @property
    def grid(self):
        return self.wiener.grid

    @property
    def times(self):
        return self.wiener.times


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

def path_rng(seed, path_index=0):
    """Counter-based generator for one path: key = (seed, path_index)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(path_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Exact samplers
# ---------------------------------------------------------------------------

class CholeskyFactor:
    """Cached factor of the grid covariance for repeated path draws.

    Factors the *increment correlation* matrix: equivalent in law to
    factoring the value covariance, but numerically robust on geometric
    grids whose steps span many orders of magnitude.
    """

    def __init__(self, model: CovarianceModel, grid: SampleGrid):
        self.model = model
        self.grid = grid
        C = processes.increment_covariance_matrix(model, grid.times)
        sds = np.sqrt(np.clip(np.diag(C), 0.0, None))
        if np.any(sds <= 0):
            raise SimulationError(
                f"degenerate increment variance for {model.tag} on grid "
                f"with {grid.n} points (T={grid.T})")
        corr = C / np.outer(sds, sds)
        try:
            self.L = np.linalg.cholesky(corr + 1e-12 * np.eye(len(corr)))
        except np.linalg.LinAlgError as exc:
            raise SimulationError(
                f"covariance factorization failed for {model.tag} on "
                f"grid with {grid.n} points (T={grid.T})") from exc
        self.sds = sds
        self.mean = model.mean(grid.times)

    def sample(self, rng, n_paths=1):
        z = rng.standard_normal((n_paths, self.grid.n - 1))
        inc = (z @ self.L.T) * self.sds[None, :]
        out = np.zeros((n_paths, self.grid.n))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out + self.mean[None, :]


def sample_path(model, grid, seed, method="cholesky", path_index=0,
                factor=None):
    """One exact path of the model on the grid; deterministic given the key."""
    paths = sample_paths(model, grid, seed, n_paths=1, method=method,
                         first_index=path_index, factor=factor)
    return GaussianPath(grid=grid, values=paths[0], model_tag=model.tag,
                        seed_key=(seed, path_index))


def sample_paths(model, grid, seed, n_paths, method="cholesky",
                 first_index=0, factor=None):
    """Matrix of exact paths (n_paths, n_times); row i uses key (seed, i)."""
    if method == "circulant":
        return _sample_circulant(model, grid, seed, n_paths, first_index)
    if method != "cholesky":
        raise ValueError(f"unknown sampling method {method!r}")
    if factor is None:
        factor = CholeskyFactor(model, grid)
    out = np.empty((n_paths, grid.n))
    for i in range(n_paths):
        rng = path_rng(seed, first_index + i)
        out[i] = factor.sample(rng, 1)[0]
    return out


def _sample_circulant(model, grid, seed, n_paths, first_index):
    """Davies-Harte sampling of fBm increments on a uniform grid.

    Falls back to Cholesky (with a log warning) when the circulant
    embedding is not nonnegative definite.
    """
    if not isinstance(model, FBm):
        raise SimulationError(
            f"circulant sampling requires stationary increments (fBm); "
            f"got {model.tag}")
    dt = np.diff(grid.times)
    if not np.allclose(dt, dt[0], rtol=1e-10, atol=0.0):
        raise SimulationError("circulant sampling requires a uniform grid")
    n = grid.n - 1
    h2 = 2.0 * model.H
    k = np.arange(n + 1, dtype=float)
    acov = 0.5 * (np.abs(k + 1) ** h2 + np.abs(k - 1) ** h2 - 2 * k ** h2)
    circ = np.concatenate([acov, acov[-2:0:-1]])
    eig = np.fft.fft(circ).real
    if np.min(eig) < -1e-10 * np.max(eig):
        log.warning("circulant embedding not PSD for H=%.3f, n=%d; "
                    "falling back to cholesky", model.H, n)
        return sample_paths(model, grid, seed, n_paths, method="cholesky",
                            first_index=first_index)
    eig = np.clip(eig, 0.0, None)
    m = 2 * n
    scale = dt[0] ** model.H
    out = np.empty((n_paths, grid.n))
    for i in range(n_paths):
        rng = path_rng(seed, first_index + i)
        z0, zn = rng.standard_normal(2)
        zc = rng.standard_normal((n - 1, 2))
        spectrum = np.empty(m, dtype=complex)
        spectrum[0] = z0 * np.sqrt(m)
        spectrum[n] = zn * np.sqrt(m)
        body = (zc[:, 0] + 1j * zc[:, 1]) * np.sqrt(m / 2.0)
        spectrum[1:n] = body
        spectrum[n + 1:] = np.conj(body[::-1])
        fgn = np.fft.ifft(np.sqrt(eig) * spectrum).real[:n] * scale
        out[i, 0] = 0.0
        out[i, 1:] = np.cumsum(fgn)
    return out


# ---------------------------------------------------------------------------
# Jointly adapted (W, B^H)
# ---------------------------------------------------------------------------

class JointSampler:
    """Precomputed lower-triangular kernel map from Wiener increments to fBm.

    B^H(t_i) = sum_{j<i} Kbar[i,j] dW_j with Kbar the step-averaged kernel
    (midpoint rule), so Cov(W(s), B^H(t)) = ∫_0^{s∧t} K^H(t,u) du holds
    exactly in the discrete model.
    """

    def __init__(self, H, grid: SampleGrid):
        if not 0.5 <= H < 1.0:
            raise ValueError(f"joint sampling needs H in [1/2,1), got {H}")
        self.H = H
        self.grid = grid
        self.dt = np.diff(grid.times)
        if H == 0.5:
            self.weights = None     # identity transform
        else:
            self.weights = processes.kernel_step_weights(H, grid.times)

    def sample(self, seed, path_index=0):
        rng = path_rng(seed, path_index)
        dw = rng.standard_normal(self.dt.size) * np.sqrt(self.dt)
        w = np.concatenate([[0.0], np.cumsum(dw)])
        if self.weights is None:
            bh = w.copy()
        else:
            bh = self.weights @ dw
        wiener = GaussianPath(grid=self.grid, values=w, model_tag="Wiener",
                              seed_key=(seed, path_index))
        transformed = GaussianPath(grid=self.grid, values=bh,
                                   model_tag=f"FBm(H={self.H})",
                                   seed_key=(seed, path_index))
        return JointPath(wiener=wiener, transformed=transformed)


def sample_joint(H, grid, seed, path_index=0, sampler=None):
    """Jointly adapted (W, B^H) on a grid; lower-triangular construction."""
    if sampler is None:
        sampler = JointSampler(H, grid)
    return sampler.sample(seed, path_index)


# ---------------------------------------------------------------------------
# Hölder exponent estimation
# ---------------------------------------------------------------------------

_EULER_GAMMA = 0.5772156649015329


def holder_exponent_estimate(values, times=None, n_scales=6,
                             modulus_correction=True):
    """Estimate the path Hölder exponent from dyadic max increments.

    Regresses log max|g(t+k dt) - g(t)| on log(k dt) over dyadic lags k.
    Raw max increments carry the modulus-of-continuity log factor, which
    biases the slope; each scale is therefore normalized by the expected
    Gaussian maximum over its effective number of windows ((n-k)/sqrt(k),
    between the disjoint and the fully overlapping counts, calibrated on
    fBm).  Returns (estimate, half_width), the estimate capped at 1.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2 ** (n_scales + 1):
        raise ValueError(
            f"path too short for {n_scales} dyadic scales "
            f"({values.size} points)")
    if times is None:
        dt = 1.0 / (values.size - 1)
    else:
        steps = np.diff(np.asarray(times, dtype=float))
        if not np.allclose(steps, steps[0], rtol=1e-8, atol=0.0):
            raise ValueError("estimator requires a uniform grid")
        dt = float(steps[0])
    if n_scales < 4:
        raise ValueError("need at least 4 dyadic scales")

    n = values.size
    lags = 2 ** np.arange(n_scales)
    xs, ys = [], []
    for k in lags:
        diffs = np.abs(values[k:] - values[:-k])
        m = float(np.max(diffs))
        if m <= 0.0:
            continue
        y = np.log(m)
        if modulus_correction:
            count = max((n - k) / np.sqrt(k), 3.0)
            L = np.log(2.0 * count)
            loc = (np.sqrt(2.0 * L)
                   - (np.log(L) + np.log(4.0 * np.pi)) / (2.0 * np.sqrt(2.0 * L)))
            y -= np.log(loc + _EULER_GAMMA / loc)
        xs.append(np.log(k * dt))
        ys.append(y)
    if len(xs) < 4:
        raise ValueError("too few usable scales (flat path?)")
    xs, ys = np.asarray(xs), np.asarray(ys)
    A = np.vstack([xs, np.ones_like(xs)]).T
    coef, res, _, _ = np.linalg.lstsq(A, ys, rcond=None)
    slope = float(coef[0])
    dof = max(len(xs) - 2, 1)
    sigma2 = float(res[0]) / dof if res.size else 0.0
    sx = float(np.sum((xs - xs.mean()) ** 2))
    half_width = 2.0 * np.sqrt(sigma2 / sx) if sx > 0 else np.inf
    return min(slope, 1.0), half_width
