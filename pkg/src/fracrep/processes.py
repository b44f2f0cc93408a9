"""Covariance models for the Gaussian integrators used throughout.

Every model is a centered Gaussian process described by its covariance
function (fractional Ornstein-Uhlenbeck additionally carries the
deterministic mean y0*exp(a*t)).  The quasi-helix condition (A) and the
positive-increment-correlation condition (B) are checked numerically on
grids; the Volterra kernel K^H tying fractional Brownian motion to its
driving Wiener process is evaluated by graded singular quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.special import gamma as gamma_fn

from .quadrature import (
    QuadratureError,
    adaptive_gauss,
    graded_cells,
    power_mesh,
    power_weighted_integral,
    power_weighted_integral_batch,
)


class ModelError(ValueError):
    """Parameter out of range for a covariance model."""


def _require(cond, msg):
    if not cond:
        raise ModelError(msg)


# ---------------------------------------------------------------------------
# Model variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceModel:
    """Base class; concrete variants implement ``covariance``."""

    horizon: float = 1.0

    def covariance(self, s, t):
        raise NotImplementedError

    def mean(self, t):
        """Deterministic mean, zero for centered variants."""
        return np.zeros_like(np.asarray(t, dtype=float))

    @property
    def tag(self):
        return type(self).__name__


@dataclass(frozen=True)
class FBm(CovarianceModel):
    """Fractional Brownian motion, E G(s)G(t) = (s^2H + t^2H - |t-s|^2H)/2."""

    H: float = 0.5

    def __post_init__(self):
        _require(0.0 < self.H < 1.0, f"Hurst index must lie in (0,1), got {self.H}")
        _require(self.horizon > 0, "horizon must be positive")

    def covariance(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        h2 = 2.0 * self.H
        return 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)


@dataclass(frozen=True)
class SubFBm(CovarianceModel):
    """Subfractional Brownian motion with index H."""

    H: float = 0.5

    def __post_init__(self):
        _require(0.0 < self.H < 1.0, f"index must lie in (0,1), got {self.H}")

    def covariance(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        h2 = 2.0 * self.H
        return (s ** h2 + t ** h2
                - 0.5 * (np.abs(t + s) ** h2 + np.abs(t - s) ** h2))


@dataclass(frozen=True)
class BiFBm(CovarianceModel):
    """Bifractional Brownian motion with indices A, K; quasi-helix H = A*K."""

    A: float = 0.5
    K: float = 1.0

    def __post_init__(self):
        _require(0.0 < self.A < 1.0, f"A must lie in (0,1), got {self.A}")
        _require(0.0 < self.K <= 1.0, f"K must lie in (0,1], got {self.K}")

    def covariance(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        a2, k = 2.0 * self.A, self.K
        return (0.5 ** k) * ((s ** a2 + t ** a2) ** k
                             - np.abs(t - s) ** (a2 * k))


@dataclass(frozen=True)
class LinearCombo(CovarianceModel):
    """Sum of independent fBms: sum_i a_i B^{H_i}."""

    components: tuple = ()   # ((weight, H), ...)

    def __post_init__(self):
        _require(len(self.components) > 0, "at least one component required")
        for a, h in self.components:
            _require(np.isfinite(a), f"weight {a} is not finite")
            _require(0.0 < h < 1.0, f"Hurst index must lie in (0,1), got {h}")

    def covariance(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        total = np.zeros(np.broadcast(s, t).shape)
        for a, h in self.components:
            h2 = 2.0 * h
            total = total + (a * a) * 0.5 * (
                np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)
        return total

    @property
    def smallest_hurst(self):
        return min(h for _, h in self.components)


def mixed_fbm(H, horizon=1.0):
    """Mixed fractional Brownian motion W + B^H as a two-term combination."""
    return LinearCombo(horizon=horizon, components=((1.0, 0.5), (1.0, H)))


@dataclass(frozen=True)
class FOu(CovarianceModel):
    """Fractional Ornstein-Uhlenbeck: Y(t) = y0 e^{at} + sigma ∫_0^t e^{a(t-v)} dB^H(v).

    The covariance has no closed form here; it is computed by double
    quadrature of the moving-average representation against the fBm
    increment kernel H(2H-1)|u-v|^{2H-2} (valid for H > 1/2).
    """

    H: float = 0.7
    a: float = 0.0
    y0: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        _require(0.5 < self.H < 1.0,
                 f"fOU requires H in (1/2,1), got {self.H}")
        _require(self.sigma > 0, "sigma must be positive")
        object.__setattr__(self, "_cov_cache", {})

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        return self.y0 * np.exp(self.a * t)

    def covariance(self, s, t):
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        if s_arr.ndim == 0 and t_arr.ndim == 0:
            return self._cov_scalar(float(s_arr), float(t_arr))
        s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
        out = np.empty(s_b.shape)
        for idx in np.ndindex(s_b.shape):
            out[idx] = self._cov_scalar(float(s_b[idx]), float(t_b[idx]))
        return out

    def _cov_scalar(self, s, t):
        if s > t:
            s, t = t, s
        key = (s, t)
        cached = self._cov_cache.get(key)
        if cached is not None:
            return cached
        if s == 0.0:
            self._cov_cache[key] = 0.0
            return 0.0
        h, a = self.H, self.a
        p = 2.0 * h - 2.0
        mesh = power_mesh(p, n_sub=2)

        def inner(u_nodes):
            u_nodes = np.asarray(u_nodes, dtype=float)
            # ∫_0^s e^{a(s-v)} |u-v|^{2H-2} dv, split at v = u ∧ s
            phi_lo = lambda w: np.exp(a * (s - u_nodes[:, None] + w))
            lo_full = power_weighted_integral_batch(phi_lo, u_nodes, p, mesh=mesh)
            lo_cut = power_weighted_integral_batch(
                phi_lo, np.maximum(u_nodes - s, 0.0), p, mesh=mesh)
            phi_hi = lambda w: np.exp(a * (s - u_nodes[:, None] - w))
            hi = power_weighted_integral_batch(
                phi_hi, np.maximum(s - u_nodes, 0.0), p, mesh=mesh)
            return lo_full - lo_cut + hi

        def outer_integrand(u):
            return np.exp(a * (t - u)) * inner(u)

        pieces = [graded_cells(0.0, s, base=12)]
        if t > s:
            pieces.append(graded_cells(s, t, base=12))
        val = 0.0
        for edges in pieces:
            val += adaptive_gauss(outer_integrand, edges, rtol=1e-8)
        cov = (self.sigma ** 2) * h * (2.0 * h - 1.0) * val
        self._cov_cache[key] = cov
        return cov


@dataclass(frozen=True)
class VolterraKernelModel(CovarianceModel):
    """Gaussian process G(t) = ∫_0^t K(t,s) dW(s) with a deterministic kernel.

    ``kernel(t, s)`` must be vectorized over ``s``; parameters (H, r, D1..D3)
    describe the regularity class the kernel is claimed to belong to.
    """

    kernel: object = None
    H: float = 0.7
    r: float = 0.0
    D1: float = 1.0
    D2: float = 1.0
    D3: float = 1.0

    def __post_init__(self):
        _require(callable(self.kernel), "kernel evaluator required")
        _require(0.0 <= self.r < 0.5, f"r must lie in [0,1/2), got {self.r}")
        _require(0.5 < self.H < 1.0, f"H must lie in (1/2,1), got {self.H}")
        _require(self.D1 > 0 and self.D2 > 0 and self.D3 > 0,
                 "D constants must be positive")

    def covariance(self, s, t):
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        if s_arr.ndim == 0 and t_arr.ndim == 0:
            return volterra_covariance(self.kernel, float(s_arr), float(t_arr))
        s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
        out = np.empty(s_b.shape)
        for idx in np.ndindex(s_b.shape):
            out[idx] = volterra_covariance(self.kernel, float(s_b[idx]),
                                           float(t_b[idx]))
        return out


def volterra_covariance(kernel, s, t, rtol=1e-8):
    """E G(s)G(t) = ∫_0^{s∧t} K(t,u) K(s,u) du for a Volterra kernel."""
    lo = min(s, t)
    if lo <= 0.0:
        return 0.0
    edges = graded_cells(0.0, lo, base=16)

    def f(u):
        return kernel(max(s, t), u) * kernel(lo, u)

    return adaptive_gauss(f, edges, rtol=rtol)


# ---------------------------------------------------------------------------
# Basic operations
# ---------------------------------------------------------------------------

def covariance(model: CovarianceModel, s, t):
    """E G(s)G(t) for the (centered part of the) model."""
    return model.covariance(s, t)


def incremental_variance(model: CovarianceModel, s, t):
    """E |G(t) - G(s)|^2 from the covariance bilinearity."""
    return (model.covariance(t, t) - 2.0 * model.covariance(s, t)
            + model.covariance(s, s))


def covariance_matrix(model: CovarianceModel, times):
    times = np.asarray(times, dtype=float)
    return np.asarray(model.covariance(times[:, None], times[None, :]),
                      dtype=float)


def _fbm_increment_covariance(H, times):
    """E[dG_i dG_j] for fBm from gap differences only.

    Works directly with |t_j - t_i|^{2H} of the four corner gaps, so tiny
    steps on geometric grids keep full relative precision (no O(1)
    cancellation as in differencing the value covariance).
    """
    t = np.asarray(times, dtype=float)
    lo, hi = t[:-1], t[1:]
    h2 = 2.0 * H

    def pw(x):
        return np.abs(x) ** h2

    return 0.5 * (pw(hi[None, :] - lo[:, None]) + pw(lo[None, :] - hi[:, None])
                  - pw(lo[None, :] - lo[:, None]) - pw(hi[None, :] - hi[:, None]))


def increment_covariance_matrix(model: CovarianceModel, times):
    """Covariance of consecutive path increments on the grid.

    Uses the cancellation-free gap formula for fBm and sums of fBms;
    other variants fall back to second differences of the covariance.
    """
    times = np.asarray(times, dtype=float)
    if isinstance(model, FBm):
        return _fbm_increment_covariance(model.H, times)
    if isinstance(model, LinearCombo):
        out = np.zeros((times.size - 1, times.size - 1))
        for a, h in model.components:
            out += (a * a) * _fbm_increment_covariance(h, times)
        return out
    R = covariance_matrix(model, times)
    return R[1:, 1:] - R[1:, :-1] - R[:-1, 1:] + R[:-1, :-1]


@dataclass
class ConditionReport:
    """Grid evidence for the quasi-helix condition (A) and condition (B)."""

    C1_hat: float
    C2_hat: float
    H_fit: float
    min_increment_covariance: float
    grid: np.ndarray
    holds_A: bool
    holds_B: bool
    psd_ok: bool


def check_conditions(model: CovarianceModel, grid, H_claim,
                     b_tol=1e-12) -> ConditionReport:
    """Estimate the two-sided increment-variance bounds and check (B).

    C1_hat/C2_hat are the min/max of E|dG|^2 / |dt|^{2H_claim} over grid
    pairs; condition (B) is checked on every ordered pair of disjoint
    grid increments.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 3:
        raise ModelError("condition check needs at least 3 grid points")
    if np.any(np.diff(grid) <= 0):
        raise ModelError("grid must be strictly increasing")
    _require(0.0 < H_claim < 1.0, f"H_claim must lie in (0,1), got {H_claim}")

    R = covariance_matrix(model, grid)
    n = grid.size
    iu, ju = np.triu_indices(n, k=1)
    gaps = grid[ju] - grid[iu]
    incvar = R[ju, ju] - 2.0 * R[iu, ju] + R[iu, iu]
    ratios = incvar / gaps ** (2.0 * H_claim)
    c1_hat, c2_hat = float(np.min(ratios)), float(np.max(ratios))

    # fitted exponent: slope of log E|dG|^2 against log|dt|, halved
    pos = incvar > 0
    slope = np.polyfit(np.log(gaps[pos]), np.log(incvar[pos]), 1)[0]
    h_fit = float(slope / 2.0)

    # disjoint ordered increment pairs (i<j) <= (k<l)
    min_cov = np.inf
    pair_i, pair_j = iu, ju
    for a in range(len(pair_i)):
        i, j = pair_i[a], pair_j[a]
        sel = pair_i >= j
        if not np.any(sel):
            continue
        k, l = pair_i[sel], pair_j[sel]
        cov_inc = R[j, l] - R[j, k] - R[i, l] + R[i, k]
        min_cov = min(min_cov, float(np.min(cov_inc)))

    pos_times = grid[grid > 0]
    psd_ok = True
    if pos_times.size:
        Rp = covariance_matrix(model, pos_times)
        jitter = 1e-10 * max(float(np.max(np.diag(Rp))), 1.0)
        try:
            np.linalg.cholesky(Rp + jitter * np.eye(len(Rp)))
        except np.linalg.LinAlgError:
            psd_ok = False

    report = ConditionReport(
        C1_hat=c1_hat, C2_hat=c2_hat, H_fit=h_fit,
        min_increment_covariance=min_cov, grid=grid,
        holds_A=c1_hat > 0.0 and np.isfinite(c2_hat),
        holds_B=min_cov >= -b_tol, psd_ok=psd_ok)
    return report


# ---------------------------------------------------------------------------
# fBm Volterra kernels
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def fbm_kernel_constant(H):
    """Normalization C(H) fixed so that ∫_0^1 K^H(1,u)^2 du = 1.

    One-time numeric calibration (Var B^H(1) = 1); cached per H.
    """
    _require(0.5 < H < 1.0, f"kernel requires H in (1/2,1), got {H}")
    mesh = power_mesh(H - 1.5, n_sub=4)

    def unnorm_sq(u):
        vals = _kernel_core(H, np.full_like(u, 1.0), u, mesh)
        return (u ** (0.5 - H) * vals) ** 2

    edges = graded_cells(0.0, 1.0, base=16, levels=50)
    integral = adaptive_gauss(unnorm_sq, edges, rtol=1e-10)
    return 1.0 / np.sqrt(integral)


def _kernel_core(H, t, s, mesh):
    """∫_s^t u^{H-1/2}(u-s)^{H-3/2} du for vectors t, s with s < t."""
    lengths = np.maximum(t - s, 0.0)
    phi = lambda w: (s[:, None] + w) ** (H - 0.5)
    return power_weighted_integral_batch(phi, lengths, H - 1.5, mesh=mesh)


def fbm_kernel(H, t, s):
    """Volterra kernel K^H(t,s) = C(H) s^{1/2-H} ∫_s^t u^{H-1/2}(u-s)^{H-3/2} du.

    Returns 0 for s >= t (empty integration range).  Requires H in (1/2,1)
    and s > 0.
    """
    out = fbm_kernel_batch(H, np.atleast_1d(float(t)), np.atleast_1d(float(s)))
    return float(out[0])


def fbm_kernel_batch(H, t, s, n_sub=2):
    _require(0.5 < H < 1.0, f"kernel requires H in (1/2,1), got {H}")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    _require(np.all(s > 0), "kernel requires s > 0")
    mesh = power_mesh(H - 1.5, n_sub=n_sub)
    core = _kernel_core(H, t, s, mesh)
    # convergence spot check at the widest pair
    if core.size:
        i = int(np.argmax(t - s))
        if t[i] > s[i]:
            fine = _kernel_core(H, t[i:i + 1], s[i:i + 1],
                                power_mesh(H - 1.5, n_sub=2 * n_sub))
            scale = max(abs(fine[0]), 1e-300)
            if abs(fine[0] - core[i]) > 1e-9 * scale:
                raise QuadratureError(
                    "kernel quadrature not converged",
                    residual=abs(fine[0] - core[i]) / scale)
    return fbm_kernel_constant(H) * s ** (0.5 - H) * core


def fbm_star_kernel(H, t, s):
    """Inverse-representation kernel K*(t,s).

    K*(t,s) = [ t^{H-1/2}(t-s)^{1/2-H}
                - (H-1/2) ∫_s^t u^{H-3/2}(u-s)^{1/2-H} du ] / Gamma(3/2-H).
    """
    out = fbm_star_kernel_batch(H, np.atleast_1d(float(t)),
                                np.atleast_1d(float(s)))
    return float(out[0])


def fbm_star_kernel_batch(H, t, s, n_sub=2):
    _require(0.5 < H < 1.0, f"kernel requires H in (1/2,1), got {H}")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    _require(np.all(s > 0), "kernel requires s > 0")
    _require(np.all(t > s), "kernel requires s < t")
    mesh = power_mesh(0.5 - H, n_sub=n_sub)
    phi = lambda w: (s[:, None] + w) ** (H - 1.5)
    integral = power_weighted_integral_batch(phi, t - s, 0.5 - H, mesh=mesh)
    lead = t ** (H - 0.5) * (t - s) ** (0.5 - H)
    return (lead - (H - 0.5) * integral) / gamma_fn(1.5 - H)


def kernel_step_weights(H, times, rtol=1e-8):
    """Lower-triangular step-average weights for the Wiener-to-fBm map.

    W[i, j] = K^H(t_i, mid_j) (midpoint rule for the step integral divided
    by the step length), so that B^H(t_i) ≈ Σ_{j<i} W[i,j] ΔW_j.  ``times``
    must start at 0.
    """
    times = np.asarray(times, dtype=float)
    n = times.size
    mids = 0.5 * (times[:-1] + times[1:])
    weights = np.zeros((n, n - 1))
    for i in range(1, n):
        t_i = times[i]
        sel = mids < t_i
        weights[i, sel] = fbm_kernel_batch(
            H, np.full(int(np.sum(sel)), t_i), mids[sel])
    return weights


# ---------------------------------------------------------------------------
# Volterra kernel regularity spot checks
# ---------------------------------------------------------------------------

@dataclass
class VolterraCheckReport:
    nonneg_ok: bool
    monotone_ok: bool
    increment_bound_ok: bool
    level_bound_ok: bool
    lower_bound_ok: bool
    lower_variant: str
    worst_violation_ratio: float
    ratios: dict = field(default_factory=dict)


def volterra_condition_check(kernel, H, r, D1, D2, D3, grid,
                             lower_variant="b3b", tol=1e-9):
    """Spot-check the kernel regularity class on a grid triangle.

    Checks: nonnegativity and monotonicity in t, the increment bound
    |K(t2,s)-K(t1,s)| <= D2 |t2-t1|^H s^{-r}, the level bound
    K(t,s) <= D3 (t-s)^{H-1/2} s^{-r}, and the declared lower bound
    ('b3a': increments from below, 'b3b': levels from below).  Violations
    are reported via ratios (>1 means violated), never raised.
    """
    grid = np.asarray(grid, dtype=float)
    s_vals = grid[grid > 0]
    ratios = {}

    K = np.full((grid.size, s_vals.size), np.nan)
    for a, t in enumerate(grid):
        sel = s_vals < t
        if np.any(sel):
            K[a, sel] = kernel(t, s_vals[sel])

    finite = ~np.isnan(K)
    nonneg_ok = bool(np.all(K[finite] >= -tol))
    ratios["nonneg_min"] = float(np.min(K[finite])) if finite.any() else 0.0

    mono_ok = True
    inc_worst = 0.0
    low_inc_worst = 0.0
    for b, s in enumerate(s_vals):
        rows = np.where(grid > s)[0]
        for x in range(len(rows)):
            for y in range(x + 1, len(rows)):
                t1, t2 = grid[rows[x]], grid[rows[y]]
                k1, k2 = K[rows[x], b], K[rows[y], b]
                if k2 < k1 - tol:
                    mono_ok = False
                bound = D2 * (t2 - t1) ** H * s ** (-r)
                inc_worst = max(inc_worst, abs(k2 - k1) / bound)
                if lower_variant == "b3a":
                    lb = D1 * (t2 - t1) ** H * s ** (-r)
                    low_inc_worst = max(low_inc_worst,
                                        lb / max(abs(k2 - k1), 1e-300))
    ratios["increment_upper"] = inc_worst

    level_worst = 0.0
    low_level_worst = 0.0
    for b, s in enumerate(s_vals):
        for a in np.where(grid > s)[0]:
            t = grid[a]
            bound = D3 * (t - s) ** (H - 0.5) * s ** (-r)
            level_worst = max(level_worst, K[a, b] / bound)
            if lower_variant == "b3b":
                lb = D1 * (t - s) ** (H - 0.5) * s ** (-r)
                low_level_worst = max(low_level_worst,
                                      lb / max(K[a, b], 1e-300))
    ratios["level_upper"] = level_worst

    if lower_variant == "b3a":
        low_worst = low_inc_worst
    elif lower_variant == "b3b":
        low_worst = low_level_worst
    else:
        raise ModelError(f"unknown lower-bound variant {lower_variant!r}")
    ratios["lower"] = low_worst

    slack = 1.0 + 1e-9
    report = VolterraCheckReport(
        nonneg_ok=nonneg_ok,
        monotone_ok=mono_ok,
        increment_bound_ok=inc_worst <= slack,
        level_bound_ok=level_worst <= slack,
        lower_bound_ok=low_worst <= slack,
        lower_variant=lower_variant,
        worst_violation_ratio=max(inc_worst, level_worst, low_worst),
        ratios=ratios)
    return report
