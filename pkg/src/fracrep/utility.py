"""Expected-utility maximization against an exponential density process.

The optimal profile is X* = I(c φ(T)) (or the clipped inverse I⁺ on the
restricted half-line), with c solved from the budget E[φ X*] = w by
bracketed bisection on log c over Monte Carlo samples of φ.  The module
also carries the long-memory market constants C1(H), C2(H), the
power-law measure-change integrand, and the prelimit variance
diagnostic that blows up as the regularization vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .martingales import DensityProcess, ThetaProcess
from .quadrature import power_mesh, power_weighted_integral, \
    power_weighted_integral_batch
from .simulate import path_rng


class UtilityError(ValueError):
    pass


class BudgetBracketError(RuntimeError):
    """No sign change found while expanding the budget bracket."""

    def __init__(self, message, curve):
        super().__init__(message)
        self.curve = curve


# ---------------------------------------------------------------------------
# Utility functions and inverse marginals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UtilityFunction:
    """Strictly increasing, strictly concave utility.

    ``pi1`` and ``pi2`` are the marginal bounds lim_{x->inf} u' and
    u'(0+); they drive the clipping extension of the inverse marginal on
    restricted (half-line) problems.
    """

    kind: str
    u: object
    u_prime: object
    inverse: object
    pi1: float = 0.0
    pi2: float = math.inf
    domain_low: float = -math.inf
    label: str = ""

    def concavity_check(self, lo, hi, n=1000):
        """Sampled monotonicity/concavity check of u' on [lo, hi]."""
        x = np.linspace(lo, hi, n)
        up = np.asarray(self.u_prime(x), dtype=float)
        return bool(np.all(up > 0) and np.all(np.diff(up) < 0))


def exponential_utility(beta):
    """u(x) = 1 - exp(-beta x) on the whole line."""
    if beta <= 0:
        raise UtilityError(f"risk aversion must be positive, got {beta}")
    return UtilityFunction(
        kind="exponential",
        u=lambda x: 1.0 - np.exp(-beta * x),
        u_prime=lambda x: beta * np.exp(-beta * x),
        inverse=lambda y: -np.log(y / beta) / beta,
        pi1=0.0, pi2=math.inf, label=f"exp(beta={beta})")


def power_utility(gamma):
    """u(x) = x^gamma / gamma on (0, inf), gamma in (0,1)."""
    if not 0.0 < gamma < 1.0:
        raise UtilityError(f"power exponent must lie in (0,1), got {gamma}")
    expo = 1.0 / (1.0 - gamma)
    return UtilityFunction(
        kind="power",
        u=lambda x: np.power(x, gamma) / gamma,
        u_prime=lambda x: np.power(x, gamma - 1.0),
        inverse=lambda y: np.power(y, -expo),
        pi1=0.0, pi2=math.inf, domain_low=0.0, label=f"power(gamma={gamma})")


def log_utility():
    """u(x) = log x on (0, inf)."""
    return UtilityFunction(
        kind="log",
        u=np.log,
        u_prime=lambda x: 1.0 / x,
        inverse=lambda y: 1.0 / y,
        pi1=0.0, pi2=math.inf, domain_low=0.0, label="log")


def custom_utility(u, u_prime, inverse, pi1=0.0, pi2=math.inf,
                   domain_low=-math.inf):
    return UtilityFunction(kind="custom", u=u, u_prime=u_prime,
                           inverse=inverse, pi1=pi1, pi2=pi2,
                           domain_low=domain_low, label="custom")


def inverse_marginal(utility: UtilityFunction, y, restricted=False):
    """I(y) = (u')^{-1}(y), clipped to [0, inf] on restricted problems.

    Restricted clipping: +inf below pi1 (reported as np.inf), 0 above
    pi2.  y must be positive.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0):
        raise UtilityError("inverse marginal needs y > 0")
    vals = np.asarray(utility.inverse(y_arr), dtype=float)
    if restricted:
        vals = np.where(y_arr <= utility.pi1, np.inf, vals)
        vals = np.where(y_arr >= utility.pi2, 0.0, vals)
        vals = np.where((y_arr > utility.pi1) & (y_arr < utility.pi2),
                        np.maximum(vals, 0.0), vals)
    if np.ndim(y) == 0:
        return float(vals)
    return vals


# ---------------------------------------------------------------------------
# Problems and Monte Carlo phi samples
# ---------------------------------------------------------------------------

@dataclass
class UtilityProblem:
    """Maximization setup with shared Monte Carlo density samples.

    The same φ(T) samples (common random numbers) back the budget solve,
    the profile summary, and the entropy estimate.
    """

    utility: UtilityFunction
    w: float
    density: DensityProcess
    T: float = 1.0
    n_samples: int = 200_000
    seed: int = 0
    restricted: bool = False
    grid_n: int = 64
    c: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def log_phi_samples(self):
        """log φ(T) per sample via vectorized left-point integrals."""
        if "logphi" in self._cache:
            return self._cache["logphi"]
        times = np.linspace(0.0, self.T, self.grid_n + 1)
        dt = np.diff(times)
        rng = path_rng(self.seed, 0)
        dw = rng.standard_normal((self.n_samples, self.grid_n)) \
            * np.sqrt(dt)[None, :]
        w_paths = np.concatenate(
            [np.zeros((self.n_samples, 1)), np.cumsum(dw, axis=1)], axis=1)
        th = self.density.theta.at(times[:-1], w_paths[:, :-1])
        th = np.broadcast_to(th, (self.n_samples, self.grid_n))
        logphi = np.sum(th * dw, axis=1) - 0.5 * np.sum(th * th * dt, axis=1)
        self._cache["logphi"] = logphi
        return logphi

    def phi_samples(self):
        if "phi" not in self._cache:
            self._cache["phi"] = np.exp(self.log_phi_samples())
        return self._cache["phi"]


def relative_entropy(phi_samples):
    """H(P*|P) = E[φ log φ] from density samples; returns (value, SE)."""
    phi_samples = np.asarray(phi_samples, dtype=float)
    vals = phi_samples * np.log(np.where(phi_samples > 0, phi_samples, 1.0))
    return float(np.mean(vals)), float(np.std(vals) / np.sqrt(vals.size))


def _budget(problem, c, phi):
    x = inverse_marginal(problem.utility, c * phi, problem.restricted)
    if np.any(~np.isfinite(x)):
        return math.inf, math.inf
    vals = phi * x
    return float(np.mean(vals)), float(np.std(vals) / np.sqrt(vals.size))


def solve_budget_constant(problem: UtilityProblem, c0=1.0, max_expansions=60,
                          max_bisections=200):
    """Root of E[φ I(cφ)] = w by bracket expansion and bisection on log c.

    The budget is strictly decreasing in c; the bracket expands by
    factors of 4 until it straddles w (overflow samples of the clipped
    inverse count as budget +inf, pushing the bracket upward).  Stops at
    3 Monte Carlo standard errors of the budget estimate or at float
    bracket resolution, whichever first.
    """
    phi = problem.phi_samples()
    w = problem.w

    def excess(c):
        b, se = _budget(problem, c, phi)
        return b - w, se

    lo = hi = math.log(c0)
    f0, _ = excess(c0)
    if f0 > 0:
        for _ in range(max_expansions):
            hi += math.log(4.0)
            fh, _ = excess(math.exp(hi))
            if fh <= 0:
                break
        else:
            raise BudgetBracketError(
                "no sign change while expanding the bracket upward",
                curve=[(math.exp(lo + k * math.log(4.0)),
                        excess(math.exp(lo + k * math.log(4.0)))[0])
                       for k in range(6)])
    else:
        for _ in range(max_expansions):
            lo -= math.log(4.0)
            fl, _ = excess(math.exp(lo))
            if fl > 0:
                break
        else:
            raise BudgetBracketError(
                "no sign change while expanding the bracket downward",
                curve=[(math.exp(hi - k * math.log(4.0)),
                        excess(math.exp(hi - k * math.log(4.0)))[0])
                       for k in range(6)])

    mid = 0.5 * (lo + hi)
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        fm, se = excess(math.exp(mid))
        if hi - lo < 1e-14:
            break
        if fm > 0:
            lo = mid
        else:
            hi = mid
    c = math.exp(mid)
    problem.c = c
    return c


@dataclass
class ProfileResult:
    samples: np.ndarray
    expected_utility: float
    expected_utility_se: float
    budget_residual: float
    budget_se: float
    entropy: float
    entropy_se: float
    c: float
    infinite_utility: bool


def optimal_profile(problem: UtilityProblem, c=None) -> ProfileResult:
    """Samples of X* = I(c φ(T)) with budget and utility summaries."""
    if c is None:
        c = problem.c if problem.c is not None else \
            solve_budget_constant(problem)
    phi = problem.phi_samples()
    x = inverse_marginal(problem.utility, c * phi, problem.restricted)
    u_vals = np.asarray(problem.utility.u(np.maximum(
        x, 1e-300) if problem.utility.domain_low == 0.0 else x), dtype=float)
    infinite = bool(np.any(~np.isfinite(u_vals)))
    budget = phi * x
    ent, ent_se = relative_entropy(phi)
    return ProfileResult(
        samples=x,
        expected_utility=float(np.mean(u_vals)),
        expected_utility_se=float(np.std(u_vals) / np.sqrt(u_vals.size)),
        budget_residual=float(np.mean(budget) - problem.w),
        budget_se=float(np.std(budget) / np.sqrt(budget.size)),
        entropy=ent, entropy_se=ent_se, c=c, infinite_utility=infinite)


# ---------------------------------------------------------------------------
# Exponential-utility closed form
# ---------------------------------------------------------------------------

def exponential_profile_closed_form(theta: ThetaProcess, beta, w, wiener,
                                    entropy):
    """X* = -(1/beta)(∫ϑdW - 1/2 ∫ϑ²ds) + w + H(P*|P)/beta on one path."""
    from .martingales import ito_integral, quadratic_time_integral

    ito = ito_integral(theta, wiener)
    quad = quadratic_time_integral(theta, wiener)
    log_phi = ito[-1] - 0.5 * quad[-1]
    return -log_phi / beta + w + entropy / beta


def exponential_profile_samples(problem: UtilityProblem, beta, entropy=None):
    """Vectorized closed-form profile over the problem's shared samples.

    Checks E[φ |log φ|] is finite (heavy-tail diagnostic) before using
    the Monte Carlo entropy.
    """
    logphi = problem.log_phi_samples()
    phi = problem.phi_samples()
    tail = phi * np.abs(logphi)
    est = float(np.mean(tail))
    if not np.isfinite(est):
        raise UtilityError("E[phi |log phi|] is not finite on these samples")
    top = float(np.sum(np.sort(tail)[-max(tail.size // 1000, 1):]))
    if top > 0.5 * float(np.sum(tail)):
        raise UtilityError(
            "entropy estimate dominated by the extreme tail; "
            "density too heavy-tailed for a stable profile")
    if entropy is None:
        entropy = relative_entropy(phi)[0]
    return -logphi / beta + problem.w + entropy / beta


# ---------------------------------------------------------------------------
# Long-memory market constants and diagnostics
# ---------------------------------------------------------------------------

def hidden_semimartingale_constants(H):
    """C1(H), C2(H) of the power-drift reduction of the fBm market.

    C1(H) = (3/2-H)^{-1} sqrt( Γ(3/2-H) / (2H Γ(2-2H) Γ(H+1/2)) ),
    C2(H) = C1(H) (3/2-H).
    """
    if not 0.5 < H < 1.0:
        raise UtilityError(f"H must lie in (1/2,1), got {H}")
    c1 = (1.0 / (1.5 - H)) * math.sqrt(
        gamma_fn(1.5 - H) / (2.0 * H * gamma_fn(2.0 - 2.0 * H)
                             * gamma_fn(H + 0.5)))
    return {"C1": c1, "C2": c1 * (1.5 - H)}


def fbm_market_theta(H, mu, r_rate, sigma):
    """Measure-change integrand of the long-memory stock market.

    ς(s) = ((mu - r) C2(H) / sigma) s^{1/2-H} + sigma/2, packaged with a
    moment order p strictly inside the admissible window
    (H - 1/2) 2p < 1.  The s=0 singularity is clamped to the smallest
    positive evaluation time (left-point sums stay consistent).
    """
    if sigma <= 0:
        raise UtilityError(f"sigma must be positive, got {sigma}")
    if not 0.5 < H < 1.0:
        raise UtilityError(f"H must lie in (1/2,1), got {H}")
    c2 = hidden_semimartingale_constants(H)["C2"]
    coef = (mu - r_rate) * c2 / sigma

    def evaluator(t, w):
        t = np.asarray(t, dtype=float)
        pos = t[t > 0]
        floor = float(np.min(pos)) if pos.size else 1.0
        s_eff = np.where(t > 0, t, floor)
        return coef * s_eff ** (0.5 - H) + 0.5 * sigma

    p_max = 1.0 / (2.0 * H - 1.0)
    return ThetaProcess(evaluator=evaluator, p=0.5 * (1.0 + p_max),
                        label=f"power-drift(H={H})")


def prelimit_variance(H, epsilon, t):
    """Variance of the prelimit measure-change integrand and its lower bound.

    quadrature: ∫_0^t (∂₁K(t+ε,u) / K(t+ε,t))² du with the power-law
    kernel; bound: (H-1/2)² ε^{1-2H} (ε^{2H-2} - (t+ε)^{2H-2}) / (2-2H),
    which diverges as ε -> 0 (no reasonable limit of the prelimit
    densities).  Asserts quadrature >= bound.
    """
    if not 0.5 < H < 1.0:
        raise UtilityError(f"H must lie in (1/2,1), got {H}")
    if epsilon <= 0 or t <= 0:
        raise UtilityError("epsilon and t must be positive")
    # denominator K(t+eps, t) without the overall normalization constant
    den = t ** (0.5 - H) * power_weighted_integral(
        lambda w: (t + w) ** (H - 0.5), epsilon, H - 1.5)
    num = (t + epsilon) ** (2.0 * H - 1.0) * power_weighted_integral(
        lambda u: (t + epsilon - u) ** (2.0 * H - 3.0), t, 1.0 - 2.0 * H)
    quad = num / den ** 2
    bound = ((H - 0.5) ** 2 * epsilon ** (1.0 - 2.0 * H)
             * (epsilon ** (2.0 * H - 2.0) - (t + epsilon) ** (2.0 * H - 2.0))
             / (2.0 - 2.0 * H))
    if quad < bound * (1.0 - 1e-9):
        raise RuntimeError(
            f"prelimit variance {quad:.6g} fell below its bound {bound:.6g}")
    return {"quadrature": float(quad), "bound": float(bound)}


def star_kernel_weighted_integral(H, t):
    """∫_0^t s^{1/2-H} K*(t,s) ds, scaling as t^{3/2-H}.

    Split at t/2; both endpoint power singularities (s^{1/2-H} at 0,
    (t-s)^{1/2-H} at t) integrate against graded meshes.
    """
    from .processes import fbm_star_kernel_batch

    half = 0.5 * t

    def lower_phi(s):
        s = np.atleast_1d(s)
        out = np.empty_like(s)
        pos = s > 0
        out[~pos] = 0.0
        if np.any(pos):
            out[pos] = fbm_star_kernel_batch(
                H, np.full(int(np.sum(pos)), t), s[pos])
        return out

    lower = power_weighted_integral(lower_phi, half, 0.5 - H, rtol=1e-9,
                                    max_doublings=4)

    gam = gamma_fn(1.5 - H)
    mesh = power_mesh(0.5 - H, n_sub=2)

    def upper_phi(w):
        # (t-w)^{1/2-H} * K*(t, t-w) * w^{H-1/2}, finite at w=0
        w = np.atleast_1d(np.asarray(w, dtype=float))
        s = t - w
        lead = t ** (H - 0.5)
        inner = np.zeros_like(w)
        pos = w > 0
        if np.any(pos):
            phi_in = lambda v: (s[pos][:, None] + v) ** (H - 1.5)
            inner[pos] = power_weighted_integral_batch(
                phi_in, w[pos], 0.5 - H, mesh=mesh) * w[pos] ** (H - 0.5)
        kstar_scaled = (lead - (H - 0.5) * inner) / gam
        return s ** (0.5 - H) * kstar_scaled

    upper = power_weighted_integral(upper_phi, half, 0.5 - H, rtol=1e-9,
                                    max_doublings=4)
    return lower + upper
