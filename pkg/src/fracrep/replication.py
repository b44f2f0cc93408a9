"""Constructive replication of path-functionals by bounded adapted integrands.

The engine walks a geometric level grid t_n = T - theta^n toward the
horizon.  On each level it either accumulates weighted squared increments
of the integrator until the running pathwise integral first crosses the
outstanding gap (quadratic gadgets; the change-of-variables identity
∫ (G - G(a)) dG = (G - G(a))²/2 makes the running integral exact per
sub-interval), or, when the entering capital is off target, runs a chain
of such gadgets on geometrically shrinking blocks with gains scaled to
the gap so the cumulative capacity grows without bound across blocks.
Stopping happens at the first grid time the running functional crosses
the level; the overshoot is recorded and the next level self-corrects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fractional
from .processes import CovarianceModel, FBm, incremental_variance
from .simulate import GaussianPath, JointPath, SampleGrid


class ReplicationError(ValueError):
    pass


ALPHA_WINDOW = "1-H < alpha < min(r+1-H, 1/2)"


@dataclass(frozen=True)
class ReplicationConfig:
    """Level-grid and gadget parameters.

    alpha must satisfy the admissibility window 1-H < alpha < min(r+1-H, 1/2)
    where r is the Hölder order of the target process.  n_levels is capped
    at the float resolution of T - theta^n.
    """

    theta: float
    alpha: float
    H: float
    r: float
    n_levels: int
    m_sub: int = 4
    fine_per_sub: int = 6
    blocks: int = 8
    gain_margin: float = 0.5
    case_tol: float = 1e-9
    base_points: int = 64

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ReplicationError(f"theta must lie in (0,1), got {self.theta}")
        if not 0.0 < self.H < 1.0:
            raise ReplicationError(f"H must lie in (0,1), got {self.H}")
        if not 0.0 < self.r <= 1.0:
            raise ReplicationError(f"r must lie in (0,1], got {self.r}")
        lo, hi = 1.0 - self.H, min(self.r + 1.0 - self.H, 0.5)
        if not lo < self.alpha < hi:
            raise ReplicationError(
                f"alpha window violated: need {ALPHA_WINDOW}, i.e. "
                f"({lo:.6g}, {hi:.6g}), got alpha={self.alpha} "
                f"(H={self.H}, r={self.r})")
        if self.n_levels < 2:
            raise ReplicationError("need at least 2 levels")
        if self.m_sub < 1 or self.fine_per_sub < 2 or self.blocks < 1:
            raise ReplicationError("degenerate gadget resolution")

    def max_levels(self, T):
        """Largest usable level count before theta^n hits float resolution."""
        return int(math.floor(math.log(2.0 ** -40) / math.log(self.theta)))

    def gain(self, n):
        """Case II gain a_n = n^-2 theta^{(alpha-H-1) n}."""
        return n ** -2.0 * self.theta ** ((self.alpha - self.H - 1.0) * n)


def level_grid(theta, T, N):
    """Level times [T - theta, T - theta^2, ..., T - theta^N]."""
    if not 0.0 < theta < 1.0:
        raise ReplicationError(f"theta must lie in (0,1), got {theta}")
    if N < 1:
        raise ReplicationError("need at least one level")
    n = np.arange(1, N + 1, dtype=float)
    return T - theta ** n


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------

def _refine(anchors, per_gap):
    out = [np.asarray([anchors[0]])]
    for a, b in zip(anchors[:-1], anchors[1:]):
        out.append(np.linspace(a, b, per_gap + 1)[1:])
    return np.concatenate(out)


def case2_anchors(t_lo, t_hi, n):
    """Uniform partition of [t_n, t_{n+1}] into n sub-intervals."""
    return np.linspace(t_lo, t_hi, n + 1)


def case1_blocks(t_lo, t_hi, n_blocks):
    """Geometric block edges u_j = t_hi - (t_hi-t_lo) 2^-j, last block
    extended to t_hi."""
    j = np.arange(n_blocks, dtype=float)
    edges = t_hi - (t_hi - t_lo) * 2.0 ** -j
    return np.append(edges, t_hi)


def replication_grid(config: ReplicationConfig, T=1.0) -> SampleGrid:
    """Geometric grid holding every level and both gadget anchor sets."""
    N = min(config.n_levels, config.max_levels(T))
    levels = level_grid(config.theta, T, N + 1)
    anchors = [np.linspace(0.0, levels[0], config.base_points + 1)]
    for n in range(1, N + 1):
        t_lo, t_hi = levels[n - 1], levels[n]
        a = np.unique(np.concatenate([
            case2_anchors(t_lo, t_hi, n),
            _block_sub_anchors(t_lo, t_hi, config)]))
        anchors.append(a[1:])
    stub = np.linspace(levels[N], T, config.fine_per_sub + 1)
    anchors.append(stub[1:])
    anchor_times = np.concatenate(anchors)
    times = _refine(anchor_times, config.fine_per_sub)
    grid = SampleGrid(times=times, kind="geometric", theta=config.theta,
                      n_levels=N, m=config.fine_per_sub)
    for n in range(1, N + 2):
        grid.level_index[n] = grid.index_of(levels[n - 1])
    return grid


def _block_sub_anchors(t_lo, t_hi, config):
    edges = case1_blocks(t_lo, t_hi, config.blocks)
    subs = [np.linspace(a, b, config.m_sub + 1) for a, b in
            zip(edges[:-1], edges[1:])]
    return np.unique(np.concatenate(subs))


# ---------------------------------------------------------------------------
# Quadratic gadget engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiPiece:
    """One anchored sub-interval of a quadratic gadget.

    psi(t_i) = sign * gain * (G(t_i) - G(anchor)) for grid indices
    start_index .. start_index + len(values) - 1; values carry the sign.
    """

    start_index: int
    anchor_index: int
    gain: float
    values: np.ndarray

    @property
    def indices(self):
        return np.arange(self.start_index, self.start_index + self.values.size)


@dataclass
class GadgetResult:
    kind: str
    level: int
    sign: float
    start_index: int
    end_index: int
    stop_index: int | None
    achieved: bool
    integral: float          # accumulated |∫ psi dG| over the level
    overshoot: float
    sup_psi: float
    pieces: list

    @property
    def stop_time_index(self):
        return self.stop_index if self.stop_index is not None else self.end_index


def _run_blocks(G, plan, gap_abs, sign):
    """March anchored sub-intervals, tracking the exact running integral.

    plan: iterable of (gain, anchor_idx, start_idx, end_idx).  The running
    functional is gain/2 * [sum of completed squared sub-increments +
    (G - G(anchor))² on the open one]; stop at the first grid index where
    it crosses gap_abs.
    """
    base = 0.0
    pieces = []
    sup_psi = 0.0
    stop = None
    for gain, a_idx, s_idx, e_idx in plan:
        dev = G[s_idx:e_idx + 1] - G[a_idx]
        R = base + 0.5 * gain * dev * dev
        crossed = R >= gap_abs
        local_stop = int(np.argmax(crossed)) if crossed.any() else None
        upto = (e_idx - s_idx) if local_stop is None else local_stop
        vals = sign * gain * dev[:upto + 1]
        if vals.size >= 2:
            pieces.append(PsiPiece(start_index=s_idx, anchor_index=a_idx,
                                   gain=gain, values=vals))
        if vals.size:
            sup_psi = max(sup_psi, float(np.max(np.abs(vals))))
        if local_stop is not None:
            stop = s_idx + local_stop
            base = float(R[local_stop])
            break
        base = float(R[-1])
    return base, stop, pieces, sup_psi


def case2_gadget(path, grid, n, config, gap, level_times=None):
    """Single-level quadratic gadget with the paper-scaled gain a_n.

    The uniform n-part partition of [t_n, t_{n+1}] supplies the anchors;
    stopping at the first grid crossing of |gap|.  achieved means the
    stop happened strictly before the level end.
    """
    G = _integrator_values(path)
    t_lo, t_hi = _level_interval(grid, n, level_times)
    anchors = case2_anchors(t_lo, t_hi, n)
    idx = [grid.index_of(t) for t in anchors]
    gain = config.gain(n)
    plan = [(gain, idx[k], idx[k], idx[k + 1]) for k in range(n)]
    sign = float(np.sign(gap)) if gap != 0 else 1.0
    R, stop, pieces, sup = _run_blocks(G, plan, abs(gap), sign)
    achieved = stop is not None and stop < idx[-1]
    return GadgetResult(
        kind="case2", level=n, sign=sign, start_index=idx[0],
        end_index=idx[-1], stop_index=stop, achieved=achieved,
        integral=R, overshoot=max(R - abs(gap), 0.0) if stop is not None else 0.0,
        sup_psi=sup, pieces=pieces)


def case1_gadget(path, grid, n, config, gap, model=None, level_times=None):
    """Divergence gadget: quadratic blocks on geometrically shrinking
    sub-intervals of the level, gains scaled to the gap.

    Block j carries m_sub anchored sub-intervals and gain
    2 * gain_margin * |gap| / S_j with S_j the model increment-variance
    budget of the block, so each block contributes ~gain_margin * |gap|
    in expectation and the cumulative capacity diverges across blocks.
    Checkpoint values of the running integral are nondecreasing.  If the
    grid runs out of blocks before crossing, achieved=False and the
    residual is reported via ``integral``.
    """
    G = _integrator_values(path)
    model = model if model is not None else FBm(H=config.H)
    t_lo, t_hi = _level_interval(grid, n, level_times)
    edges = case1_blocks(t_lo, t_hi, config.blocks)
    sign = float(np.sign(gap)) if gap != 0 else 1.0
    gap_abs = abs(gap)
    plan = []
    for a, b in zip(edges[:-1], edges[1:]):
        subs = np.linspace(a, b, config.m_sub + 1)
        budget = sum(incremental_variance(model, s0, s1)
                     for s0, s1 in zip(subs[:-1], subs[1:]))
        gain = 2.0 * config.gain_margin * gap_abs / budget if budget > 0 else 0.0
        sidx = [grid.index_of(t) for t in subs]
        plan.extend((gain, sidx[k], sidx[k], sidx[k + 1])
                    for k in range(config.m_sub))
    R, stop, pieces, sup = _run_blocks(G, plan, gap_abs, sign)
    end_idx = grid.index_of(t_hi)
    achieved = stop is not None and stop < end_idx
    return GadgetResult(
        kind="case1", level=n, sign=sign, start_index=grid.index_of(t_lo),
        end_index=end_idx, stop_index=stop, achieved=achieved,
        integral=R, overshoot=max(R - gap_abs, 0.0) if stop is not None else 0.0,
        sup_psi=sup, pieces=pieces)


def _integrator_values(path):
    if isinstance(path, JointPath):
        return path.transformed.values
    if isinstance(path, GaussianPath):
        return path.values
    return np.asarray(path, dtype=float)


def _level_interval(grid, n, level_times=None):
    if level_times is not None:
        return level_times[n - 1], level_times[n]
    return grid.times[grid.level_index[n]], grid.times[grid.level_index[n + 1]]


# ---------------------------------------------------------------------------
# Strategy and trace
# ---------------------------------------------------------------------------

@dataclass
class Strategy:
    """Piecewise-defined adapted integrand on the replication grid.

    ``psi`` is the grid-aligned view (anchor restarts hold value 0); the
    authoritative integrand is the piece list inside each segment.
    """

    grid: SampleGrid
    psi: np.ndarray
    segments: list
    sup_abs: float
    per_level_sup: np.ndarray


@dataclass
class ReplicationTrace:
    levels: np.ndarray
    level_times: np.ndarray
    targets: np.ndarray
    capital_in: np.ndarray
    capital_out: np.ndarray
    achieved: np.ndarray
    kinds: list
    sup_psi: np.ndarray
    overshoot: np.ndarray
    terminal_capital: float
    claim_value: float
    terminal_error: float          # |V(T-) - xi|, xi the claim Z(T)
    tracking_error: float          # |V(T-) - xi_N|, last level target
    N0_hat: int | None
    N1_hat: int | None
    cross_checks: list = field(default_factory=list)

    def row(self, n):
        i = int(np.where(self.levels == n)[0][0])
        return {k: getattr(self, k)[i] for k in
                ("levels", "level_times", "targets", "capital_in",
                 "capital_out", "achieved", "sup_psi", "overshoot")}


def build_replicating_strategy(path, target, config: ReplicationConfig,
                               model: CovarianceModel | None = None,
                               cross_check_levels=(), rtol_check=2e-3):
    """Run the level algorithm on one path.

    ``target`` is either an array of adapted target-process values aligned
    with the grid or a ClaimSpec evaluated on the path.  Per level: the
    paper-gain quadratic gadget when the entering capital matches the
    previous target within case_tol, else the gap-scaled divergence
    gadget aiming at the current target.  Capital is tracked by the exact
    per-sub-interval change-of-variables rule and can be cross-checked
    against the fractional-calculus integral on selected levels.
    """
    grid = path.grid if hasattr(path, "grid") else None
    if grid is None:
        raise ReplicationError("path must carry its grid")
    G = _integrator_values(path)
    if hasattr(target, "state_values"):
        targets_grid = target.state_values(path)
    else:
        targets_grid = np.asarray(target, dtype=float)
        if targets_grid.shape != grid.times.shape:
            raise ReplicationError("target array must align with the grid")
    model = model if model is not None else FBm(H=config.H)
    N = grid.n_levels
    if N is None or not grid.level_index:
        raise ReplicationError("grid lacks level structure; use replication_grid")

    T = grid.T
    t0_ref = max(T - 1.0, 0.0)
    xi_prev = float(targets_grid[int(np.argmin(np.abs(grid.times - t0_ref)))])

    psi = np.zeros(grid.n)
    segments = []
    rows = {k: [] for k in ("n", "t", "xi", "vin", "vout", "ach", "kind",
                            "sup", "over")}
    V = 0.0
    for n in range(1, N + 1):
        i_n = grid.level_index[n]
        xi_n = float(targets_grid[i_n])
        if abs(V - xi_prev) <= config.case_tol:
            gap = xi_n - xi_prev
            res = case2_gadget(path, grid, n, config, gap)
        else:
            gap = xi_n - V
            res = case1_gadget(path, grid, n, config, gap, model=model)
        for piece in res.pieces:
            psi[piece.indices] = piece.values
        segments.append(res)
        V_out = V + res.sign * res.integral
        rows["n"].append(n)
        rows["t"].append(grid.times[i_n])
        rows["xi"].append(xi_n)
        rows["vin"].append(V)
        rows["vout"].append(V_out)
        rows["ach"].append(res.achieved)
        rows["kind"].append(res.kind)
        rows["sup"].append(res.sup_psi)
        rows["over"].append(res.overshoot)
        V = V_out
        xi_prev = xi_n

    claim_value = float(targets_grid[-1])
    xi_last = rows["xi"][-1]
    per_level_sup = np.asarray(rows["sup"])
    strategy = Strategy(grid=grid, psi=psi, segments=segments,
                        sup_abs=float(np.max(np.abs(psi))),
                        per_level_sup=per_level_sup)

    trace = ReplicationTrace(
        levels=np.asarray(rows["n"]),
        level_times=np.asarray(rows["t"]),
        targets=np.asarray(rows["xi"]),
        capital_in=np.asarray(rows["vin"]),
        capital_out=np.asarray(rows["vout"]),
        achieved=np.asarray(rows["ach"], dtype=bool),
        kinds=rows["kind"],
        sup_psi=per_level_sup,
        overshoot=np.asarray(rows["over"]),
        terminal_capital=V,
        claim_value=claim_value,
        terminal_error=abs(V - claim_value),
        tracking_error=abs(V - xi_last),
        N0_hat=_first_stable_index(np.asarray(rows["xi"]), config),
        N1_hat=_first_all_achieved(np.asarray(rows["ach"], dtype=bool)))

    for n in cross_check_levels:
        trace.cross_checks.append(
            _gls_cross_check(strategy, G, grid, segments[n - 1], config,
                             rtol_check))
    return strategy, trace


def _first_stable_index(targets, config):
    """Empirical analogue of the a.s. index where |dxi_n| <= n theta^{rn}."""
    n_vals = np.arange(1, targets.size)
    bound = n_vals * config.theta ** (config.r * n_vals)
    ok = np.abs(np.diff(targets)) <= bound
    for i in range(ok.size):
        if ok[i:].all():
            return int(n_vals[i])
    return None


def _first_all_achieved(achieved):
    for i in range(achieved.size):
        if achieved[i:].all():
            return int(i + 1)
    return None


def _gls_cross_check(strategy, G, grid, seg: GadgetResult, config, rtol):
    """Recompute one level's capital increment through the GLS integral.

    Each anchored piece is continuous, so its GLS integral is well defined;
    the sum over pieces must reproduce the exact quadratic bookkeeping.
    """
    total = 0.0
    for piece in seg.pieces:
        idx = piece.indices
        lo, hi = int(idx[0]), int(idx[-1])
        tt = grid.times[lo:hi + 1]
        total += fractional.gls_integral(
            (tt, piece.values), (tt, G[lo:hi + 1]),
            config.alpha, (tt[0], tt[-1]), rtol=max(rtol, 1e-4),
            check_norm=False, order=16)
    delta_v = seg.sign * seg.integral
    ref = max(abs(delta_v),
              max((float(np.max(np.abs(p.values))) for p in seg.pieces),
                  default=0.0) * 1e-3, 1e-12)
    return {"level": seg.level, "delta_v": delta_v, "gls": total,
            "rel": abs(total - delta_v) / ref}


def improper_strategy(path, targets, config: ReplicationConfig,
                      model: CovarianceModel | None = None):
    """Chain of divergence gadgets reproducing adapted targets xi_n.

    ``targets`` holds xi_n for levels n = 1..N (xi_0 = 0); each level runs
    the gap-scaled gadget toward its target, so the running integral lies
    between consecutive targets (up to the recorded overshoot).
    """
    grid = path.grid
    G = _integrator_values(path)
    model = model if model is not None else FBm(H=config.H)
    N = grid.n_levels
    targets = np.asarray(targets, dtype=float)
    if targets.size < N:
        raise ReplicationError(f"need {N} targets, got {targets.size}")
    psi = np.zeros(grid.n)
    segments = []
    sups = []
    V = 0.0
    for n in range(1, N + 1):
        res = case1_gadget(path, grid, n, config, targets[n - 1] - V,
                           model=model)
        for piece in res.pieces:
            psi[piece.indices] = piece.values
        segments.append(res)
        sups.append(res.sup_psi)
        V += res.sign * res.integral
    return Strategy(grid=grid, psi=psi, segments=segments,
                    sup_abs=float(np.max(np.abs(psi))) if grid.n else 0.0,
                    per_level_sup=np.asarray(sups))


def running_capital(strategy: Strategy, path):
    """Exact running integral of the strategy at every grid time.

    Uses the per-piece change-of-variables rule: within a piece with
    gain a and signed values v_i, the capital gain from the piece start
    to index i is sign * v_i^2 / (2a).
    """
    G = _integrator_values(path)
    grid = strategy.grid
    inc = np.zeros(grid.n)
    for seg in strategy.segments:
        for piece in seg.pieces:
            if piece.gain == 0.0:
                continue
            idx = piece.indices
            contrib = seg.sign * piece.values ** 2 / (2.0 * piece.gain)
            inc[idx[1:]] += np.diff(contrib)
    return np.cumsum(inc)


# ---------------------------------------------------------------------------
# Small-deviation bound
# ---------------------------------------------------------------------------

def small_deviation_bound(variances, covariance, x):
    """Gaussian square-sum lower-tail bound.

    P(sum xi_i^2 <= x) <= exp{ -(sum E xi_i^2 - x)^2 / sum_{ij} (E xi_i xi_j)^2 }
    for 0 < x < sum E xi_i^2.
    """
    variances = np.asarray(variances, dtype=float)
    covariance = np.asarray(covariance, dtype=float)
    if covariance.shape != (variances.size, variances.size):
        raise ValueError("covariance shape does not match variances")
    if not np.allclose(np.diag(covariance), variances, rtol=1e-10, atol=1e-300):
        raise ValueError("covariance diagonal disagrees with variances")
    total = float(np.sum(variances))
    if not 0.0 < x < total:
        raise ValueError(
            f"x must lie in (0, sum of variances) = (0, {total}), got {x}")
    frob = float(np.sum(covariance ** 2))
    return float(np.exp(-(total - x) ** 2 / frob))
