"""Quadrature helpers for integrands with endpoint power singularities.

The house scheme: put a geometric (dyadic) mesh toward the singular
endpoint, interpolate the smooth factor piecewise-linearly, and integrate
the power weight against each linear piece in closed form.  Node doubling
then only has to chase the smooth factor, so convergence is fast and the
singularity itself never sees a quadrature node.
"""

from __future__ import annotations

import numpy as np


class QuadratureError(RuntimeError):
    """Raised when a refinement loop fails to reach its tolerance.

    Carries the last residual estimate in ``residual``.
    """

    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


_LEGENDRE_CACHE = {}


def gauss_nodes(order):
    """Gauss-Legendre nodes/weights on [0, 1], cached per order."""
    if order not in _LEGENDRE_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _LEGENDRE_CACHE[order] = ((x + 1.0) / 2.0, w / 2.0)
    return _LEGENDRE_CACHE[order]


class PowerMesh:
    """Relative quadrature rule for ∫_0^L w^p phi(w) dw with p > -1.

    Dyadic cells [2^-(k+1), 2^-k] graded toward the singularity carry
    Gauss-Legendre nodes (each cell optionally split into ``n_sub``
    uniform pieces); the innermost cell [0, 2^-levels] integrates the
    weight against a linear interpolant of phi in closed form.
    """

    def __init__(self, p, levels=30, n_sub=1, order=8):
        if p <= -1.0:
            raise ValueError(f"power exponent must exceed -1, got {p}")
        self.p = p
        self.levels = levels
        gx, gw = gauss_nodes(order)
        nodes, weights = [], []
        for k in range(levels):
            lo, hi = 2.0 ** (-k - 1), 2.0 ** (-k)
            sub = np.linspace(lo, hi, n_sub + 1)
            for a, b in zip(sub[:-1], sub[1:]):
                x = a + (b - a) * gx
                nodes.append(x)
                weights.append((b - a) * gw * x ** p)
        self.eps = 2.0 ** (-levels)
        self.rel_nodes = np.concatenate(nodes + [np.array([0.0, self.eps])])
        self._gl_weights = np.concatenate(weights)
        self._n_gl = self._gl_weights.size

    def integrate(self, phi_vals, lengths):
        """Combine phi values at ``lengths[:,None] * rel_nodes`` into integrals."""
        phi_vals = np.asarray(phi_vals, dtype=float)
        squeeze = phi_vals.ndim == 1
        if squeeze:
            phi_vals = phi_vals[None, :]
        lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
        p, eps = self.p, self.eps
        gl = phi_vals[:, :self._n_gl] @ self._gl_weights
        # innermost cell: w^p against the chord of phi between 0 and eps
        f0 = phi_vals[:, self._n_gl]
        f1 = phi_vals[:, self._n_gl + 1]
        slope = (f1 - f0) / eps
        inner = (f0 * eps ** (p + 1.0) / (p + 1.0)
                 + slope * eps ** (p + 2.0) / (p + 2.0))
        out = lengths ** (p + 1.0) * (gl + inner)
        return float(out[0]) if squeeze else out


_POWER_MESH_CACHE = {}


def power_mesh(p, levels=30, n_sub=1, order=8):
    key = (p, levels, n_sub, order)
    if key not in _POWER_MESH_CACHE:
        _POWER_MESH_CACHE[key] = PowerMesh(p, levels, n_sub, order)
    return _POWER_MESH_CACHE[key]


def power_weighted_integral(phi, length, p, rtol=1e-10, levels=30,
                            max_doublings=6):
    """Integral of w^p * phi(w) over [0, length] for p > -1, phi smooth.

    ``phi`` must accept an ndarray.  Refines by doubling the per-cell
    subdivision until two successive estimates agree to ``rtol``, else
    raises QuadratureError carrying the residual.
    """
    if length == 0.0:
        return 0.0
    prev = None
    n_sub = 1
    for _ in range(max_doublings + 1):
        mesh = power_mesh(p, levels=levels, n_sub=n_sub)
        val = mesh.integrate(phi(length * mesh.rel_nodes), length)
        if prev is not None:
            scale = max(abs(val), abs(prev), 1e-300)
            if abs(val - prev) <= rtol * scale + 1e-300:
                return val
        prev = val
        n_sub *= 2
    raise QuadratureError(
        f"power-weighted integral did not converge (last change "
        f"{abs(val - prev):.3e})", residual=abs(val - prev))


def power_weighted_integral_batch(phi, lengths, p, mesh=None, n_sub=1):
    """Vectorized ∫_0^{L_i} w^p phi(i, w) dw for a vector of lengths.

    ``phi(w_matrix)`` receives the (n_i, n_nodes) matrix of absolute w
    values and must return same-shape values.  No adaptive control here:
    the caller owns any refinement check (pass a finer ``n_sub``).
    """
    lengths = np.asarray(lengths, dtype=float)
    if mesh is None:
        mesh = power_mesh(p, n_sub=n_sub)
    elif mesh.p != p:
        raise ValueError(f"mesh exponent {mesh.p} does not match p={p}")
    w = lengths[:, None] * mesh.rel_nodes[None, :]
    return mesh.integrate(phi(w), lengths)


def graded_cells(a, b, grade_a=True, grade_b=True, base=16, levels=40):
    """Cell edges on [a, b], geometrically refined toward graded endpoints."""
    if not b > a:
        raise ValueError("empty interval")
    edges = np.linspace(a, b, base + 1)
    out = [edges]
    if grade_a:
        h0 = edges[1] - edges[0]
        out.append(a + h0 * 2.0 ** (-np.arange(1, levels + 1.0)))
    if grade_b:
        h1 = edges[-1] - edges[-2]
        out.append(b - h1 * 2.0 ** (-np.arange(1, levels + 1.0)))
    return np.unique(np.concatenate(out))


def composite_gauss(f, edges, order=8):
    """Composite Gauss-Legendre over the cells delimited by ``edges``."""
    x, w = gauss_nodes(order)
    lo, hi = edges[:-1], edges[1:]
    width = hi - lo
    nodes = lo[:, None] + width[:, None] * x[None, :]
    vals = f(nodes.ravel()).reshape(nodes.shape)
    return float(np.sum(vals @ w * width))


def adaptive_gauss(f, edges, order=8, rtol=1e-8, max_doublings=6):
    """Composite Gauss with cell-halving refinement until ``rtol``."""
    edges = np.asarray(edges, dtype=float)
    prev = composite_gauss(f, edges, order=order)
    for _ in range(max_doublings):
        mid = 0.5 * (edges[:-1] + edges[1:])
        edges = np.sort(np.concatenate([edges, mid]))
        val = composite_gauss(f, edges, order=order)
        scale = max(abs(val), abs(prev), 1e-300)
        if abs(val - prev) <= rtol * scale + 1e-300:
            return val
        prev = val
    raise QuadratureError(
        f"composite Gauss did not converge (last change {abs(val - prev):.3e})",
        residual=abs(val - prev))
