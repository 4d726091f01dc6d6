"""Independent references: brute-force minimizations, finite differences and
Gaussian closed forms. They share no code path with the solvers beyond the
measure types, so agreement between the two is a real check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .measures import GridMeasure, Measure, _as_points
from .transforms import Potential, QuadratureGrid

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2 * np.pi))
MAX_CELLS = 201


@dataclass
class OracleResult:
    value: float
    minimizer: object
    method: str
    resolution: float
    converged: bool = True


# ---------------------------------------------------------------- inf-convolution


def _quantile_w2(edges, w, eta_pts, eta_w):
    """Exact ``W_2^2`` between a piecewise-constant density and atoms (d = 1).

    Also returns the cell averages of a Kantorovich potential, which is the
    first variation of ``W_2^2`` in the cell masses.
    """
    lo, hi = edges[:-1], edges[1:]
    h = hi - lo
    order = np.argsort(eta_pts)
    y, wy = eta_pts[order], eta_w[order]
    cum_k = np.concatenate([[0.0], np.cumsum(w)])
    cum_y = np.cumsum(wy)[:-1]
    # breakpoints b_j: quantile of kappa at the cumulative masses of eta
    b = np.empty(cum_y.size)
    for j, c in enumerate(cum_y):
        k = min(max(np.searchsorted(cum_k, c, side="right") - 1, 0), w.size - 1)
        frac = (c - cum_k[k]) / w[k] if w[k] > 0 else 0.0
        b[j] = lo[k] + frac * h[k]
    bounds = np.concatenate([[edges[0]], b, [edges[-1]]])
    # potential psi(z) = |z - y_j|^2 - g_j on [b_{j-1}, b_j], continuous at b_j
    g = np.zeros(y.size)
    for j in range(1, y.size):
        g[j] = g[j - 1] + (b[j - 1] - y[j]) ** 2 - (b[j - 1] - y[j - 1]) ** 2
    value = 0.0
    phi = np.zeros(w.size)
    dens = w / h
    for j in range(y.size):
        a0, a1 = bounds[j], bounds[j + 1]
        l = np.clip(lo, a0, a1)
        r = np.clip(hi, a0, a1)
        seg = ((r - y[j]) ** 3 - (l - y[j]) ** 3) / 3.0
        value += float(np.sum(dens * seg))
        phi += (seg - g[j] * (r - l)) / h
    return value, phi


def brute_force_infconv(x, eta: Measure, beta: float, n_cells: int = 201, lower: Optional[float] = None,
                        upper: Optional[float] = None, max_iters: int = 20_000, tol: float = 1e-12,
                        step: float = 0.5) -> OracleResult:
    """``min_kappa H(kappa | gamma_x) + (beta/2) W_2^2(kappa, eta)`` with ``bar kappa = bar eta``.

    ``kappa`` is a piecewise-constant density on ``n_cells`` cells of
    [lower, upper]. Damped entropic mirror descent; the mean constraint is
    enforced exactly at every step through its Lagrange multiplier. The
    result is an upper bound on the cost up to the log-density quadrature.
    """
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    eta = eta.to_discrete()
    if eta.dim != 1:
        raise ValueError("brute_force_infconv is one-dimensional")
    if not 2 <= n_cells <= MAX_CELLS:
        raise ValueError(f"n_cells must lie in [2, {MAX_CELLS}]")
    ys, wy = eta.atoms[:, 0], eta.weights
    m = float(wy @ ys)
    if lower is None:
        lower = min(x, ys.min()) - 7.0
    if upper is None:
        upper = max(x, ys.max()) + 7.0
    edges = np.linspace(lower, upper, n_cells + 1)
    ctr = 0.5 * (edges[:-1] + edges[1:])
    h = edges[1] - edges[0]
    # cell average of log gamma_x
    lg = -0.5 * (ctr - x) ** 2 - 0.5 * LOG_2PI - h**2 / 24.0

    def objective(w):
        nz = w > 0
        ent = float(np.sum(w[nz] * (np.log(w[nz] / h) - lg[nz]))) - float(np.sum(w[~nz] * lg[~nz]))
        w2, phi = _quantile_w2(edges, w, ys, wy)
        return ent + 0.5 * beta * w2, phi

    def project_mean(logw):
        def gap(lam):
            v = logw + lam * ctr
            p = np.exp(v - v.max())
            return p @ ctr / p.sum() - m
        lam = brentq(gap, -1e3, 1e3, xtol=1e-14)
        v = logw + lam * ctr
        p = np.exp(v - logsumexp(v))
        return p

    w = project_mean(lg + np.log(h))
    val, phi = objective(w)
    it = 0
    converged = False
    for it in range(1, max_iters + 1):
        logw = (1 - step) * np.log(np.maximum(w, 1e-300)) + step * (lg + np.log(h) - 0.5 * beta * phi)
        w_new = project_mean(logw)
        val_new, phi = objective(w_new)
        done = abs(val_new - val) <= tol * (1 + abs(val))
        w, val = w_new, val_new
        if done:
            converged = True
            break
    kappa = GridMeasure([lower], [h], (n_cells,), w)
    return OracleResult(val, kappa, "mirror-descent-grid", h, converged)


# ---------------------------------------------------------------- transform identity


def two_stage_transform(f: Potential, beta: float, queries, quad: QuadratureGrid, max_iters: int = 400,
                        tol: float = 1e-14) -> np.ndarray:
    """``(-f^{C_W})^{C_V}`` by two separate minimizations on the nodes of ``quad``.

    Stage 1: ``f^{C_W}(z) = min_rho (beta/2) int |z - y|^2 drho - int f drho``
    by enumeration of the vertices of the simplex. Stage 2:
    ``inf_rho H(rho | gamma_a) + int m drho`` over node measures by damped
    entropic mirror descent.
    """
    y = f.atoms
    z = quad.nodes
    m = np.empty(z.shape[0])
    for k in range(z.shape[0]):
        m[k] = min(0.5 * beta * float(np.sum((z[k] - y[j]) ** 2)) - f.values[j] for j in range(y.shape[0]))
    a = _as_points(queries, z.shape[1])
    d = z.shape[1]
    out = np.empty(a.shape[0])
    for i, ai in enumerate(a):
        # reference measure gamma_a on the nodes (with quadrature weights)
        lref = np.log(quad.weights) - 0.5 * np.sum((z - ai) ** 2, axis=1) - 0.5 * d * LOG_2PI
        logp = lref - logsumexp(lref)
        val_old = np.inf
        for _ in range(max_iters):
            # rho <- rho^(1/2) (ref e^{-m})^(1/2), normalized
            logp = 0.5 * logp + 0.5 * (lref - m)
            logp -= logsumexp(logp)
            p = np.exp(logp)
            val = float(p @ (logp - lref + m))
            if abs(val - val_old) <= tol * (1 + abs(val)):
                break
            val_old = val
        out[i] = val
    return out


# ---------------------------------------------------------------- Brenier–Strassen


def brute_force_brenier_strassen(mu: Measure, nu: Measure, n_grid: int = 21, zooms: int = 12) -> OracleResult:
    """Lattice search over the free entries of the transport polytope.

    The last row and column are determined by the marginals. After each
    pass the lattice is re-centred on the best point and shrunk by half.
    Intended for at most 3 x 3 instances.
    """
    mu, nu = mu.to_discrete(), nu.to_discrete()
    n, k = mu.size, nu.size
    free = (n - 1) * (k - 1)
    if free > 4:
        raise ValueError("brute force is limited to (n-1)(k-1) <= 4 free entries")
    x = mu.atoms
    y = nu.atoms

    def complete(v):
        # v: (N, n-1, k-1) free entries -> full plans (N, n, k)
        p = np.zeros((v.shape[0], n, k))
        p[:, : n - 1, : k - 1] = v
        p[:, : n - 1, k - 1] = mu.weights[: n - 1] - v.sum(axis=2)
        p[:, n - 1, : k - 1] = nu.weights[: k - 1] - v.sum(axis=1)
        p[:, n - 1, k - 1] = 1.0 - p[:, : n - 1].sum(axis=(1, 2)) - p[:, n - 1, : k - 1].sum(axis=1)
        return p

    if free == 0:
        p = np.outer(mu.weights, nu.weights)
        b = (p @ y) / mu.weights[:, None]
        return OracleResult(0.5 * float(mu.weights @ np.sum((x - b) ** 2, axis=1)), p, "lattice-zoom", 0.0)
    ub = np.minimum.outer(mu.weights[: n - 1], nu.weights[: k - 1]).reshape(-1)
    center = (np.outer(mu.weights, nu.weights)[: n - 1, : k - 1]).reshape(-1)
    width = ub.copy()
    best_v, best_p = np.inf, None
    for _ in range(zooms):
        axes = [np.clip(np.linspace(c - w, c + w, n_grid), 0.0, u) for c, w, u in zip(center, width, ub)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, free)
        p = complete(grid.reshape(-1, n - 1, k - 1))
        ok = np.all(p >= -1e-15, axis=(1, 2))
        p = p[ok]
        b = np.einsum("nij,jd->nid", p, y) / mu.weights[None, :, None]
        vals = 0.5 * np.einsum("i,ni->n", mu.weights, np.sum((x[None] - b) ** 2, axis=2))
        i = int(np.argmin(vals))
        if vals[i] < best_v:
            best_v, best_p = float(vals[i]), p[i]
        center = best_p[: n - 1, : k - 1].reshape(-1)
        width = width / 2.0
    return OracleResult(best_v, best_p, "lattice-zoom", float(width.max()))


# ---------------------------------------------------------------- finite differences


def finite_diff_check(fn: Callable, grad_fn: Callable, points, step: float = 1e-4) -> float:
    """Largest deviation between central differences of ``fn`` and ``grad_fn``.

    ``fn`` maps a point of R^d to a scalar or an array ``S``; ``grad_fn``
    returns an array of shape ``S + (d,)``, so Jacobians are checked the
    same way as gradients.
    """
    pts = _as_points(points)
    err = 0.0
    for p in pts:
        g = np.asarray(grad_fn(p), dtype=float)
        for i in range(p.size):
            e = np.zeros_like(p)
            e[i] = step
            fd = (np.asarray(fn(p + e), dtype=float) - np.asarray(fn(p - e), dtype=float)) / (2 * step)
            err = max(err, float(np.max(np.abs(fd - g[..., i]))))
    return err


# ---------------------------------------------------------------- closed forms


def gaussian_closed_forms(kind: str, **p) -> float:
    """Closed-form Gaussian values.

    kinds
    -----
    ``w2_1d``          m1, v1, m2, v2: ``W_2^2(N(m1,v1), N(m2,v2))``
    ``kl``             m, v, y: ``KL(N(m, v) || N(y, 1))`` in d = 1
    ``sb_single_atom`` x, m, beta, d=1: ``C_SB`` from ``x`` to ``delta_m``
    ``t_beta_dirac``   y, beta, m=0: ``T_beta[0](y)`` for ``nu = delta_m``
    ``psi_dirac``      x, beta, t: value function at time t for ``nu = delta_0``, ``f = 0``
    ``vol_cost_dirac`` beta: volatility part of the single-atom cost
    """
    def pos(name):
        if p[name] <= 0:
            raise ValueError(f"{name} must be positive")
        return float(p[name])

    if kind == "w2_1d":
        v1, v2 = pos("v1"), pos("v2")
        return (p["m1"] - p["m2"]) ** 2 + (np.sqrt(v1) - np.sqrt(v2)) ** 2
    if kind == "kl":
        v = pos("v")
        return 0.5 * ((p["m"] - p["y"]) ** 2 + v - 1.0 - np.log(v))
    if kind == "sb_single_atom":
        b = pos("beta")
        d = p.get("d", 1)
        diff = np.atleast_1d(np.asarray(p["x"], float) - np.asarray(p["m"], float))
        return 0.5 * float(diff @ diff) + 0.5 * d * np.log1p(b)
    if kind == "t_beta_dirac":
        b = pos("beta")
        r = float(p["y"]) - float(p.get("m", 0.0))
        return 0.5 * np.log1p(b) + b * r * r / (2 * (1 + b))
    if kind == "psi_dirac":
        b = pos("beta")
        s = 1.0 - float(p["t"])
        if s <= 0:
            raise ValueError("t must be below 1")
        return -float(p["x"]) ** 2 / (2 * s) - 0.5 * np.log1p(b * s)
    if kind == "vol_cost_dirac":
        b = pos("beta")
        return 0.5 * b / (1 + b)
    raise ValueError(f"unknown closed form {kind!r}")


__all__ = ["OracleResult", "brute_force_infconv", "two_stage_transform", "brute_force_brenier_strassen",
           "finite_diff_check", "gaussian_closed_forms"]
