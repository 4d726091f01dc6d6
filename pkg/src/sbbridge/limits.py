"""Pointwise SB cost, beta-sweeps towards the limiting regimes, and the
reference solvers they are compared with (Brenier–Strassen, Bass residual).

Conventions: ``W_2^2`` carries no 1/2; the Brenier–Strassen value is
``sum_i mu_i |x_i - bar pi_{x_i}|^2 / 2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, root

from .errors import InfiniteEntropyError
from .measures import (Coupling, DiscreteMeasure, GridMeasure, Measure, _as_points, _quantile_coupling,
                       barycenter, gaussian_grid, pushforward, relative_entropy_gaussian, transport_lp,
                       wasserstein2_sq)
from .solvers import SolverOptions, sb_solve, sinkhorn_eot
from .transforms import QuadratureGrid, _log_gauss, _sqdist

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-6
# outer iterations grow like 1/beta; the solver default of 200 is too small below beta ~ 0.1
SWEEP_MAX_OUTER = 3000

TARGETS = ("schrodinger", "brenier_strassen", "bass_rescaled")


def _sweep_options(opts: Optional[SolverOptions]) -> SolverOptions:
    if opts is None:
        return SolverOptions(max_outer_iters=SWEEP_MAX_OUTER)
    return opts


@dataclass
class LimitReport:
    """Values along a beta grid, with the three limit targets.

    ``deviations[name][k]`` compares ``values[k]`` with the target ``name``
    on the scale where the limit holds: ``|C - H|`` for ``schrodinger``,
    ``|C - BS|`` for ``brenier_strassen`` and ``|(C - BS)/beta - target|``
    for ``bass_rescaled``.
    """

    beta_grid: list
    values: list
    monotone_flags: dict
    limit_targets: dict
    deviations: dict
    kind: str = "cost"
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "beta_grid": [float(b) for b in self.beta_grid],
            "values": [float(v) for v in self.values],
            "monotone_flags": {k: bool(v) for k, v in self.monotone_flags.items()},
            "limit_targets": {k: (None if v is None else float(v)) for k, v in self.limit_targets.items()},
            "deviations": {k: [float(x) for x in v] for k, v in self.deviations.items()},
            "meta": self.meta,
        }

    def csv_rows(self) -> list:
        """Long format: one row per (beta, target)."""
        rows = []
        for k, b in enumerate(self.beta_grid):
            for name in sorted(self.deviations):
                rows.append((float(b), float(self.values[k]), name, float(self.limit_targets[name]),
                             float(self.deviations[name][k])))
        return rows


def monotone_flags(beta_grid, values, offset: float = 0.0, tol: float = MONOTONE_TOL) -> dict:
    """The three monotonicity statements along an increasing beta grid.

    ``offset`` is the small-beta limit ``|x - bar rho|^2 / 2``.
    """
    b = np.asarray(beta_grid, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(b)
    b, v = b[order], v[order]
    return {
        "nondecreasing": bool(np.all(np.diff(v) >= -tol)),
        "over_beta_nonincreasing": bool(np.all(np.diff(v / b) <= tol)),
        "rescaled_nonincreasing": bool(np.all(np.diff((v - offset) / b) <= tol)),
    }


# ---------------------------------------------------------------- pointwise cost


def cost_sb(x, rho: Measure, beta: float, opts: Optional[SolverOptions] = None) -> float:
    """``C_SB^beta(x, rho)``, the SB value from a point mass at ``x``."""
    x = _as_points(x)
    return sb_solve(DiscreteMeasure(x, [1.0]), rho, beta, _sweep_options(opts)).value


def bass_rescaled_target(x, rho: Measure, n_cells: int = 241) -> float:
    """``W_2^2(gamma_{bar rho}, rho) / 2`` with the Gaussian on a grid."""
    m = barycenter(rho)
    if rho.dim > 1:
        n_cells = int(np.sqrt(50_000 / max(rho.to_discrete().size, 1)))
    return 0.5 * wasserstein2_sq(gaussian_grid(m, 1.0, n_cells), rho)[0]


def limit_sweep(x, rho: Measure, beta_grid: Sequence[float], opts: Optional[SolverOptions] = None,
                targets="auto") -> LimitReport:
    """``C_SB^beta(x, rho)`` over ``beta_grid`` with the three limit targets.

    ``targets="auto"`` includes the Schrödinger target only when ``rho`` is
    a GridMeasure; asking for it explicitly with an atomic ``rho`` raises
    InfiniteEntropyError.
    """
    x = _as_points(x)
    if targets == "auto":
        names = [t for t in TARGETS if t != "schrodinger" or isinstance(rho, GridMeasure)]
    else:
        names = list(targets)
        bad = set(names) - set(TARGETS)
        if bad:
            raise ValueError(f"unknown targets {sorted(bad)}")
    betas = sorted(float(b) for b in beta_grid)
    if any(b <= 0 for b in betas):
        raise ValueError("beta values must be positive")
    bs = 0.5 * float(np.sum((barycenter(rho) - x[0]) ** 2))
    tv = {}
    if "schrodinger" in names:
        if not isinstance(rho, GridMeasure):
            raise InfiniteEntropyError("an atomic rho has infinite entropy against gamma_x")
        tv["schrodinger"] = relative_entropy_gaussian(rho, x[0], 1.0)
    if "brenier_strassen" in names:
        tv["brenier_strassen"] = bs
    if "bass_rescaled" in names:
        tv["bass_rescaled"] = bass_rescaled_target(x, rho)
    values = [cost_sb(x, rho, b, opts) for b in betas]
    dev = {}
    for name, t in tv.items():
        if name == "bass_rescaled":
            dev[name] = [abs((v - bs) / b - t) for v, b in zip(values, betas)]
        else:
            dev[name] = [abs(v - t) for v in values]
    return LimitReport(betas, values, monotone_flags(betas, values, bs), tv, dev, "cost",
                       {"x": x[0].tolist()})


def value_sweep(mu: Measure, nu: Measure, beta_grid: Sequence[float], opts: Optional[SolverOptions] = None,
                sinkhorn_iters: int = 100_000) -> LimitReport:
    """``V_SB^beta(mu, nu)`` over ``beta_grid``.

    Targets: Sinkhorn ``V_EOT(mu, nu)`` when ``nu`` is a GridMeasure, and the
    Brenier–Strassen value. Grid targets should be solved with the
    ``"cells"`` backend so that the large-beta limit is the same discrete
    problem Sinkhorn solves.
    """
    betas = sorted(float(b) for b in beta_grid)
    opts = _sweep_options(opts)
    values = [sb_solve(mu, nu, b, opts).value for b in betas]
    tv = {}
    if isinstance(nu, GridMeasure):
        tv["schrodinger"] = sinkhorn_eot(mu, nu, sinkhorn_iters, 1e-12).value
    mu_d = mu.to_discrete()
    nu_d = nu.to_discrete(drop_zero=True) if isinstance(nu, GridMeasure) else nu
    if mu_d.size * nu_d.size <= 400:
        tv["brenier_strassen"] = brenier_strassen_solve(mu_d, nu_d)[0]
    dev = {name: [abs(v - t) for v in values] for name, t in tv.items()}
    flags = monotone_flags(betas, values, tv.get("brenier_strassen", 0.0))
    return LimitReport(betas, values, flags, tv, dev, "value")


# ---------------------------------------------------------------- Brenier–Strassen


@dataclass
class FWResult:
    value: float
    coupling: Coupling
    gap: float
    iterations: int
    converged: bool


def _bs_value(plan, mu, nu):
    b = (plan @ nu.atoms) / mu.weights[:, None]
    c = mu.atoms - b
    return 0.5 * float(mu.weights @ np.sum(c * c, axis=1)), c


def _bs_lmo(c, mu, nu):
    """Vertex minimizing ``<G, pi>`` with ``G_ij = -c_i . y_j``."""
    if mu.dim == 1:
        # comonotone pairing of c with y
        oa = np.argsort(c[:, 0], kind="stable")
        ob = np.argsort(nu.atoms[:, 0], kind="stable")
        i, j, m = _quantile_coupling(mu.weights[oa], nu.weights[ob])
        plan = np.zeros((mu.size, nu.size))
        np.add.at(plan, (oa[i], ob[j]), m)
        return plan
    return transport_lp(mu.weights, nu.weights, -(c @ nu.atoms.T))


def brenier_strassen_solve(mu: Measure, nu: Measure, opts=None, max_iters: int = 10_000,
                           tol: float = 1e-9) -> tuple:
    """``min_pi sum_i mu_i |x_i - bar pi_{x_i}|^2 / 2`` over couplings of (mu, nu).

    Away-step Frank–Wolfe with exact line search. The objective is a convex
    quadratic in the conditional barycenters, so the method converges
    linearly on the transport polytope.

    Returns
    -------
    value : float
    coupling : Coupling
    """
    res = brenier_strassen_fw(mu, nu, max_iters, tol)
    return res.value, res.coupling


def brenier_strassen_fw(mu: Measure, nu: Measure, max_iters: int = 10_000, tol: float = 1e-9) -> FWResult:
    mu, nu = mu.to_discrete(), nu.to_discrete()
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    ys = nu.atoms
    start = np.outer(mu.weights, nu.weights)
    verts = [start]
    lam = [1.0]
    plan = start.copy()
    gap = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        val, c = _bs_value(plan, mu, nu)
        grad = -(c @ ys.T)
        s = _bs_lmo(c, mu, nu)
        gap = float(np.sum(grad * (plan - s)))
        if gap <= tol:
            break
        scores = [float(np.sum(grad * v)) for v in verts]
        a = int(np.argmax(scores))
        away_gap = scores[a] - float(np.sum(grad * plan))
        if gap >= away_gap or lam[a] >= 1.0:
            direction, t_max, mode = s - plan, 1.0, "fw"
        else:
            direction, t_max, mode = plan - verts[a], lam[a] / (1.0 - lam[a]), "away"
        db = (direction @ ys) / mu.weights[:, None]
        den = float(mu.weights @ np.sum(db * db, axis=1))
        if den <= 0:
            break
        t = min(max(float(mu.weights @ np.sum(c * db, axis=1)) / den, 0.0), t_max)
        plan = plan + t * direction
        if mode == "fw":
            lam = [(1 - t) * w for w in lam]
            for k, v in enumerate(verts):
                if np.array_equal(v, s):
                    lam[k] += t
                    break
            else:
                verts.append(s)
                lam.append(t)
        else:
            lam = [(1 + t) * w for w in lam]
            lam[a] -= t
        keep = [k for k, w in enumerate(lam) if w > 1e-14]
        verts, lam = [verts[k] for k in keep], [lam[k] for k in keep]
    converged = gap <= tol
    if not converged:
        log.warning("Frank-Wolfe stopped with gap %.3e after %d iterations", gap, it)
    plan = np.clip(plan, 0.0, None)
    val, _ = _bs_value(plan, mu, nu)
    return FWResult(val, Coupling(mu, nu, plan, tol=1e-8), gap, it, converged)


# ---------------------------------------------------------------- Bass residual


def _bass_nodes(points, quad: Optional[QuadratureGrid], d: int) -> QuadratureGrid:
    if quad is not None and not quad.is_exact:
        return quad
    lo, hi = points.min(axis=0) - 8.0, points.max(axis=0) + 8.0
    # even node counts keep a node off symmetric Laguerre boundaries
    return QuadratureGrid.tensor(lo, hi, 4000 if d == 1 else 200)


def _smoothed_map(v_star_grad: Callable, quad: QuadratureGrid):
    """``y -> (grad v* * gamma)(y)`` by direct convolution over the nodes."""
    z = quad.nodes
    gz = np.asarray(v_star_grad(z), dtype=float).reshape(z.shape)
    lw = np.log(quad.weights)

    def smooth(y):
        y = _as_points(y, z.shape[1])
        lk = lw[None, :] + _log_gauss(_sqdist(y, z), 1.0, z.shape[1])
        k = np.exp(lk)
        return (k @ gz) / k.sum(axis=1, keepdims=True)
    return smooth


def _invert(smooth, x):
    """Solve ``smooth(y) = x`` row by row (a monotone map)."""
    x = _as_points(x)
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        if x.shape[1] == 1:
            g = lambda t: smooth([t])[0, 0] - xi[0]
            lo, hi = xi[0] - 1.0, xi[0] + 1.0
            for _ in range(60):
                if g(lo) < 0:
                    break
                lo -= 2.0 * (hi - lo)
            for _ in range(60):
                if g(hi) > 0:
                    break
                hi += 2.0 * (hi - lo)
            out[i, 0] = brentq(g, lo, hi, xtol=1e-13)
        else:
            sol = root(lambda t: smooth(t)[0] - xi, xi, tol=1e-12)
            out[i] = sol.x
    return out


def bass_residual(v_star_grad: Callable, mu: Measure, nu: Measure, quad: Optional[QuadratureGrid] = None,
                  alpha: Optional[Measure] = None) -> tuple:
    """Residuals of the Bass system for the map ``grad v*``.

    ``res1 = W_2((grad v*)_# (alpha * gamma), nu)`` and
    ``res2 = W_2(alpha, (grad (v* * gamma)^*)_# mu)``. Without ``alpha``
    the second relation defines it, so ``res2 = 0`` and only ``res1`` is
    informative.
    """
    mu = mu.to_discrete()
    nu_d = nu.to_discrete(drop_zero=True) if isinstance(nu, GridMeasure) else nu
    d = mu.dim
    smooth_q = _bass_nodes(np.vstack([mu.atoms, nu_d.atoms]), quad, d)
    smooth = _smoothed_map(v_star_grad, smooth_q)
    a_derived = pushforward(mu, lambda x: _invert(smooth, x))
    alpha = a_derived if alpha is None else alpha.to_discrete()
    # alpha * gamma on the nodes, then through grad v*
    if quad is None and isinstance(nu, GridMeasure):
        # push alpha * gamma forward on the lattice of nu itself
        q = QuadratureGrid.from_cells(nu)
    else:
        q = _bass_nodes(np.vstack([alpha.atoms, nu_d.atoms]), quad, d)
    lk = np.log(q.weights)[None, :] + _log_gauss(_sqdist(alpha.atoms, q.nodes), 1.0, d)
    mass = alpha.weights @ np.exp(lk)
    keep = mass > 1e-300
    img = np.asarray(v_star_grad(q.nodes[keep]), dtype=float).reshape(-1, d)
    pushed = _merge_images(img, mass[keep] / mass[keep].sum())
    res1 = float(np.sqrt(max(wasserstein2_sq(pushed, nu_d)[0], 0.0)))
    res2 = float(np.sqrt(max(wasserstein2_sq(alpha, a_derived)[0], 0.0)))
    return res1, res2


def _merge_images(points, weights) -> DiscreteMeasure:
    uniq, inv = np.unique(np.round(points, 12), axis=0, return_inverse=True)
    w = np.zeros(uniq.shape[0])
    np.add.at(w, inv.reshape(-1), weights)
    return DiscreteMeasure(uniq, w / w.sum())


__all__ = ["LimitReport", "FWResult", "cost_sb", "limit_sweep", "value_sweep", "monotone_flags",
           "brenier_strassen_solve", "brenier_strassen_fw", "bass_residual", "bass_rescaled_target",
           "SWEEP_MAX_OUTER", "TARGETS"]
