"""Simulation of the optimal (X, Y) system and the time-t value function.

With ``s = 1 - t`` and the tilted law ``~ exp(-m(z)) gamma_s(w - z)``::

    a_t = grad log g_t(Y_t)   = (E[Z] - w) / s
    H_t = hess log g_t(Y_t)   = Cov[Z] / s^2 - I / s
    dY  = a dt + dB,           Y_0 = grad u(X_0)
    dX  = a dt + (I + H/beta) dB

``g_{y,t}`` depends on ``y`` only through a normalizing constant, so one
set of tilted moments per time step serves every path. ``X_1`` is set to
``grad v*(Y_1)``, the Laguerre atom of ``Y_1``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NotConvergedError
from .measures import DiscreteMeasure, _as_points, merge_atoms
from .solvers import SBSolution
from .transforms import Potential, QuadratureGrid, SmoothPotential, make_engine, moreau_transform

log = logging.getLogger(__name__)

MIN_STEPS = 100


@dataclass
class PathEnsemble:
    """Simulated paths; ``x_paths`` and ``y_paths`` are (path, time, dim)."""

    times: np.ndarray
    x_paths: np.ndarray
    y_paths: np.ndarray
    cost_samples: np.ndarray
    seed: int
    beta: float
    n_steps: int
    x0_index: np.ndarray = None
    terminal_index: np.ndarray = None
    drift_energy: np.ndarray = None
    drift_increments: np.ndarray = None
    min_vol_eig: float = np.nan
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.x_paths.shape[0]

    def terminal_law(self) -> DiscreteMeasure:
        """Empirical law of ``X_1``."""
        x1 = self.x_paths[:, -1, :]
        return merge_atoms(x1, np.full(x1.shape[0], 1.0 / x1.shape[0]))

    def summary(self) -> dict:
        mean, se = dynamic_cost_estimate(self)
        inc = self.drift_increments
        return {
            "beta": self.beta,
            "seed": self.seed,
            "n_paths": int(self.n_paths),
            "n_steps": int(self.n_steps),
            "cost_mean": mean,
            "cost_std_error": se,
            "drift_energy_mean": float(np.mean(self.drift_energy)),
            "martingale_increment_mean": np.mean(inc, axis=0).tolist(),
            "martingale_increment_se": (np.std(inc, axis=0, ddof=1) / np.sqrt(inc.shape[0])).tolist(),
            "min_vol_eig": float(self.min_vol_eig),
        }


def _at_variance(engine, s):
    e = copy.copy(engine)
    e.s = float(s)
    return e


def _path_normals(seed: int, paths, n_steps: int, d: int):
    """Uniforms for the initial atom and normals for every step, keyed by (seed, path)."""
    u = np.empty(len(paths))
    z = np.empty((len(paths), n_steps, d))
    for k, p in enumerate(paths):
        g = np.random.Generator(np.random.Philox(key=[int(seed), int(p)]))
        u[k] = g.random()
        z[k] = g.standard_normal((n_steps, d))
    return u, z


def tilted_derivatives(engine, w):
    """``(grad, hess)`` of ``log g_t`` at the rows of ``w`` for an engine of variance ``1 - t``."""
    w = _as_points(w)
    d = w.shape[1]
    s = engine.s
    q = w[:, 0] if hasattr(engine, "piece_y") else w
    st = engine.stats(q, cov=True)
    grad = (st.mean - w) / s
    hess = st.cov / s**2 - np.eye(d)[None] / s
    return grad, 0.5 * (hess + np.transpose(hess, (0, 2, 1))), st.log_z


def log_g(f: Potential, beta: float, t: float, w, y=None, quad: Optional[QuadratureGrid] = None):
    """``log g_{y,t}(w)`` with its gradient and Hessian in ``w``.

    Without ``y`` the normalizing constant ``-log Z_1(y)`` is omitted.
    """
    if not 0 <= t < 1:
        raise ValueError("t must lie in [0, 1)")
    eng = make_engine(f, beta, 1.0 - t, quad)
    grad, hess, log_z = tilted_derivatives(eng, w)
    if y is not None:
        e1 = make_engine(f, beta, 1.0, quad)
        yy = _as_points(y, f.dim)
        log_z = log_z - e1.stats(yy[:, 0] if hasattr(e1, "piece_y") else yy).log_z
    return log_z, grad, hess


def simulate_sb(sol: SBSolution, n_paths: int = 10_000, n_steps: int = 1000, seed: int = 0,
                record_every: Optional[int] = None, block_size: int = 2000) -> PathEnsemble:
    """Euler–Maruyama for the optimal pair (X, Y).

    Parameters
    ----------
    sol : converged SBSolution
    n_steps : int
        Uniform steps on [0, 1]; drift and volatility use the left point,
        so the last evaluation is at ``t = 1 - 1/n_steps``.
    seed : int
        Path ``p`` draws from ``Philox(key=(seed, p))``; results do not
        depend on ``block_size``.
    record_every : int, optional
        Keep every k-th time point (default: about 100 points).
    """
    if not sol.converged:
        raise NotConvergedError("simulation needs a converged solution")
    if n_steps < MIN_STEPS:
        raise ValueError(f"n_steps must be at least {MIN_STEPS}")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    beta = sol.beta
    mu, f = sol.mu, sol.f_star
    d = mu.dim
    dt = 1.0 / n_steps
    record_every = record_every or max(1, n_steps // 100)
    rec_steps = np.unique(np.r_[np.arange(0, n_steps, record_every), n_steps])
    times = rec_steps * dt
    y0_atoms = sol.u_star.gradient(mu.atoms)
    base = make_engine(f, beta, 1.0, sol.quad)
    engines = [_at_variance(base, 1.0 - k * dt) for k in range(n_steps)]
    cum = np.cumsum(mu.weights)
    cum[-1] = 1.0
    k_mid = n_steps // 2
    eye = np.eye(d)

    xs = np.empty((n_paths, rec_steps.size, d))
    ys = np.empty_like(xs)
    cost = np.zeros(n_paths)
    energy = np.zeros(n_paths)
    incr = np.zeros((n_paths, d))
    x0_idx = np.empty(n_paths, dtype=int)
    term_idx = np.empty(n_paths, dtype=int)
    min_eig = np.inf
    for start in range(0, n_paths, block_size):
        paths = np.arange(start, min(start + block_size, n_paths))
        u, z = _path_normals(seed, paths, n_steps, d)
        idx = np.searchsorted(cum, u, side="right").clip(0, mu.size - 1)
        x0_idx[paths] = idx
        x = mu.atoms[idx].copy()
        y = y0_atoms[idx].copy()
        r = 0
        a0 = None
        for k in range(n_steps):
            if rec_steps[r] == k:
                xs[paths, r], ys[paths, r] = x, y
                r += 1
            a, h, _ = tilted_derivatives(engines[k], y)
            if k == 0:
                a0 = a
            if k == k_mid:
                incr[paths] = a - a0
            b = eye[None] + h / beta
            if d == 1:
                min_eig = min(min_eig, float(b.min()))
            else:
                min_eig = min(min_eig, float(np.linalg.eigvalsh(b).min()))
            a2 = np.sum(a * a, axis=1)
            cost[paths] += (0.5 * a2 + np.sum(h * h, axis=(1, 2)) / (2.0 * beta)) * dt
            energy[paths] += a2 * dt
            db = np.sqrt(dt) * z[:, k, :]
            x = x + a * dt + np.einsum("nij,nj->ni", b, db)
            y = y + a * dt + db
        _, j = moreau_transform(f, beta, y)
        term_idx[paths] = j
        xs[paths, -1] = f.atoms[j]
        ys[paths, -1] = y
    if min_eig < 0:
        log.warning("volatility matrix lost positive definiteness: min eigenvalue %.3e", min_eig)
    else:
        log.info("minimal volatility eigenvalue %.3e", min_eig)
    return PathEnsemble(times, xs, ys, cost, int(seed), float(beta), int(n_steps), x0_idx, term_idx,
                        energy, incr, float(min_eig))


def dynamic_cost_estimate(ens: PathEnsemble, beta: Optional[float] = None) -> tuple:
    """Sample mean and standard error of the per-path running cost."""
    if beta is not None and not np.isclose(beta, ens.beta):
        raise ValueError(f"ensemble was simulated at beta={ens.beta}, not {beta}")
    c = np.asarray(ens.cost_samples, dtype=float)
    se = float(np.std(c, ddof=1) / np.sqrt(c.size)) if c.size > 1 else float("nan")
    return float(np.mean(c)), se


def potential_at_time(f: Potential, beta: float, t: float, queries, quad: Optional[QuadratureGrid] = None):
    """``psi_t = q_beta box log(exp(-m) * gamma_{1-t})`` with ``psi_1 = f``.

    ``psi_0`` is the envelope ``M = q_beta box (-T_beta[f])`` entering the
    dual value. At ``t = 1`` the values of ``f`` are returned on its atoms
    and ``-inf`` elsewhere.
    """
    x = _as_points(queries, f.dim)
    if t == 1:
        out = np.full(x.shape[0], -np.inf)
        for i, q in enumerate(x):
            hit = np.flatnonzero(np.all(np.abs(f.atoms - q) <= 1e-12, axis=1))
            if hit.size:
                out[i] = f.values[hit[0]]
        return out
    if not 0 <= t < 1:
        raise ValueError("t must lie in [0, 1]")
    sp = SmoothPotential(f, beta, quad, variance=1.0 - t)
    return sp.envelope(x)


__all__ = ["PathEnsemble", "simulate_sb", "dynamic_cost_estimate", "potential_at_time", "log_g",
           "tilted_derivatives", "MIN_STEPS"]
