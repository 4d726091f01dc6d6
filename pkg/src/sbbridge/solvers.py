"""Dual ascent for the Schrödinger–Bass problem.

Outer loop (``sb_solve``)::

    f_0 = q_beta on supp(nu)
    repeat:
        alpha_i = (grad u_{i-1})_# mu                 # proximal map per atom of mu
        f_i     = argmax_f  <f, nu> + <T_beta[f], alpha_i>
        f_i    -= <f_i, nu>
    until the dual value and alpha stop moving.

The inner problem is concave in ``f``; it is solved by Levenberg–Marquardt
damped Newton steps that are only accepted when they raise the inner
objective, so the dual value ``D_beta`` never drops.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import NotConvergedError
from .measures import (Coupling, DiscreteMeasure, GridMeasure, Measure, _as_points, pushforward, transport_lp,
                       wasserstein2_sq)
from .transforms import (Potential, QuadratureGrid, SmoothPotential, _Quadrature, default_quadrature,
                         make_engine, open_cells_1d, q_beta)

log = logging.getLogger(__name__)

BACKENDS = ("auto", "exact", "cells", "quadrature")
STEP_CAP = 20.0
# below this inner gradient the Newton stall is taken as the round-off floor
GRAD_FALLBACK = 1e-6


@dataclass
class SolverOptions:
    """Tolerances and discretization choices for ``sb_solve``.

    Backends:

    ``"exact"``
        closed-form piecewise integration, d = 1; a GridMeasure ``nu`` is
        read as atoms at its cell centers.
    ``"cells"``
        ``nu`` must be a GridMeasure. Integration nodes are its cell
        centers, extended by ``cell_pad`` (default ``6 + 3/sqrt(beta)``) on
        the same lattice. Its large-beta limit is the discrete entropic OT
        solved by ``sinkhorn_eot``. ``cell_mode="box"`` refines each cell
        ``cell_refine`` times and measures transport cost to whole cells.
    ``"quadrature"``
        tensor trapezoid rule (Monte Carlo for d > 2).
    ``"auto"``
        ``"exact"`` in d = 1, ``"cells"`` for a GridMeasure in d >= 2,
        ``"quadrature"`` otherwise.

    ``softmin`` is the soft-minimum temperature used by node-based backends.
    """

    tol_inner: float = 1e-11
    tol_outer: float = 1e-10
    max_inner_iters: int = 200
    max_outer_iters: int = 200
    backend: str = "auto"
    quad_nodes: int = 101
    softmin: float = 1e-3
    prox_tol: float = 1e-10
    cell_mode: str = "lattice"
    cell_refine: int = 8
    cell_pad: Optional[float] = None
    rho_cells: int = 8001
    rho_pad: float = 8.0
    f_init: str = "q_beta"
    seed: int = 0

    def __post_init__(self):
        for name in ("tol_inner", "tol_outer", "prox_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.f_init not in ("q_beta", "zero"):
            raise ValueError("f_init must be 'q_beta' or 'zero'")
        if self.softmin < 0:
            raise ValueError("softmin must be nonnegative")
        if self.cell_mode not in ("lattice", "box"):
            raise ValueError("cell_mode must be 'lattice' or 'box'")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class InnerResult:
    potential: Potential
    value: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass
class SinkhornResult:
    value: float
    plan: Coupling
    potentials: tuple
    converged: bool
    iterations: int
    marginal_error: float


@dataclass
class SBSolution:
    """Output of ``sb_solve``; ``value`` is the last entry of ``dual_trace``."""

    f_star: Potential
    alpha_star: DiscreteMeasure
    rho_star: Optional[GridMeasure]
    u_star: SmoothPotential
    dual_trace: list
    coupling: Coupling
    beta: float
    converged: bool
    iterations: int
    mu: DiscreteMeasure = None
    nu: DiscreteMeasure = None
    quad: QuadratureGrid = None
    alpha_shift_trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.dual_trace[-1])

    @property
    def v_star_values(self) -> np.ndarray:
        """``v = q_1 - f/beta`` on supp(nu)."""
        return q_beta(self.nu.atoms, 1.0) - self.f_star.values / self.beta


# ------------------------------------------------------------ discretization


def effective_target(nu: Measure) -> DiscreteMeasure:
    """Atoms of ``nu`` carrying positive mass."""
    if isinstance(nu, GridMeasure):
        return nu.to_discrete(drop_zero=True)
    if np.all(nu.weights > 0):
        return nu
    keep = nu.weights > 0
    return DiscreteMeasure(nu.atoms[keep], nu.weights[keep])


def resolve_quadrature(mu: Measure, nu: Measure, beta: float, opts: SolverOptions) -> QuadratureGrid:
    d = nu.dim
    if opts.backend == "exact":
        if d != 1:
            raise ValueError("exact backend needs d = 1")
        return QuadratureGrid.exact()
    if opts.backend == "cells" or (opts.backend == "auto" and d > 1 and isinstance(nu, GridMeasure)):
        if not isinstance(nu, GridMeasure):
            raise ValueError("cells backend needs a GridMeasure target")
        pad = opts.cell_pad if opts.cell_pad is not None else 6.0 + 3.0 / np.sqrt(beta)
        if opts.cell_mode == "lattice":
            return QuadratureGrid.cell_world(nu, opts.softmin, 1, pad)
        refine = opts.cell_refine if d == 1 else max(1, opts.cell_refine // 4)
        return QuadratureGrid.cell_world(nu, opts.softmin, refine, pad, box=True)
    if d == 1 and opts.backend == "auto":
        return QuadratureGrid.exact()
    nu_d, mu_d = effective_target(nu), mu.to_discrete()
    pts = np.vstack([nu_d.atoms, mu_d.atoms])
    diam = np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)) * 2.0
    # alpha atoms sit within diam/beta of their x
    extra = np.vstack([pts.min(axis=0) - diam / beta, pts.max(axis=0) + diam / beta])
    if d == 1:
        lo, hi = extra.min() - 6.0 - 3.0 / np.sqrt(beta), extra.max() + 6.0 + 3.0 / np.sqrt(beta)
        return QuadratureGrid.tensor([lo], [hi], max(opts.quad_nodes, 2001), opts.softmin)
    return default_quadrature(nu_d, beta, np.vstack([pts, extra]), opts.quad_nodes, opts.softmin, opts.seed)


# ---------------------------------------------------------------- inner problem


def _inner_eval(fv, a_pts, a_w, nu, beta, quad, hess):
    eng = make_engine(Potential(nu, fv), beta, 1.0, quad)
    st = eng.stats(a_pts, mass=True)
    val = float(nu.weights @ fv - a_w @ st.log_z)
    grad = nu.weights - a_w @ st.cell_mass
    h = -eng.mass_jacobian(a_pts, a_w) if hess else None
    return val, grad, h, eng


def inner_objective(f: Potential, alpha: Measure, beta: float, quad: Optional[QuadratureGrid] = None):
    """``D_inner(f)`` and its gradient ``nu_j - sum_i alpha_i w_ij(f)``."""
    alpha = alpha.to_discrete()
    nu = f.support
    if quad is None:
        quad = resolve_quadrature(alpha, nu, beta, SolverOptions())
    a_pts = alpha.atoms[:, 0] if quad.is_exact else alpha.atoms
    val, grad, _, _ = _inner_eval(np.asarray(f.values, float), a_pts, alpha.weights, nu, beta, quad, False)
    return val, grad


def _activate(fv, nu, beta, quad):
    """Open empty Laguerre cells (exact backend); the inner objective cannot drop."""
    if not quad.is_exact:
        return fv
    return open_cells_1d(fv, nu.atoms[:, 0], beta)


def inner_dual_solve(alpha: DiscreteMeasure, nu: DiscreteMeasure, beta: float, f_init: Potential,
                     opts: Optional[SolverOptions] = None, quad: Optional[QuadratureGrid] = None) -> InnerResult:
    """Maximize ``D_inner(f) = <f, nu> + sum_i alpha_i T_beta[f](a_i)``.

    Newton directions from ``(-H + lam I + 11^T/m) d = grad`` inside a
    sup-norm trust radius. A step is kept when the achieved gain is at least
    a tenth of the predicted one; otherwise ``lam`` grows. Stops when
    ``max |grad| <= tol_inner``.
    """
    opts = opts or SolverOptions()
    nu = effective_target(nu)
    if quad is None:
        quad = resolve_quadrature(alpha, nu, beta, opts)
    alpha = alpha.to_discrete()
    a_pts = alpha.atoms[:, 0] if quad.is_exact else alpha.atoms
    a_w = alpha.weights
    m = nu.size
    fv = np.array(f_init.values, dtype=float)
    if m == 1:
        val, grad, _, _ = _inner_eval(fv, a_pts, a_w, nu, beta, quad, False)
        return InnerResult(Potential(nu, fv), val, float(np.abs(grad).max()), 0, True)
    lam = None
    ones = np.ones((m, m)) / m
    converged = False
    val = gmax = np.nan
    it = 0
    stalls = 0
    radius = STEP_CAP
    fv = _activate(fv, nu, beta, quad)
    val, grad, hess, _ = _inner_eval(fv, a_pts, a_w, nu, beta, quad, True)
    for it in range(1, opts.max_inner_iters + 1):
        gmax = float(np.abs(grad).max())
        if gmax <= opts.tol_inner:
            converged = True
            break
        neg = -hess
        scale = max(float(np.max(np.diag(neg))), 1e-12)
        lam = 1e-6 * scale if lam is None else max(lam, 1e-14 * scale)
        try:
            step = np.linalg.solve(neg + lam * np.eye(m) + ones, grad)
        except np.linalg.LinAlgError:
            lam *= 4.0
            continue
        big = float(np.abs(step).max())
        capped = big > radius
        if capped:
            # flat directions (cells with no mass) would otherwise take huge steps
            step *= radius / big
        pred = float(grad @ step - 0.5 * step @ neg @ step)
        ft = _activate(fv + step, nu, beta, quad)
        vt, gt, ht, _ = _inner_eval(ft, a_pts, a_w, nu, beta, quad, True)
        gain = (vt - val) / pred if pred > 0 else -1.0
        # round-off regime: a nondecreasing value with a smaller gradient is progress
        noise = 1e-13 * (1.0 + abs(val))
        if gain > 0.1 or (vt >= val - noise and pred <= noise and np.abs(gt).max() < gmax):
            fv, val, grad, hess = ft, vt, gt, ht
            lam = lam / 3.0 if gain > 0.5 else lam
            radius = radius * 4.0 if capped and gain > 0.5 else radius
            stalls = 0
        else:
            lam *= 4.0
            radius = max(radius / 4.0, STEP_CAP) if capped else radius
            stalls += 1
            if pred <= noise or stalls > 60:
                # saturated cells make the Newton model useless; try the gradient
                trial = _gradient_step(fv, val, grad, a_pts, a_w, nu, beta, quad, radius) \
                    if gmax > GRAD_FALLBACK else None
                if trial is None:
                    # round-off floor: no representable ascent left
                    log.debug("inner ascent stopped at |grad| = %.3e", gmax)
                    break
                fv, val, grad, hess = trial
                lam, stalls = None, 0
    return InnerResult(Potential(nu, fv), val, gmax, it, converged)


def _gradient_step(fv, val, grad, a_pts, a_w, nu, beta, quad, radius):
    """Armijo backtracking along the mean-zero gradient; None if nothing is gained."""
    g = grad - grad.mean()
    gg = float(g @ g)
    if gg == 0.0:
        return None
    t = radius / float(np.abs(g).max())
    for _ in range(60):
        ft = _activate(fv + t * g, nu, beta, quad)
        vt, gt, ht, _ = _inner_eval(ft, a_pts, a_w, nu, beta, quad, True)
        if vt >= val + 1e-4 * t * gg:
            return ft, vt, gt, ht
        t *= 0.5
    return None


# ---------------------------------------------------------------- dual value


def dual_objective(f: Potential, mu: Measure, nu: Measure, beta: float,
                   quad: Optional[QuadratureGrid] = None, y0=None, return_argmin=False):
    """``D_beta[f] = <f, nu> - sum_i mu_i M(x_i)`` with ``M = q_beta box (-T_beta[f])``."""
    mu = mu.to_discrete()
    if quad is None:
        quad = resolve_quadrature(mu, f.support, beta, SolverOptions())
    sp = SmoothPotential(f, beta, quad)
    y, env = sp.prox(mu.atoms, y0)
    val = float(f.support.weights @ f.values - mu.weights @ env)
    return (val, y, sp) if return_argmin else val


# ---------------------------------------------------------------- outer loop


def initial_potential(nu: DiscreteMeasure, beta: float, kind: str = "q_beta") -> Potential:
    if kind == "q_beta":
        return Potential.quadratic(nu, beta).normalized()
    return Potential(nu, np.zeros(nu.size), "raw").normalized()


def sb_solve(mu: Measure, nu: Measure, beta: float, opts: Optional[SolverOptions] = None,
             f_init: Optional[Potential] = None) -> SBSolution:
    """Algorithm 1: alternate the alpha-update and the inner dual solve.

    The returned ``dual_trace`` has ``iterations + 1`` entries; entry 0 is the
    value of the initial potential.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    mu_d = mu.to_discrete()
    nu_d = effective_target(nu)
    if mu_d.dim != nu_d.dim:
        raise ValueError("mu and nu live in different dimensions")
    quad = resolve_quadrature(mu_d, nu, beta, opts)
    if f_init is None:
        f = initial_potential(nu_d, beta, opts.f_init)
    else:
        f = Potential(nu_d, f_init.values).normalized()
    x = mu_d.atoms
    d_val, y, sp = dual_objective(f, mu_d, nu_d, beta, quad, None, True)
    trace, shifts = [d_val], []
    alpha = pushforward(mu_d, lambda _: y)
    converged = False
    it = 0
    t_inner = t_prox = 0.0
    for it in range(1, opts.max_outer_iters + 1):
        t0 = time.perf_counter()
        inner = inner_dual_solve(alpha, nu_d, beta, f, opts, quad)
        t_inner += time.perf_counter() - t0
        f_new = inner.potential.normalized()
        t0 = time.perf_counter()
        d_new, y_new, sp_new = dual_objective(f_new, mu_d, nu_d, beta, quad, y, True)
        t_prox += time.perf_counter() - t0
        alpha_new = pushforward(mu_d, lambda _: y_new)
        shift = float(np.sqrt(max(wasserstein2_sq(alpha, alpha_new)[0], 0.0))) if alpha_new.dim <= 2 else \
            float(np.sqrt(mu_d.weights @ np.sum((y_new - y) ** 2, axis=1)))
        if d_new < trace[-1] - 1e-9:
            log.warning("dual value decreased by %.3e at iteration %d", trace[-1] - d_new, it)
        trace.append(d_new)
        shifts.append(shift)
        f, y, sp, alpha = f_new, y_new, sp_new, alpha_new
        if not inner.converged and inner.grad_norm > GRAD_FALLBACK:
            log.info("inner solve stopped at |grad| = %.3e (iteration %d)", inner.grad_norm, it)
            continue
        if abs(trace[-1] - trace[-2]) <= opts.tol_outer * (1 + abs(d_new)) and shift <= opts.tol_outer:
            converged = True
            break
    coupling = _coupling_from(f, y, mu_d, nu_d, beta, quad, exact_target=converged)
    rho = materialize_rho(f, alpha, beta, quad, opts) if mu_d.dim <= 2 else None
    timings = {"total": time.perf_counter() - t_start, "inner": t_inner, "prox": t_prox}
    return SBSolution(f, alpha, rho, sp, trace, coupling, float(beta), converged, it,
                      mu_d, nu_d, quad, shifts, timings)


def _coupling_from(f, y, mu, nu, beta, quad, tol=1e-3, exact_target=True):
    eng = make_engine(f, beta, 1.0, quad)
    a = y[:, 0] if quad.is_exact else y
    w = eng.stats(a, mass=True).cell_mass
    w = w / w.sum(axis=1, keepdims=True)
    mass = mu.weights[:, None] * w
    if not exact_target:
        # stopped early: keep the plan, against the marginal it actually has
        cols = mass.sum(axis=0)
        nu = DiscreteMeasure(nu.atoms, cols / cols.sum())
    return Coupling(mu, nu, mass, tol=tol)


def recover_coupling(sol: SBSolution, mu: Optional[Measure] = None, nu: Optional[Measure] = None,
                     beta: Optional[float] = None, quad: Optional[QuadratureGrid] = None) -> Coupling:
    """``pi(x_i, y_j) = mu_i * (tilted mass of the Laguerre cell of y_j at grad u(x_i))``."""
    if not sol.converged:
        raise NotConvergedError("coupling recovery needs a converged solution")
    mu = (mu or sol.mu).to_discrete()
    nu = effective_target(nu or sol.nu)
    beta = sol.beta if beta is None else beta
    quad = quad or sol.quad
    y = sol.u_star.gradient(mu.atoms)
    return _coupling_from(sol.f_star, y, mu, nu, beta, quad)


def materialize_rho(f: Potential, alpha: DiscreteMeasure, beta: float, quad: QuadratureGrid,
                    opts: Optional[SolverOptions] = None) -> Optional[GridMeasure]:
    """``rho = sum_i alpha_i chi_{a_i}`` as cell masses on a grid.

    Exact backend: a fresh uniform grid of ``rho_cells`` cells covering the
    supports padded by ``rho_pad``. Node backends: their own node grid.
    """
    opts = opts or SolverOptions()
    if quad.is_exact:
        grid = _rho_grid(f, alpha, opts)
        eng = _Quadrature(f.atoms, f.values, beta, 1.0, QuadratureGrid.from_cells(grid))
        masses = eng.node_masses(alpha.atoms, alpha.weights)
        return GridMeasure(grid.origin, grid.spacing, grid.shape, masses / masses.sum())
    if quad.shape is None:
        return None
    eng = make_engine(f, beta, 1.0, quad)
    return quad.to_grid_measure(eng.node_masses(alpha.atoms, alpha.weights))


def _rho_grid(f, alpha, opts) -> GridMeasure:
    pts = np.vstack([f.atoms, alpha.atoms])
    lo, hi = pts.min(axis=0) - opts.rho_pad, pts.max(axis=0) + opts.rho_pad
    n = opts.rho_cells if pts.shape[1] == 1 else int(np.sqrt(opts.rho_cells))
    shape = (n,) * pts.shape[1]
    k = int(np.prod(shape))
    return GridMeasure(lo, (hi - lo) / np.asarray(shape), shape, np.full(k, 1.0 / k))


# ---------------------------------------------------------------- Sinkhorn


def sinkhorn_eot(alpha: Measure, rho: GridMeasure, max_iters: int = 10_000, tol: float = 1e-10) -> SinkhornResult:
    """Entropic OT ``inf_pi sum_i alpha_i H(pi_{x_i} | gamma_{x_i})`` with target ``rho``.

    Log-domain Sinkhorn on ``K_ij = gamma(z_j - x_i) * vol``. Column sums are
    exact after each sweep; ``tol`` bounds the L1 row violation.
    """
    if not isinstance(rho, GridMeasure):
        raise TypeError("rho must be a GridMeasure")
    alpha = alpha.to_discrete()
    if alpha.dim != rho.dim:
        raise ValueError("dimension mismatch")
    keep_a = alpha.weights > 0
    keep_r = rho.weights > 0
    x, a = alpha.atoms[keep_a], alpha.weights[keep_a]
    z, b = rho.centers()[keep_r], rho.weights[keep_r]
    d = x.shape[1]
    r2 = np.sum((x[:, None, :] - z[None, :, :]) ** 2, axis=2)
    log_k = -0.5 * r2 - 0.5 * d * np.log(2 * np.pi) + np.log(rho.cell_volume)
    la, lb = np.log(a), np.log(b)
    phi, psi = np.zeros(a.size), np.zeros(b.size)
    err = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        phi = la - logsumexp(log_k + psi[None, :], axis=1)
        psi = lb - logsumexp(log_k + phi[:, None], axis=0)
        rows = np.exp(logsumexp(log_k + phi[:, None] + psi[None, :], axis=1))
        err = float(np.abs(rows - a).sum())
        if err <= tol:
            converged = True
            break
    if not converged:
        log.warning("Sinkhorn stopped at marginal error %.3e", err)
    log_p = log_k + phi[:, None] + psi[None, :]
    p = np.exp(log_p)
    value = float(np.sum(p * (phi[:, None] + psi[None, :] - la[:, None])))
    full = np.zeros((alpha.size, rho.size))
    full[np.ix_(np.flatnonzero(keep_a), np.flatnonzero(keep_r))] = p
    plan = Coupling(alpha, rho.to_discrete(), full, tol=max(1e-9, 2 * err))
    return SinkhornResult(value, plan, (phi, psi), converged, it, err)


# ---------------------------------------------------------------- diagnostics


def complementary_slackness(sol: SBSolution, sinkhorn_tol: float = 1e-12):
    """Residuals of the two slackness identities at the computed optimum.

    ``r_eot = V_EOT(alpha, rho) - [<-m, rho> + <T_beta[f], alpha>]`` and
    ``r_w = (beta/2) W_2^2(rho, nu) - [<m, rho> + <f, nu>]``, evaluated
    on the materialized grid of ``rho`` (node sums for every integral).
    """
    rho = sol.rho_star
    if rho is None:
        raise ValueError("solution carries no grid rho")
    f, alpha, beta = sol.f_star, sol.alpha_star, sol.beta
    tau = 0.0 if sol.quad.is_exact else sol.quad.softmin
    rq = QuadratureGrid.from_cells(rho, tau) if sol.quad.half_width is None else sol.quad.with_nodes(rho)
    eng = _Quadrature(f.atoms, f.values, beta, 1.0, rq)
    t_hat = -eng.stats(alpha.atoms).log_z
    m_nodes = eng.m_nodes
    eot = sinkhorn_eot(alpha, rho, tol=sinkhorn_tol)
    r_eot = eot.value - (-(rho.weights @ m_nodes) + alpha.weights @ t_hat)
    if rq.half_width is None:
        w2, _ = wasserstein2_sq(rho, sol.nu)
    else:
        keep = rho.weights > 0
        cost = rq.sqdist(rho.centers()[keep], sol.nu.atoms)
        w2 = float(np.sum(transport_lp(rho.weights[keep], sol.nu.weights, cost) * cost))
    r_w = 0.5 * beta * w2 - (rho.weights @ m_nodes + sol.nu.weights @ f.values)
    return float(r_eot), float(r_w)


def fixed_point_residual(sol: SBSolution) -> float:
    """``W_2(alpha*, (grad u*)_# mu)``."""
    y = sol.u_star.gradient(sol.mu.atoms)
    return float(np.sqrt(max(wasserstein2_sq(sol.alpha_star, pushforward(sol.mu, lambda _: y))[0], 0.0)))
