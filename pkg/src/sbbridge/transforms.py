"""Transform calculus on a discrete target support.

For a potential ``f`` on atoms ``y_1..y_m`` and ``beta > 0``:

* Moreau transform  ``m(z) = min_j (beta/2)|z - y_j|^2 - f_j``
* tilted partition  ``Z_s(a) = int exp(-m(z)) gamma_s(a - z) dz``
* ``T_beta[f](a) = -log Z_1(a)``
* outer envelope    ``M(x) = inf_y (beta/2)|x - y|^2 - T_beta[f](y)``
* smooth potential  ``u = q_1 - M / beta`` with ``grad u(x) = argmin_y``.

Two integration engines evaluate ``Z_s`` and its moments:

``_Exact1D``
    d = 1 only. ``m`` is piecewise quadratic on the Laguerre cells, so
    every piece is a truncated Gaussian integral in closed form.
``_Quadrature``
    Any d. Weighted nodes (tensor trapezoid, grid cells or Monte Carlo),
    optionally with a soft minimum of temperature ``softmin`` in ``m``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import linprog
from scipy.special import log_ndtr, logsumexp

from .errors import EmptyMassError, ProximalFailure
from .measures import DiscreteMeasure, GridMeasure, Measure, _as_points

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
NORMALIZATIONS = ("nu-mean-zero", "raw")
QUAD_KINDS = ("exact-1d", "tensor-trapezoid", "grid-cells", "monte-carlo")


def q_beta(x, beta: float) -> np.ndarray:
    """``(beta/2)|x|^2`` row-wise."""
    x = _as_points(x)
    return 0.5 * beta * np.sum(x**2, axis=1)


@dataclass(frozen=True)
class Potential:
    """Real values indexed by the atoms (or cells) of ``support``."""

    support: Measure
    values: np.ndarray
    normalization: str = "raw"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.support.size:
            raise ValueError(f"{v.size} values for a support of size {self.support.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "nu-mean-zero" and abs(self.support.weights @ v) > 1e-10 * max(1.0, np.abs(v).max()):
            raise ValueError("values are not nu-mean-zero")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def atoms(self) -> np.ndarray:
        return self.support.atoms

    @property
    def dim(self) -> int:
        return self.support.dim

    def shift(self, c: float) -> "Potential":
        return Potential(self.support, self.values + c, "raw")

    def normalized(self) -> "Potential":
        v = self.values - self.support.weights @ self.values
        return Potential(self.support, v, "nu-mean-zero")

    def with_values(self, values) -> "Potential":
        return Potential(self.support, values, "raw")

    @classmethod
    def quadratic(cls, support: Measure, beta: float) -> "Potential":
        """``q_beta`` restricted to the support."""
        return cls(support, q_beta(support.atoms, beta), "raw")

    def to_json(self) -> dict:
        return {"support_ref": "nu", "values": self.values.tolist(), "normalization": self.normalization}


@dataclass(frozen=True)
class QuadratureGrid:
    """Weighted integration nodes.

    ``kind == "exact-1d"`` carries no nodes and selects closed-form
    piecewise Gaussian integration (d = 1 only). ``softmin > 0`` replaces
    the hard minimum inside the Moreau transform by
    ``-softmin * log sum_j exp(-(...)/softmin)``; it is used by the solver
    on quadrature backends to make the inner problem smooth.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    softmin: float = 0.0
    shape: Optional[tuple] = None
    half_width: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in QUAD_KINDS:
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.kind != "exact-1d":
            nodes = _as_points(nodes)
            if nodes.shape[0] != weights.size or weights.size == 0:
                raise ValueError("nodes and weights must be nonempty and aligned")
            if not np.all(np.isfinite(nodes)) or np.any(weights <= 0):
                raise ValueError("nodes must be finite and weights positive")
        if self.softmin < 0:
            raise ValueError("softmin must be nonnegative")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if self.half_width is not None:
            object.__setattr__(self, "half_width", np.asarray(self.half_width, dtype=float).reshape(-1))

    @classmethod
    def exact(cls) -> "QuadratureGrid":
        return cls(np.zeros((0, 1)), np.zeros(0), "exact-1d")

    @property
    def is_exact(self) -> bool:
        return self.kind == "exact-1d"

    @classmethod
    def tensor(cls, lower, upper, n, softmin: float = 0.0) -> "QuadratureGrid":
        """Tensor trapezoid rule with ``n`` nodes per axis on [lower, upper]."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        d = lower.size
        ns = [int(n)] * d if np.isscalar(n) else [int(k) for k in n]
        axes, wts = [], []
        for k in range(d):
            pts = np.linspace(lower[k], upper[k], ns[k])
            h = pts[1] - pts[0]
            w = np.full(ns[k], h)
            w[0] = w[-1] = 0.5 * h
            axes.append(pts)
            wts.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
        wmesh = np.meshgrid(*wts, indexing="ij")
        weights = np.prod(np.stack([w.reshape(-1) for w in wmesh], axis=1), axis=1)
        return cls(nodes, weights, "tensor-trapezoid", softmin, tuple(ns))

    @classmethod
    def from_cells(cls, grid: GridMeasure, softmin: float = 0.0) -> "QuadratureGrid":
        """Cell centers of ``grid`` weighted by the cell volume (midpoint rule)."""
        return cls(grid.centers(), np.full(grid.size, grid.cell_volume), "grid-cells", softmin, grid.shape)

    @classmethod
    def cell_world(cls, grid: GridMeasure, softmin: float = 0.0, refine: int = 1, pad: float = 0.0,
                   box: bool = False) -> "QuadratureGrid":
        """Lattice of the cells of ``grid``, refined ``refine`` times and extended by ``pad``.

        With ``box`` the target atoms are read as whole cells: the Moreau cost
        to atom ``j`` is ``(beta/2) dist(z, cell_j)^2``, so mass moves freely
        inside a cell. Without it the cost is measured to the cell center.
        """
        refine = max(int(refine), 1)
        h = grid.spacing / refine
        extra = np.ceil(np.full(grid.dim, pad) / h).astype(int)
        shape = tuple(int(n) for n in np.asarray(grid.shape) * refine + 2 * extra)
        lo = grid.origin - extra * h
        axes = [lo[k] + h[k] * (np.arange(shape[k]) + 0.5) for k in range(grid.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
        hw = 0.5 * grid.spacing if box else None
        return cls(nodes, np.full(nodes.shape[0], np.prod(h)), "grid-cells", softmin, shape, hw)

    def with_nodes(self, grid: GridMeasure) -> "QuadratureGrid":
        """Cell centers of ``grid`` with this rule's softmin and cell geometry."""
        return QuadratureGrid(grid.centers(), np.full(grid.size, grid.cell_volume), "grid-cells",
                              self.softmin, grid.shape, self.half_width)

    def sqdist(self, z, y) -> np.ndarray:
        """Squared distance from nodes to targets (to target cells when ``half_width`` is set)."""
        if self.half_width is None:
            return _sqdist(z, y)
        gap = np.maximum(np.abs(z[:, None, :] - y[None, :, :]) - self.half_width, 0.0)
        return np.sum(gap ** 2, axis=2)

    @classmethod
    def monte_carlo(cls, lower, upper, n: int = 100_000, seed: int = 0, softmin: float = 0.0) -> "QuadratureGrid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        rng = np.random.Generator(np.random.Philox(seed))
        nodes = lower + (upper - lower) * rng.random((n, lower.size))
        return cls(nodes, np.full(n, np.prod(upper - lower) / n), "monte-carlo", softmin)

    def with_softmin(self, tau: float) -> "QuadratureGrid":
        return QuadratureGrid(self.nodes, self.weights, self.kind, tau, self.shape, self.half_width)

    def to_grid_measure(self, masses) -> GridMeasure:
        """Wrap node masses as a GridMeasure (tensor or cell kinds only)."""
        if self.shape is None:
            raise ValueError("node set is not a tensor grid")
        d = self.nodes.shape[1]
        idx0 = 0
        spacing = np.empty(d)
        stride = 1
        for k in range(d - 1, -1, -1):
            spacing[k] = self.nodes[stride, k] - self.nodes[0, k] if self.shape[k] > 1 else 1.0
            stride *= self.shape[k]
        origin = self.nodes[idx0] - 0.5 * spacing
        w = np.clip(np.asarray(masses, dtype=float), 0.0, None)
        return GridMeasure(origin, spacing, self.shape, w / w.sum())


def default_quadrature(support: Measure, beta: float, extra_points=None, n_per_axis: Optional[int] = None,
                       softmin: float = 0.0, seed: int = 0) -> QuadratureGrid:
    """Quadrature used when none is supplied.

    d = 1 discrete support: exact piecewise integration. Grid support:
    its own cells. d = 2: tensor trapezoid on the hull of the support and
    ``extra_points`` padded by ``6 + 3/sqrt(beta)``. d > 2: Monte Carlo.
    """
    if isinstance(support, GridMeasure):
        return QuadratureGrid.from_cells(support, softmin)
    if support.dim == 1:
        return QuadratureGrid.exact()
    pts = support.atoms
    if extra_points is not None:
        pts = np.vstack([pts, _as_points(extra_points, support.dim)])
    pad = 6.0 + 3.0 / np.sqrt(beta)
    lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    if support.dim == 2:
        return QuadratureGrid.tensor(lo, hi, n_per_axis or 101, softmin)
    return QuadratureGrid.monte_carlo(lo, hi, 100_000, seed, softmin)


def moreau_transform(f: Potential, beta: float, queries):
    """``min_j (beta/2)|x - y_j|^2 - f_j`` and its argmin (lowest index on ties)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = _as_points(queries, f.dim)
    y = f.atoms
    cost = 0.5 * beta * _sqdist(x, y) - f.values[None, :]
    idx = np.argmin(cost, axis=1)
    return cost[np.arange(x.shape[0]), idx], idx


def _sqdist(x, y):
    if x.shape[1] == 1:
        return (x[:, 0][:, None] - y[:, 0][None, :]) ** 2
    return np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=2)


def _log_gauss(r2, variance, d):
    return -0.5 * r2 / variance - 0.5 * d * (LOG_2PI + np.log(variance))


def gaussian_log_conv(h, variance: float, queries, quad: QuadratureGrid) -> np.ndarray:
    """``log sum_k q_k exp(h(z_k)) gamma_variance(query - z_k)``.

    ``h`` is a callable on the (K, d) node array or a length-K array of node
    values; ``-inf`` entries are allowed.
    """
    if variance <= 0:
        raise ValueError("variance must be positive")
    if quad.is_exact:
        raise ValueError("gaussian_log_conv needs a node-based quadrature")
    z = quad.nodes
    hv = np.asarray(h(z) if callable(h) else h, dtype=float).reshape(-1)
    x = _as_points(queries, z.shape[1])
    terms = np.log(quad.weights)[None, :] + hv[None, :] + _log_gauss(_sqdist(x, z), variance, z.shape[1])
    if np.any(np.all(terms == -np.inf, axis=1)):
        raise EmptyMassError("integrand has no positive mass at some query")
    return logsumexp(terms, axis=1)


# ---------------------------------------------------------------- engines


@dataclass
class TiltStats:
    """Moments of the tilted law ``exp(-m(z)) gamma_s(a - z) / Z_s(a)``."""

    log_z: np.ndarray
    mean: np.ndarray
    cov: Optional[np.ndarray] = None
    cell_mass: Optional[np.ndarray] = None


def _log_ndtr_diff(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for ``lo < hi``, stable in both tails."""
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la, lb = log_ndtr(a), log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def _log_phi(x):
    return np.where(np.isfinite(x), -0.5 * x**2 - 0.5 * LOG_2PI, -np.inf)


class _Exact1D:
    """Closed-form integrals over the Laguerre pieces of a 1-D Moreau transform."""

    def __init__(self, atoms, f, beta, variance):
        y = np.asarray(atoms, dtype=float).reshape(-1)
        f = np.asarray(f, dtype=float).reshape(-1)
        self.m = y.size
        self.beta, self.s = float(beta), float(variance)
        order = np.argsort(y, kind="stable")
        ys, fs = y[order], f[order]
        c = 0.5 * beta * ys**2 - fs
        # lower envelope of z -> -beta*y_j*z + c_j; slopes fall as y_j grows
        stack, bps = [], []
        for j in range(ys.size):
            while stack:
                t = stack[-1]
                x_tj = (c[j] - c[t]) / (beta * (ys[j] - ys[t]))
                if bps and x_tj <= bps[-1]:
                    stack.pop()
                    bps.pop()
                    continue
                break
            if stack:
                bps.append((c[j] - c[stack[-1]]) / (beta * (ys[j] - ys[stack[-1]])))
            stack.append(j)
        self.piece_atom = order[np.asarray(stack)]
        self.piece_y = ys[np.asarray(stack)]
        self.piece_f = fs[np.asarray(stack)]
        self.breaks = np.asarray(bps, dtype=float)
        self.edges = np.concatenate([[-np.inf], self.breaks, [np.inf]])

    @property
    def active(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[self.piece_atom] = True
        return mask

    def _pieces(self, a):
        beta, s = self.beta, self.s
        a = a[:, None]
        prec = beta + 1.0 / s
        sd = 1.0 / np.sqrt(prec)
        ctr = (beta * self.piece_y[None, :] + a / s) / prec
        with np.errstate(invalid="ignore"):
            lo = (self.edges[None, :-1] - ctr) / sd
            hi = (self.edges[None, 1:] - ctr) / sd
        lo = np.where(np.isnan(lo), -np.inf, lo)
        hi = np.where(np.isnan(hi), np.inf, hi)
        ldiff = _log_ndtr_diff(lo, hi)
        log_i = (self.piece_f[None, :] - beta * (a - self.piece_y[None, :]) ** 2 / (2 * (1 + beta * s))
                 - 0.5 * np.log1p(beta * s) + ldiff)
        return log_i, ctr, sd, lo, hi, ldiff

    def stats(self, a, cov=False, mass=False) -> TiltStats:
        a = np.asarray(a, dtype=float).reshape(-1)
        log_i, ctr, sd, lo, hi, ldiff = self._pieces(a)
        log_z = logsumexp(log_i, axis=1)
        if np.any(~np.isfinite(log_z)):
            raise EmptyMassError("tilted integral vanished")
        p = np.exp(log_i - log_z[:, None])
        with np.errstate(invalid="ignore", over="ignore"):
            lam_lo = np.exp(_log_phi(lo) - ldiff)
            lam_hi = np.exp(_log_phi(hi) - ldiff)
        lam_lo = np.nan_to_num(lam_lo, nan=0.0, posinf=0.0)
        lam_hi = np.nan_to_num(lam_hi, nan=0.0, posinf=0.0)
        shift = lam_lo - lam_hi
        tmean = ctr + sd * shift
        mean = np.sum(p * tmean, axis=1)
        out = TiltStats(log_z, mean[:, None])
        if cov:
            with np.errstate(invalid="ignore"):
                lo_t = np.where(np.isfinite(lo), lo * lam_lo, 0.0)
                hi_t = np.where(np.isfinite(hi), hi * lam_hi, 0.0)
            tvar = sd**2 * np.clip(1.0 + lo_t - hi_t - shift**2, 1e-300, None)
            var = np.sum(p * (tvar + (tmean - mean[:, None]) ** 2), axis=1)
            out.cov = var[:, None, None]
        if mass:
            w = np.zeros((a.size, self.m))
            w[:, self.piece_atom] = p
            out.cell_mass = w
        return out

    def boundary_density(self, a, log_z):
        """Normalized tilted density at each Laguerre breakpoint, shape (n, K-1)."""
        if self.breaks.size == 0:
            return np.zeros((a.size, 0))
        b = self.breaks[None, :]
        yl, fl = self.piece_y[:-1][None, :], self.piece_f[:-1][None, :]
        lh = fl - 0.5 * self.beta * (b - yl) ** 2 + _log_gauss((a[:, None] - b) ** 2, self.s, 1) - log_z[:, None]
        return np.exp(lh)

    def mass_jacobian(self, a, weights) -> np.ndarray:
        """``sum_i weights_i * d w_i / d f`` (symmetric PSD, m x m)."""
        a = np.asarray(a, dtype=float).reshape(-1)
        st = self.stats(a, mass=True)
        w = st.cell_mass
        jac = np.diag(weights @ w) - (w * weights[:, None]).T @ w
        if self.breaks.size:
            hb = weights @ self.boundary_density(a, st.log_z)
            dy = self.piece_y[1:] - self.piece_y[:-1]
            coef = hb / (self.beta * dy)
            jl, jr = self.piece_atom[:-1], self.piece_atom[1:]
            np.add.at(jac, (jl, jl), coef)
            np.add.at(jac, (jr, jr), coef)
            np.add.at(jac, (jl, jr), -coef)
            np.add.at(jac, (jr, jl), -coef)
        return jac


class _Quadrature:
    """Node-based integrals; soft or hard minimum in the Moreau transform."""

    def __init__(self, atoms, f, beta, variance, quad: QuadratureGrid):
        y = _as_points(atoms, quad.nodes.shape[1])
        self.m = y.shape[0]
        self.beta, self.s, self.quad = float(beta), float(variance), quad
        z = quad.nodes
        self.z = z
        cost = 0.5 * beta * quad.sqdist(z, y) - np.asarray(f, dtype=float)[None, :]
        tau = quad.softmin
        if tau > 0:
            lse = logsumexp(-cost / tau, axis=1)
            self.m_nodes = -tau * lse
            self.assign = np.exp(-cost / tau - lse[:, None])
        else:
            idx = np.argmin(cost, axis=1)
            self.m_nodes = cost[np.arange(z.shape[0]), idx]
            self.assign = np.zeros_like(cost)
            self.assign[np.arange(z.shape[0]), idx] = 1.0
        self.tau = tau
        self.base = np.log(quad.weights) - self.m_nodes

    @property
    def active(self) -> np.ndarray:
        return self.assign.max(axis=0) > 0

    def _probs(self, a):
        a = _as_points(a, self.z.shape[1])
        lt = self.base[None, :] + _log_gauss(_sqdist(a, self.z), self.s, self.z.shape[1])
        log_z = logsumexp(lt, axis=1)
        if np.any(~np.isfinite(log_z)):
            raise EmptyMassError("tilted integral vanished on the quadrature nodes")
        return log_z, np.exp(lt - log_z[:, None])

    def stats(self, a, cov=False, mass=False) -> TiltStats:
        log_z, p = self._probs(a)
        mean = p @ self.z
        out = TiltStats(log_z, mean)
        if cov:
            zc = self.z[None, :, :] - mean[:, None, :]
            c = np.einsum("nk,nki,nkj->nij", p, zc, zc)
            out.cov = 0.5 * (c + np.transpose(c, (0, 2, 1)))
        if mass:
            out.cell_mass = p @ self.assign
        return out

    def mass_jacobian(self, a, weights) -> np.ndarray:
        _, p = self._probs(a)
        w = p @ self.assign
        rho = weights @ p
        sa = self.assign * rho[:, None]
        jac = sa.T @ self.assign - (w * weights[:, None]).T @ w
        if self.tau > 0:
            jac += (np.diag(sa.sum(axis=0)) - sa.T @ self.assign) / self.tau
        return 0.5 * (jac + jac.T)

    def node_masses(self, a, weights) -> np.ndarray:
        _, p = self._probs(a)
        return weights @ p


def make_engine(f: Potential, beta: float, variance: float = 1.0, quad: Optional[QuadratureGrid] = None):
    if beta <= 0:
        raise ValueError("beta must be positive")
    if variance <= 0:
        raise ValueError("variance must be positive")
    if quad is None:
        quad = default_quadrature(f.support, beta)
    if quad.is_exact:
        if f.dim != 1:
            raise ValueError("exact integration is available in d = 1 only")
        return _Exact1D(f.atoms[:, 0], f.values, beta, variance)
    return _Quadrature(f.atoms, f.values, beta, variance, quad)


def t_beta(f: Potential, beta: float, queries, quad: Optional[QuadratureGrid] = None, variance: float = 1.0):
    """``T_beta[f] = -log(exp(-m) * gamma)`` at the queries."""
    x = _as_points(queries, f.dim)
    if quad is None and f.dim > 1 and not isinstance(f.support, GridMeasure):
        quad = default_quadrature(f.support, beta, x)
    return -make_engine(f, beta, variance, quad).stats(x).log_z


def t_beta_grad(f: Potential, beta: float, queries, quad: Optional[QuadratureGrid] = None):
    """``grad T_beta[f](a) = a - E[Z]`` under the tilted law at ``a``."""
    x = _as_points(queries, f.dim)
    if quad is None and f.dim > 1 and not isinstance(f.support, GridMeasure):
        quad = default_quadrature(f.support, beta, x)
    st = make_engine(f, beta, 1.0, quad).stats(x)
    return x - st.mean


def semiconcave_envelope(f: Potential, beta: float) -> Potential:
    """Double Moreau transform ``g_j = min_x {(beta/2)|x - y_j|^2 - m(x)}``.

    ``g_j = f_j`` whenever the Laguerre cell of atom j is nonempty; otherwise
    ``g_j`` is the smallest value that makes the cell nonempty. In d = 1 this
    is the convex minorant of ``c_j = (beta/2) y_j^2 - f_j``; in d >= 2 each
    entry is an exact small LP in (x, t).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    y, fv = f.atoms, f.values
    m, d = y.shape
    if m == 1:
        return f.with_values(fv)
    if d == 1:
        c = 0.5 * beta * y[:, 0] ** 2 - fv
        order = np.argsort(y[:, 0], kind="stable")
        hull = _convex_minorant(y[order, 0], c[order])
        g = fv.copy()
        lowered = hull < c[order] - 1e-12 * (1.0 + np.abs(c[order]))
        g[order[lowered]] = (0.5 * beta * y[order, 0] ** 2 - hull)[lowered]
        return f.with_values(g)
    sq = np.sum(y**2, axis=1)
    g = np.array([_touch_value(j, y, fv, sq, beta, d) for j in range(m)])
    return f.with_values(g)


def _lower_hull_vertices(xs, cs):
    """Indices of the strict vertices of the lower convex hull (xs ascending)."""
    hull = []
    for j in range(xs.size):
        while len(hull) >= 2:
            i, k = hull[-2], hull[-1]
            # drop k if it lies on or above the chord i -> j
            if (cs[k] - cs[i]) * (xs[j] - xs[i]) >= (cs[j] - cs[i]) * (xs[k] - xs[i]):
                hull.pop()
            else:
                break
        hull.append(j)
    return np.asarray(hull)


def _convex_minorant(xs, cs):
    v = _lower_hull_vertices(xs, cs)
    return np.interp(xs, xs[v], cs[v])


def open_cells_1d(fv, y, beta, rel: float = 1e-9):
    """Raise ``f`` just enough that every 1-D Laguerre cell has positive width.

    Atoms off the lower hull of ``c_j = (beta/2) y_j^2 - f_j`` are moved onto
    it and then slightly below, by a concave bump that vanishes at the
    adjacent hull vertices. Atoms already on the envelope are untouched.
    """
    fv = np.asarray(fv, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    order = np.argsort(y, kind="stable")
    xs = y[order]
    cs = 0.5 * beta * xs**2 - fv[order]
    v = _lower_hull_vertices(xs, cs)
    if v.size == xs.size:
        return fv
    slopes = np.diff(cs[v]) / np.diff(xs[v])
    gaps = np.diff(slopes)
    gap_min = gaps.min() if gaps.size else np.inf
    eps = min(rel * (1.0 + np.abs(cs).max()), 0.1 * gap_min * np.diff(xs).min())
    new = np.interp(xs, xs[v], cs[v])
    for a, b in zip(v[:-1], v[1:]):
        if b - a < 2:
            continue
        inner = np.arange(a + 1, b)
        width = xs[b] - xs[a]
        bump = (xs[inner] - xs[a]) * (xs[b] - xs[inner]) / (0.25 * width**2)
        new[inner] -= eps * bump
    out = fv.copy()
    out[order] = np.maximum(fv[order], 0.5 * beta * xs**2 - new)
    return out


def _touch_value(j, y, fv, sq, beta, d):
    # min t  s.t.  beta (y_l - y_j).x + (beta/2)(|y_j|^2 - |y_l|^2) + f_l <= t  for all l
    others = np.arange(y.shape[0]) != j
    a_ub = np.hstack([beta * (y[others] - y[j]), -np.ones((others.sum(), 1))])
    b_ub = -(0.5 * beta * (sq[j] - sq[others]) + fv[others])
    res = linprog(np.r_[np.zeros(d), 1.0], A_ub=a_ub, b_ub=b_ub,
                  bounds=[(None, None)] * (d + 1), method="highs")
    if res.status == 3:  # unbounded: the cell of j is unbounded, so nonempty
        return fv[j]
    if res.status != 0:
        raise RuntimeError(f"envelope LP failed: {res.message}")
    v = res.fun
    return fv[j] if v <= fv[j] + 1e-9 * (1.0 + abs(fv[j])) else v


# ------------------------------------------------------------ proximal map


def prox_solve(engine, beta: float, x, y0=None, tol: float = 1e-10, max_iter: int = 500):
    """Minimize ``g(y) = (beta/2)|x - y|^2 + log Z_s(y)`` for each row of ``x``.

    Damped Newton with Armijo backtracking; the Hessian is
    ``beta I + Cov/s^2 - I/s``, bounded below by ``beta^2 s/(1 + beta s)``.

    Returns
    -------
    y : ndarray (n, d)
        Minimizers.
    value : ndarray (n,)
        ``g`` at the minimizers, i.e. the envelope ``M(x)``.
    """
    x = np.array(_as_points(x), dtype=float)
    n, d = x.shape
    s = engine.s
    y = x.copy() if y0 is None else np.array(_as_points(y0, d), dtype=float)
    eye = np.eye(d)

    def evaluate(xx, yy):
        st = engine.stats(yy, cov=True)
        val = 0.5 * beta * np.sum((xx - yy) ** 2, axis=1) + st.log_z
        grad = beta * (yy - xx) + (st.mean - yy) / s
        hess = beta * eye + st.cov / s**2 - eye / s
        return val, grad, hess

    val, grad, hess = evaluate(x, y)
    gnorm = np.linalg.norm(grad, axis=1)
    polished = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        todo = ~polished
        if not np.any(todo):
            break
        # one extra Newton step past the tolerance for accuracy margin
        polished |= gnorm <= tol
        idx = np.flatnonzero(todo)
        step = -np.linalg.solve(hess[idx], grad[idx][:, :, None])[:, :, 0]
        slope = np.sum(grad[idx] * step, axis=1)
        t = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            k = np.flatnonzero(pending)
            if k.size == 0:
                break
            ii = idx[k]
            yt = y[ii] + t[k, None] * step[k]
            vt, gt, ht = evaluate(x[ii], yt)
            slack = 1e-13 * (1.0 + np.abs(val[ii]))
            ok = (vt <= val[ii] + 1e-4 * t[k] * slope[k]) | (
                (vt <= val[ii] + slack) & (np.linalg.norm(gt, axis=1) < gnorm[ii]))
            acc = k[ok]
            ia = idx[acc]
            y[ia], val[ia], grad[ia], hess[ia] = yt[ok], vt[ok], gt[ok], ht[ok]
            gnorm[ia] = np.linalg.norm(grad[ia], axis=1)
            pending[acc] = False
            t[k[~ok]] *= 0.5
        stuck = idx[pending]
        polished[stuck[gnorm[stuck] <= tol]] = True
        if np.any(gnorm[stuck] > tol):
            bad = stuck[gnorm[stuck] > tol]
            raise ProximalFailure(f"line search failed at {bad.size} queries, residual {gnorm[bad].max():.3e}")
    if np.any(gnorm > tol):
        raise ProximalFailure(f"prox residual {gnorm.max():.3e} above {tol:.1e} after {max_iter} iterations")
    return y, val


@dataclass
class SmoothPotential:
    """``u = q_1 - M/beta`` built from ``f``; convex with (1+beta)/beta-Lipschitz gradient."""

    base_potential: Potential
    beta: float
    quad: Optional[QuadratureGrid] = None
    variance: float = 1.0
    tol: float = 1e-10
    engine: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.quad is None:
            self.quad = default_quadrature(self.base_potential.support, self.beta)
        self.engine = make_engine(self.base_potential, self.beta, self.variance, self.quad)

    @property
    def dim(self) -> int:
        return self.base_potential.dim

    def prox(self, x, y0=None):
        """Minimizer ``y*(x)`` and envelope value ``M(x) = inf_y (beta/2)|x-y|^2 - T(y)``."""
        return prox_solve(self.engine, self.beta, _as_points(x, self.dim), y0, self.tol)

    def envelope(self, x, y0=None) -> np.ndarray:
        return self.prox(x, y0)[1]

    def evaluate(self, x, y0=None):
        """Return ``(u(x), grad u(x))``."""
        x = _as_points(x, self.dim)
        y, val = self.prox(x, y0)
        return 0.5 * np.sum(x**2, axis=1) - val / self.beta, y

    __call__ = evaluate

    def gradient(self, x, y0=None) -> np.ndarray:
        return self.prox(x, y0)[0]


def smooth_potential(f: Potential, beta: float, quad: Optional[QuadratureGrid] = None) -> SmoothPotential:
    return SmoothPotential(f, beta, quad)


def laguerre_map(f: Potential, beta: float) -> Callable:
    """``z -> y_{j*(z)}``, the gradient of ``v* = q_1 - m/beta``."""
    def grad_v_star(z):
        _, idx = moreau_transform(f, beta, z)
        return f.atoms[idx]
    return grad_v_star


Quadrature = Union[QuadratureGrid, None]
