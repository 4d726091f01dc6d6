"""Finite representations of probability measures on R^d.

Two carriers are used throughout:

* :class:`DiscreteMeasure` -- weighted atoms (inputs mu, nu and the
  intermediate measure alpha).
* :class:`GridMeasure` -- cell masses on a regular grid, standing in for an
  absolutely continuous law (rho, Gaussians).

Convention: ``wasserstein2_sq`` is ``inf E|X - Y|^2`` with no factor 1/2.
Every place that needs ``beta/2 * W_2^2`` writes the factor explicitly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import InfiniteEntropyError

WEIGHT_TOL = 1e-12
GRID_WEIGHT_TOL = 1e-10
MERGE_TOL = 1e-12
LP_MAX_ENTRIES = 50_000


def _as_points(x, dim=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim in (None, 1) else x.reshape(1, -1)
    return x


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure ``sum_i w_i delta_{x_i}``.

    Parameters
    ----------
    atoms : array_like, shape (n, d) or (n,)
        Support points. A 1-D array is read as n points in R^1.
    weights : array_like, shape (n,)
        Nonnegative weights summing to one.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _as_points(self.atoms)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.shape[0] == 0:
            raise ValueError("empty support")
        if atoms.shape[0] != weights.shape[0]:
            raise ValueError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        if atoms.shape[0] > 1:
            order = np.lexsort(atoms.T[::-1])
            s = atoms[order]
            if np.any(np.all(s[1:] == s[:-1], axis=1)):
                raise ValueError("atoms must be pairwise distinct")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, atoms, weights=None, normalize=False) -> "DiscreteMeasure":
        atoms = _as_points(atoms)
        if weights is None:
            weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
        weights = np.asarray(weights, dtype=float)
        if normalize:
            weights = weights / weights.sum()
        return cls(atoms, weights)

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        return cls(np.atleast_1d(np.asarray(point, dtype=float)).reshape(1, -1), [1.0])

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def to_discrete(self) -> "DiscreteMeasure":
        return self

    def second_moment(self) -> float:
        return float(self.weights @ np.sum(self.atoms**2, axis=1))


@dataclass(frozen=True)
class GridMeasure:
    """Cell masses on a regular tensor grid.

    ``origin`` is the lower corner of the first cell; the center of cell
    ``idx`` is ``origin + (idx + 0.5) * spacing``. ``weights`` holds the
    probability mass of each cell, flattened in C order.
    """

    origin: np.ndarray
    spacing: np.ndarray
    shape: tuple
    weights: np.ndarray
    cell_volume: float = field(init=False)

    def __post_init__(self):
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        spacing = np.atleast_1d(np.asarray(self.spacing, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (origin.shape == spacing.shape == (len(shape),)):
            raise ValueError("origin, spacing and shape must have the same length")
        if np.any(spacing <= 0):
            raise ValueError("spacing must be positive")
        if weights.size != int(np.prod(shape)):
            raise ValueError(f"expected {int(np.prod(shape))} weights, got {weights.size}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > GRID_WEIGHT_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        for arr in (origin, spacing, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "cell_volume", float(np.prod(spacing)))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.weights.size

    def axes(self) -> list:
        return [self.origin[k] + (np.arange(n) + 0.5) * self.spacing[k] for k, n in enumerate(self.shape)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    @property
    def atoms(self) -> np.ndarray:
        return self.centers()

    def density(self) -> np.ndarray:
        return self.weights / self.cell_volume

    def to_discrete(self, drop_zero: bool = False) -> DiscreteMeasure:
        pts, w = self.centers(), self.weights
        if drop_zero:
            keep = w > 0
            pts, w = pts[keep], w[keep] / w[keep].sum()
        return DiscreteMeasure(pts, w)

    @classmethod
    def from_density(cls, density_fn: Callable, lower, upper, shape) -> "GridMeasure":
        """Midpoint discretisation of ``density_fn`` on the box [lower, upper]."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if len(shape) == 1 and lower.size > 1:
            shape = shape * lower.size
        spacing = (upper - lower) / np.asarray(shape)
        proto = cls(lower, spacing, shape, np.full(int(np.prod(shape)), 1.0 / np.prod(shape)))
        vals = np.asarray(density_fn(proto.centers()), dtype=float).reshape(-1)
        w = np.clip(vals, 0.0, None) * proto.cell_volume
        return cls(lower, spacing, shape, w / w.sum())

    def to_json(self) -> dict:
        return {
            "origin": self.origin.tolist(),
            "spacing": self.spacing.tolist(),
            "shape": list(self.shape),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GridMeasure":
        w = np.asarray(obj["weights"], dtype=float)
        return cls(obj["origin"], obj["spacing"], obj["shape"], w / w.sum())


Measure = Union[DiscreteMeasure, GridMeasure]


def gaussian_logpdf(z, mean, variance) -> np.ndarray:
    """Log density of N(mean, variance * I) at the rows of ``z``."""
    z = _as_points(z)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = z.shape[1]
    r2 = np.sum((z - mean) ** 2, axis=1)
    return -0.5 * r2 / variance - 0.5 * d * np.log(2 * np.pi * variance)


def gaussian_grid(mean, variance: float = 1.0, n_cells=241, radius: float = 6.0) -> GridMeasure:
    """Grid discretisation of N(mean, variance I) truncated at mean +- radius*sigma."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.sqrt(variance)
    return GridMeasure.from_density(
        lambda z: np.exp(gaussian_logpdf(z, mean, variance)),
        mean - radius * sd,
        mean + radius * sd,
        n_cells,
    )


@dataclass(frozen=True)
class Coupling:
    """Transport plan with prescribed marginals; ``mass[i, j]`` moves atom i to atom j."""

    row_marginal: DiscreteMeasure
    col_marginal: DiscreteMeasure
    mass: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        if mass.shape != (self.row_marginal.size, self.col_marginal.size):
            raise ValueError("mass shape does not match the marginals")
        if np.any(mass < -1e-15):
            raise ValueError("coupling entries must be nonnegative")
        mass = np.clip(mass, 0.0, None)
        if np.max(np.abs(mass.sum(axis=1) - self.row_marginal.weights)) > self.tol:
            raise ValueError("row sums differ from the row marginal")
        if np.max(np.abs(mass.sum(axis=0) - self.col_marginal.weights)) > self.tol:
            raise ValueError("column sums differ from the column marginal")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    def conditional_barycenters(self) -> np.ndarray:
        """Rows of ``pi_x``-means, ``bar pi_{x_i}``."""
        rows = self.mass.sum(axis=1, keepdims=True)
        return (self.mass @ self.col_marginal.atoms) / np.where(rows > 0, rows, 1.0)


def _check_pair(a: Measure, b: Measure):
    a, b = a.to_discrete(), b.to_discrete()
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return a, b


def _quantile_coupling(wa_sorted, wb_sorted):
    """North-west-corner rule on sorted weights; returns (i, j, mass) triplets."""
    ca = np.concatenate([[0.0], np.cumsum(wa_sorted)])
    cb = np.concatenate([[0.0], np.cumsum(wb_sorted)])
    ca[-1] = cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    lo, hi = cuts[:-1], cuts[1:]
    keep = hi - lo > 0
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)
    i = np.clip(np.searchsorted(ca, mid, side="right") - 1, 0, len(wa_sorted) - 1)
    j = np.clip(np.searchsorted(cb, mid, side="right") - 1, 0, len(wb_sorted) - 1)
    return i, j, hi - lo


def wasserstein2_sq(a: Measure, b: Measure):
    """Squared quadratic Wasserstein distance ``min_pi sum pi_ij |x_i - y_j|^2``.

    Exact: sorted quantile coupling in d = 1, a linear program (HiGHS) in
    d >= 2 for at most ``LP_MAX_ENTRIES`` plan entries.

    Returns
    -------
    value : float
    plan : Coupling
    """
    a, b = _check_pair(a, b)
    if a.dim == 1:
        oa, ob = np.argsort(a.atoms[:, 0], kind="stable"), np.argsort(b.atoms[:, 0], kind="stable")
        i, j, m = _quantile_coupling(a.weights[oa], b.weights[ob])
        plan = np.zeros((a.size, b.size))
        np.add.at(plan, (oa[i], ob[j]), m)
    else:
        n, k = a.size, b.size
        if n * k > LP_MAX_ENTRIES:
            raise ValueError(f"LP with {n * k} entries exceeds the desk-scale limit {LP_MAX_ENTRIES}")
        cost = np.sum((a.atoms[:, None, :] - b.atoms[None, :, :]) ** 2, axis=2)
        plan = transport_lp(a.weights, b.weights, cost)
    plan = _rebalance(plan, a.weights, b.weights)
    cost = np.sum((a.atoms[:, None, :] - b.atoms[None, :, :]) ** 2, axis=2)
    return float(np.sum(plan * cost)), Coupling(a, b, plan)


def transport_lp(wa, wb, cost) -> np.ndarray:
    """Exact discrete OT plan for ``cost`` by linear programming."""
    n, k = cost.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, k)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(k))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([wa, wb])
    res = linprog(cost.reshape(-1), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return np.clip(res.x.reshape(n, k), 0.0, None)


def _rebalance(plan, wa, wb):
    # removes LP round-off so the marginals hold to ~1e-15
    for _ in range(3):
        r = plan.sum(axis=1)
        plan = plan * np.where(r > 0, wa / np.where(r > 0, r, 1), 0)[:, None]
        c = plan.sum(axis=0)
        plan = plan * np.where(c > 0, wb / np.where(c > 0, c, 1), 0)[None, :]
    return plan


def barycenter(a: Measure) -> np.ndarray:
    """Mean ``sum_i w_i x_i``."""
    if isinstance(a, GridMeasure):
        return a.weights @ a.centers()
    return a.weights @ a.atoms


def relative_entropy_gaussian(rho: Measure, mean, variance: float = 1.0) -> float:
    """``H(rho | N(mean, variance I))`` for a grid measure, reading cell mass / volume as density."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    if not isinstance(rho, GridMeasure):
        raise InfiniteEntropyError("an atomic measure has infinite entropy against a Gaussian")
    w = rho.weights
    pos = w > 0
    logref = gaussian_logpdf(rho.centers()[pos], mean, variance)
    return float(np.sum(w[pos] * (np.log(w[pos] / rho.cell_volume) - logref)))


def merge_atoms(points: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL) -> DiscreteMeasure:
    """Sum the weights of points that coincide within ``tol`` (sup-norm)."""
    points = _as_points(points)
    order = np.lexsort(points.T[::-1])
    pts, w = points[order], np.asarray(weights, dtype=float)[order]
    out_p, out_w = [pts[0]], [w[0]]
    for p, wi in zip(pts[1:], w[1:]):
        hit = None
        # scan back over merged points sharing the first coordinate within tol
        for k in range(len(out_p) - 1, -1, -1):
            if p[0] - out_p[k][0] > tol:
                break
            if np.max(np.abs(out_p[k] - p)) <= tol:
                hit = k
                break
        if hit is None:
            out_p.append(p)
            out_w.append(wi)
        else:
            out_w[hit] += wi
    out_w = np.asarray(out_w)
    return DiscreteMeasure(np.asarray(out_p), out_w / out_w.sum())


def pushforward(a: Measure, transport: Callable) -> DiscreteMeasure:
    """Image measure ``T_# a``; ``transport`` maps an (n, d) array of points row-wise."""
    a = a.to_discrete()
    images = _as_points(transport(a.atoms), a.dim)
    if images.shape[0] != a.size:
        raise ValueError("map must return one image per atom")
    return merge_atoms(images, a.weights)


def read_atoms_csv(path, normalize: bool = True) -> DiscreteMeasure:
    """Read ``x1..xd,weight`` rows (header required)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if not header or header[-1] != "weight" or any(h != f"x{k + 1}" for k, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: header must be x1,...,xd,weight; got {','.join(header)}")
        if len(header) < 2:
            raise ValueError(f"{path}: need at least one coordinate column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(k for k, c in enumerate(row) if not _is_float(c))
                raise ValueError(f"{path}:{lineno}: column {header[bad]!r} is not a number: {row[bad]!r}") from None
    if not rows:
        raise ValueError(f"{path}: no atoms")
    arr = np.asarray(rows)
    if np.any(arr[:, -1] < 0):
        raise ValueError(f"{path}: negative weight")
    return DiscreteMeasure.from_points(arr[:, :-1], arr[:, -1], normalize=normalize)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_atoms_csv(measure: Measure, path) -> None:
    m = measure.to_discrete()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(m.dim)] + ["weight"])
        for p, wt in zip(m.atoms, m.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])
