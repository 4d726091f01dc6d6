"""Self-verification suite behind ``sbbridge verify``.

Each check compares a main-path computation with an independent oracle and
reports the error against a fixed tolerance.
"""

from __future__ import annotations

import logging
import time
from typing import Callable

import numpy as np

from .dynamics import potential_at_time
from .limits import brenier_strassen_solve, cost_sb
from .measures import DiscreteMeasure, gaussian_grid, wasserstein2_sq
from .oracle import (brute_force_brenier_strassen, brute_force_infconv, finite_diff_check,
                     gaussian_closed_forms, two_stage_transform)
from .solvers import sb_solve, sinkhorn_eot
from .transforms import Potential, QuadratureGrid, smooth_potential, t_beta

log = logging.getLogger(__name__)


def _closed_form_dirac():
    sol = sb_solve(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]), 1.0)
    return abs(sol.value - gaussian_closed_forms("sb_single_atom", x=0.0, m=1.0, beta=1.0)), 1e-4


def _infconv_oracle():
    nu = DiscreteMeasure.from_points([[-1.0], [1.0]])
    main = cost_sb(0.0, nu, 2.0)
    ref = brute_force_infconv(0.0, nu, 2.0, n_cells=201).value
    # the oracle bounds from above up to its discretization error
    return abs(main - ref), 5e-3


def _t_beta_closed_form():
    f = Potential(DiscreteMeasure.dirac([0.5]), [0.0])
    y = np.linspace(-2, 2, 9)
    got = t_beta(f, 2.0, y)
    want = np.array([gaussian_closed_forms("t_beta_dirac", y=v, beta=2.0, m=0.5) for v in y])
    return float(np.max(np.abs(got - want))), 1e-10


def _transform_identity():
    f = Potential(DiscreteMeasure.from_points([-0.7, 0.1, 0.9]), [0.2, -0.1, 0.3])
    quad = QuadratureGrid.tensor([-7.0], [7.0], 281)
    y = np.linspace(-1.5, 1.5, 5)
    got = t_beta(f, 1.5, y, quad=quad)
    ref = two_stage_transform(f, 1.5, y, quad)
    return float(np.max(np.abs(got - ref))), 1e-8


def _fd_gradient_u():
    f = Potential(DiscreteMeasure.from_points([-1.0, 0.2, 1.3]), [0.1, 0.4, -0.2])
    u = smooth_potential(f, 1.0)
    pts = np.linspace(-2, 2, 11)[:, None]
    return finite_diff_check(lambda p: u.evaluate(p)[0], lambda p: u.gradient(p)[0], pts), 1e-5


def _w2_gaussian():
    a, b = gaussian_grid(0.0, 1.0, 481, 8.0), gaussian_grid(1.0, 1.0, 481, 8.0)
    got, _ = wasserstein2_sq(a, b)
    return abs(got - gaussian_closed_forms("w2_1d", m1=0.0, v1=1.0, m2=1.0, v2=1.0)), 1e-6


def _bs_brute_force():
    mu = DiscreteMeasure(np.array([[-1.0], [0.0], [1.2]]), np.array([0.3, 0.3, 0.4]))
    nu = DiscreteMeasure(np.array([[-2.0], [0.5], [2.0]]), np.array([0.25, 0.5, 0.25]))
    main, _ = brenier_strassen_solve(mu, nu)
    ref = brute_force_brenier_strassen(mu, nu).value
    return abs(main - ref), 1e-6


def _sinkhorn_gaussian():
    # EOT(delta_0, N(1, 1)) = KL(N(1,1) | N(0,1)) = 1/2
    rho = gaussian_grid(1.0, 1.0, 481, 8.0)
    res = sinkhorn_eot(DiscreteMeasure.dirac([0.0]), rho)
    return abs(res.value - gaussian_closed_forms("kl", m=1.0, v=1.0, y=0.0)), 1e-3


def _psi_closed_form():
    f = Potential(DiscreteMeasure.dirac([0.0]), [0.0])
    x = np.linspace(-1, 1, 7)
    err = 0.0
    for t in (0.0, 0.5, 0.9):
        want = np.array([gaussian_closed_forms("psi_dirac", x=v, beta=2.0, t=t) for v in x])
        err = max(err, float(np.max(np.abs(potential_at_time(f, 2.0, t, x) - want))))
    return err, 1e-8


CHECKS: dict[str, Callable] = {
    "closed_form_dirac_value": _closed_form_dirac,
    "infconv_oracle_two_atoms": _infconv_oracle,
    "t_beta_closed_form": _t_beta_closed_form,
    "transform_identity": _transform_identity,
    "finite_difference_grad_u": _fd_gradient_u,
    "w2_gaussian_translation": _w2_gaussian,
    "brenier_strassen_brute_force": _bs_brute_force,
    "sinkhorn_gaussian_kl": _sinkhorn_gaussian,
    "value_function_closed_form": _psi_closed_form,
}


def run_checks(names=None) -> dict:
    """Run the named checks (default: all) and collect pass/fail records."""
    out = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            err, tol = CHECKS[name]()
            rec = {"name": name, "error": float(err), "tol": float(tol), "passed": bool(err <= tol)}
        except Exception as exc:  # a crashing check is a failed check
            log.exception("check %s raised", name)
            rec = {"name": name, "error": float("inf"), "tol": 0.0, "passed": False,
                   "exception": f"{type(exc).__name__}: {exc}"}
        log.info("%s: %.3e in %.2fs", name, rec["error"], time.perf_counter() - t0)
        out.append(rec)
    return {"checks": out, "all_passed": all(c["passed"] for c in out)}


__all__ = ["CHECKS", "run_checks"]
