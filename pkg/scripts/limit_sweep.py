"""Sweep beta and watch the value move between its two limits."""

import numpy as np

from sbbridge.limits import brenier_strassen_solve, limit_sweep, value_sweep
from sbbridge.measures import DiscreteMeasure, gaussian_grid
from sbbridge.solvers import SolverOptions


def main():
    betas = [0.03, 0.1, 0.3, 1.0, 3.0, 10.0]
    rep = limit_sweep(0.0, DiscreteMeasure.from_points([-1.0, 0.5], [1 / 3, 2 / 3]), betas)
    print("cost from x=0 to a two-atom target")
    print(f"{'beta':>8} {'value':>10} {'(C-1/2)/beta':>14}")
    for b, v in zip(rep.beta_grid, rep.values):
        print(f"{b:8.3g} {v:10.6f} {(v - 0.5) / b:14.6f}")
    print("targets:", {k: round(v, 6) for k, v in rep.limit_targets.items()})
    print("monotone:", rep.monotone_flags)

    # small beta: approaches the Brenier-Strassen value
    mu = DiscreteMeasure.from_points(np.linspace(-0.4, 0.4, 5))
    nu = DiscreteMeasure.from_points(np.linspace(-1.5, 1.5, 5))
    rep = value_sweep(mu, nu, [1.0, 0.3, 0.1, 0.03], SolverOptions(max_outer_iters=5000))
    print(f"\nBrenier-Strassen value {brenier_strassen_solve(mu, nu)[0]:.6f}")
    print("deviations:", np.round(rep.deviations["brenier_strassen"], 5))

    # large beta on cells: approaches the entropic OT value
    mu, nu = gaussian_grid(0.0, 0.25, 41), gaussian_grid(0.3, 0.05, 41)
    rep = value_sweep(mu, nu, [1.0, 10.0, 100.0, 1000.0], SolverOptions(backend="cells", max_outer_iters=3000))
    print(f"\nentropic OT value {rep.limit_targets['schrodinger']:.6f}")
    print("deviations:", np.round(rep.deviations["schrodinger"], 5))


if __name__ == "__main__":
    main()
