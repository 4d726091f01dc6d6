"""Simulate bridge paths and compare the dynamic cost with the static value."""

import numpy as np

from sbbridge.dynamics import dynamic_cost_estimate, simulate_sb
from sbbridge.measures import DiscreteMeasure
from sbbridge.solvers import sb_solve


def main(n_paths=10_000, n_steps=1000, seed=0):
    sol = sb_solve(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]), beta=1.0)
    ens = simulate_sb(sol, n_paths=n_paths, n_steps=n_steps, seed=seed)
    mean, se = dynamic_cost_estimate(ens)
    print(f"static value   {sol.value:.5f}")
    print(f"dynamic cost   {mean:.5f} +- {se:.5f} ({n_paths} paths, {n_steps} steps)")
    print(f"X_1 == 1 for all paths: {bool(np.all(ens.x_paths[:, -1, 0] == 1.0))}")
    for t in (0.25, 0.5, 0.75):
        k = int(np.argmin(np.abs(ens.times - t)))  # stored times are thinned
        x = ens.x_paths[:, k, 0]
        print(f"t={t:.2f}: mean X {x.mean():.4f}, sd X {x.std():.4f}")


if __name__ == "__main__":
    main()
