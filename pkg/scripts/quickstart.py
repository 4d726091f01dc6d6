"""Solve a small problem and print the value, potentials and coupling."""

import numpy as np

from sbbridge.measures import DiscreteMeasure
from sbbridge.oracle import gaussian_closed_forms
from sbbridge.solvers import complementary_slackness, sb_solve


def main():
    # single atoms: compare against the closed form
    sol = sb_solve(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]), beta=1.0)
    ref = gaussian_closed_forms("sb_single_atom", x=0.0, m=1.0, beta=1.0)
    print(f"delta_0 -> delta_1: value {sol.value:.6f}, closed form {ref:.6f}, {sol.iterations} iterations")

    mu = DiscreteMeasure.from_points([-0.5, 0.2, 0.9], [0.3, 0.4, 0.3])
    nu = DiscreteMeasure.from_points([-1.5, -0.2, 0.6, 1.8], [0.2, 0.3, 0.3, 0.2])
    sol = sb_solve(mu, nu, beta=2.0)
    print(f"\n3 -> 4 atoms at beta=2: value {sol.value:.6f}, converged {sol.converged}")
    print("potential f* (nu-mean zero):", np.round(sol.f_star.values, 6))
    print("coupling:\n", np.round(sol.coupling.mass, 4))
    r_eot, r_w = complementary_slackness(sol)
    print(f"slackness residuals: {r_eot:.2e}, {r_w:.2e}")


if __name__ == "__main__":
    main()
