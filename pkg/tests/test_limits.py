import numpy as np
import pytest

from sbbridge.errors import InfiniteEntropyError
from sbbridge.limits import (bass_residual, brenier_strassen_fw, brenier_strassen_solve, cost_sb, limit_sweep,
                             monotone_flags, value_sweep)
from sbbridge.measures import DiscreteMeasure, GridMeasure, gaussian_grid
from sbbridge.oracle import brute_force_brenier_strassen, brute_force_infconv, gaussian_closed_forms
from sbbridge.solvers import SolverOptions, sb_solve
from sbbridge.transforms import laguerre_map

D1 = DiscreteMeasure.dirac([1.0])


def sb_closed(beta):
    return gaussian_closed_forms("sb_single_atom", x=0.0, m=1.0, beta=beta)


class TestCostSb:
    @pytest.mark.parametrize("beta,tol", [(1.0, 1e-4), (10.0, 1e-3)])
    def test_dirac(self, beta, tol):
        assert cost_sb(0.0, D1, beta) == pytest.approx(sb_closed(beta), abs=tol)

    def test_brownian(self):
        assert abs(cost_sb(0.4, gaussian_grid(0.4, 1.0, 241), 3.0)) <= 5e-3

    def test_oracle_upper_bound(self):
        eta = DiscreteMeasure.from_points([-0.8, 0.2, 1.1], [0.2, 0.5, 0.3])
        c = cost_sb(0.1, eta, 1.5)
        ref = brute_force_infconv(0.1, eta, 1.5, n_cells=201).value
        assert c <= ref + 1e-9 and ref - c <= 5e-3


class TestLimitSweep:
    def test_dirac_values(self):
        rep = limit_sweep(0.0, D1, [0.1, 1.0, 10.0])
        np.testing.assert_allclose(rep.values, [sb_closed(b) for b in (0.1, 1.0, 10.0)], atol=1e-4)
        assert all(rep.monotone_flags.values())
        assert rep.limit_targets["brenier_strassen"] == pytest.approx(0.5)
        assert rep.limit_targets["bass_rescaled"] == pytest.approx(0.5, abs=1e-6)

    def test_rescaled_values(self):
        # (C - 1/2) / beta = log(1 + beta) / (2 beta)
        rep = limit_sweep(0.0, D1, [0.1, 1.0, 10.0])
        got = [(v - 0.5) / b for v, b in zip(rep.values, rep.beta_grid)]
        np.testing.assert_allclose(got, [np.log1p(b) / (2 * b) for b in (0.1, 1.0, 10.0)], atol=1e-4)

    def test_atomic_schrodinger_target(self):
        with pytest.raises(InfiniteEntropyError):
            limit_sweep(0.0, D1, [1.0], targets=["schrodinger"])

    def test_grid_includes_schrodinger(self):
        # lattice values are not monotone here (cell pinning); only the target and the endpoint are checked
        opts = SolverOptions(backend="cells", max_outer_iters=3000)
        rep = limit_sweep(0.0, gaussian_grid(0.5, 1.0, 41), [1.0, 10.0, 100.0], opts)
        assert rep.limit_targets["schrodinger"] == pytest.approx(gaussian_closed_forms("kl", m=0.5, v=1, y=0),
                                                                 abs=1e-3)
        devs = rep.deviations["schrodinger"]
        assert devs[-1] == min(devs) and devs[-1] <= 2e-3

    def test_csv_rows(self):
        rep = limit_sweep(0.0, D1, [0.5, 2.0])
        assert len(rep.csv_rows()) == 2 * len(rep.limit_targets)

    def test_random_pairs_monotone(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            n = int(rng.integers(2, 5))
            rho = DiscreteMeasure.from_points(rng.uniform(-2, 2, n), rng.dirichlet(np.ones(n)))
            rep = limit_sweep(rng.uniform(-1, 1), rho, [0.2, 1.0, 5.0])
            assert all(rep.monotone_flags.values())

    def test_monotone_flags_detects_violation(self):
        flags = monotone_flags([1.0, 2.0], [1.0, 0.5])
        assert not flags["nondecreasing"]


class TestBrenierStrassen:
    def test_diracs(self):
        v, c = brenier_strassen_solve(DiscreteMeasure.dirac([0.0]), D1)
        assert v == pytest.approx(0.5) and c.mass[0, 0] == pytest.approx(1.0)

    def test_convex_order(self):
        v, _ = brenier_strassen_solve(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.from_points([-1.0, 1.0]))
        assert v == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        mu = DiscreteMeasure.from_points(rng.normal(size=3), rng.dirichlet(np.ones(3)))
        nu = DiscreteMeasure.from_points(rng.normal(scale=1.5, size=3), rng.dirichlet(np.ones(3)))
        assert brenier_strassen_solve(mu, nu)[0] == pytest.approx(brute_force_brenier_strassen(mu, nu).value,
                                                                  abs=1e-4)

    def test_2d_lp_oracle_agreement(self):
        rng = np.random.default_rng(7)
        mu = DiscreteMeasure(rng.normal(size=(2, 2)), [0.5, 0.5])
        nu = DiscreteMeasure(rng.normal(size=(3, 2)), rng.dirichlet(np.ones(3)))
        res = brenier_strassen_fw(mu, nu)
        assert res.value == pytest.approx(brute_force_brenier_strassen(mu, nu).value, abs=1e-4)

    def test_small_beta_limit(self):
        mu = DiscreteMeasure.from_points([-0.4, 0.4])
        nu = DiscreteMeasure.from_points([-1.5, 0.0, 1.5])
        bs = brenier_strassen_solve(mu, nu)[0]
        devs = [abs(sb_solve(mu, nu, b, SolverOptions(max_outer_iters=5000)).value - bs) for b in (1.0, 0.1)]
        assert devs[1] < devs[0]


class TestBass:
    def _mixture_grid(self, n=801):
        mu = DiscreteMeasure.from_points([-0.5, 0.7], [0.4, 0.6])
        dens = lambda z: sum(w * np.exp(-0.5 * (z[:, 0] - a) ** 2) for a, w in zip(mu.atoms[:, 0], mu.weights))
        return mu, GridMeasure.from_density(dens, [-8.0], [8.0], (n,))

    def test_identity_system(self):
        mu, nu = self._mixture_grid()
        r1, r2 = bass_residual(lambda z: z, mu, nu)
        assert r1 <= 1e-3 and r2 <= 1e-3

    def test_translation_detected(self):
        mu, nu = self._mixture_grid()
        r1, _ = bass_residual(lambda z: z + 0.1, mu, nu, alpha=mu)
        assert r1 >= 0.05

    def test_trend_toward_bass(self):
        # asymmetric target: the symmetric two-atom target is Bass-exact at every beta
        mu = DiscreteMeasure.dirac([0.0])
        nu = DiscreteMeasure.from_points([-1.0, 0.5], [1 / 3, 2 / 3])
        res = []
        for b in (0.5, 0.2, 0.05):
            sol = sb_solve(mu, nu, b, SolverOptions(max_outer_iters=3000))
            res.append(bass_residual(laguerre_map(sol.f_star, b), mu, nu, alpha=sol.alpha_star))
        r1 = [r[0] for r in res]
        r2 = [r[1] for r in res]
        assert r1[0] > r1[1] > r1[2]
        assert r2[0] > r2[1] > r2[2]


class TestValueSweep:
    def test_targets_and_flags(self):
        mu = DiscreteMeasure.from_points([-0.4, 0.4])
        nu = DiscreteMeasure.from_points([-1.0, 0.2, 1.5])
        rep = value_sweep(mu, nu, [0.3, 1.0, 3.0])
        assert "brenier_strassen" in rep.limit_targets and "schrodinger" not in rep.limit_targets
        assert rep.monotone_flags["nondecreasing"]
