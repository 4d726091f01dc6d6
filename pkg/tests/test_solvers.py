import numpy as np
import pytest

from sbbridge.errors import NotConvergedError
from sbbridge.measures import DiscreteMeasure, gaussian_grid
from sbbridge.oracle import brute_force_infconv, finite_diff_check, gaussian_closed_forms
from sbbridge.solvers import (SolverOptions, complementary_slackness, dual_objective, fixed_point_residual,
                              inner_dual_solve, inner_objective, recover_coupling, sb_solve, sinkhorn_eot)
from sbbridge.transforms import Potential

D0 = DiscreteMeasure.dirac([0.0])
D1 = DiscreteMeasure.dirac([1.0])


def random_pair(rng, n=3, k=4):
    mu = DiscreteMeasure.from_points(rng.uniform(-1, 1, n), rng.dirichlet(np.ones(n)))
    nu = DiscreteMeasure.from_points(rng.uniform(-2, 2, k), rng.dirichlet(np.ones(k)))
    return mu, nu


class TestSinkhorn:
    def test_reference_gaussian(self):
        assert abs(sinkhorn_eot(D0, gaussian_grid(0.0, 1.0, 241)).value) <= 1e-3

    def test_shifted_gaussian(self):
        res = sinkhorn_eot(D0, gaussian_grid(1.0, 1.0, 241))
        assert res.value == pytest.approx(gaussian_closed_forms("kl", m=1, v=1, y=0), abs=1e-3)

    def test_marginals(self):
        rng = np.random.default_rng(0)
        alpha = DiscreteMeasure.from_points(rng.normal(size=4), rng.dirichlet(np.ones(4)))
        rho = gaussian_grid(0.3, 1.5, 61)
        res = sinkhorn_eot(alpha, rho, tol=1e-11)
        assert res.converged
        np.testing.assert_allclose(res.plan.mass.sum(axis=1), alpha.weights, atol=1e-10)
        np.testing.assert_allclose(res.plan.mass.sum(axis=0), rho.weights, atol=1e-12)

    def test_atomic_rho_rejected(self):
        with pytest.raises(TypeError):
            sinkhorn_eot(D0, D1)


class TestInner:
    def test_single_atom_target(self):
        r = inner_dual_solve(DiscreteMeasure.from_points([-0.3, 0.4]), D1, 2.0, Potential(D1, [0.0]))
        assert r.converged and r.grad_norm == 0.0
        assert r.potential.normalized().values[0] == 0.0

    def test_gaussian_reduction(self):
        r = inner_dual_solve(D0, D1, 1.0, Potential(D1, [0.0]))
        assert r.value == pytest.approx(0.25 + 0.5 * np.log(2.0), abs=1e-4)

    def test_gradient_fd(self):
        rng = np.random.default_rng(1)
        alpha, nu = random_pair(rng, 3, 5)
        for _ in range(5):
            f0 = rng.normal(size=nu.size)
            fn = lambda v: inner_objective(Potential(nu, v), alpha, 1.3)[0]
            gr = lambda v: inner_objective(Potential(nu, v), alpha, 1.3)[1]
            assert finite_diff_check(fn, gr, f0[None], step=1e-5) <= 1e-5

    def test_reaches_tolerance(self):
        rng = np.random.default_rng(2)
        alpha, nu = random_pair(rng, 4, 6)
        r = inner_dual_solve(alpha, nu, 0.8, Potential(nu, np.zeros(nu.size)))
        assert r.converged and r.grad_norm <= SolverOptions().tol_inner


class TestDualObjective:
    def test_dirac_dirac(self):
        f = Potential(D0, [0.0])
        assert dual_objective(f, D0, D0, 1.0) == pytest.approx(0.5 * np.log(2.0), abs=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        mu, nu = random_pair(rng)
        f = Potential(nu, rng.normal(size=nu.size))
        assert dual_objective(f.shift(1.7), mu, nu, 0.9) == pytest.approx(dual_objective(f, mu, nu, 0.9), abs=1e-10)

    def test_weak_duality(self):
        rng = np.random.default_rng(4)
        mu, nu = random_pair(rng)
        v = sb_solve(mu, nu, 1.5).value
        for _ in range(10):
            f = Potential(nu, rng.normal(scale=2.0, size=nu.size))
            assert dual_objective(f, mu, nu, 1.5) <= v + 1e-6


class TestSbSolve:
    def test_dirac_closed_form(self):
        sol = sb_solve(D0, D1, 1.0)
        assert sol.converged
        assert sol.value == pytest.approx(gaussian_closed_forms("sb_single_atom", x=0, m=1, beta=1), abs=1e-4)
        np.testing.assert_allclose(sol.alpha_star.atoms, [[-1.0]], atol=1e-8)

    def test_agrees_with_infconv_oracle(self):
        nu = DiscreteMeasure.from_points([-1.0, 1.0])
        sol = sb_solve(D0, nu, 2.0)
        ref = brute_force_infconv(0.0, nu, 2.0, n_cells=201).value
        assert sol.value <= ref + 1e-9
        assert ref - sol.value <= 5e-3

    def test_brownian_target(self):
        assert abs(sb_solve(D0, gaussian_grid(0.0, 1.0, 241), 1.0).value) <= 5e-3

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_trace(self, seed):
        mu, nu = random_pair(np.random.default_rng(100 + seed), 5, 6)
        sol = sb_solve(mu, nu, 0.7)
        assert sol.converged
        assert np.all(np.diff(sol.dual_trace) >= -1e-9)
        assert len(sol.dual_trace) == sol.iterations + 1

    def test_strict_ascent_while_alpha_moves(self):
        mu, nu = random_pair(np.random.default_rng(5), 4, 5)
        sol = sb_solve(mu, nu, 1.0)
        for shift, gain in zip(sol.alpha_shift_trace, np.diff(sol.dual_trace)):
            if shift > 1e-6:
                assert gain > -1e-12

    def test_iteration_cap(self):
        mu, nu = random_pair(np.random.default_rng(6), 4, 5)
        sol = sb_solve(mu, nu, 1.0, SolverOptions(max_outer_iters=1))
        assert not sol.converged and len(sol.dual_trace) == 2

    def test_uniqueness_up_to_constants(self):
        mu, nu = random_pair(np.random.default_rng(7), 4, 5)
        a = sb_solve(mu, nu, 1.2)
        b = sb_solve(mu, nu, 1.2, SolverOptions(f_init="zero"))
        np.testing.assert_allclose(a.f_star.values, b.f_star.values, atol=1e-4)

    def test_fixed_point(self):
        mu, nu = random_pair(np.random.default_rng(8))
        assert fixed_point_residual(sb_solve(mu, nu, 2.0)) <= 1e-8

    def test_two_dimensional(self):
        mu = DiscreteMeasure.dirac([0.0, 0.0])
        nu = DiscreteMeasure.dirac([1.0, -1.0])
        sol = sb_solve(mu, nu, 1.0)
        want = gaussian_closed_forms("sb_single_atom", x=np.zeros(2), m=[1.0, -1.0], beta=1.0, d=2)
        assert sol.value == pytest.approx(want, abs=1e-3)

    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolverOptions(tol_outer=0.0)
        with pytest.raises(ValueError):
            SolverOptions(backend="gpu")
        with pytest.raises(ValueError):
            sb_solve(D0, D1, -1.0)


class TestCoupling:
    def test_single_entry(self):
        c = recover_coupling(sb_solve(D0, D1, 1.0))
        assert c.mass.shape == (1, 1) and c.mass[0, 0] == pytest.approx(1.0)

    def test_marginals(self):
        mu, nu = random_pair(np.random.default_rng(9), 4, 5)
        c = recover_coupling(sb_solve(mu, nu, 0.9))
        assert np.all(c.mass >= 0)
        np.testing.assert_allclose(c.mass.sum(axis=1), mu.weights, atol=1e-14)
        assert np.abs(c.mass.sum(axis=0) - nu.weights).sum() <= 1e-3

    def test_rejects_unconverged(self):
        mu, nu = random_pair(np.random.default_rng(6), 4, 5)
        with pytest.raises(NotConvergedError):
            recover_coupling(sb_solve(mu, nu, 1.0, SolverOptions(max_outer_iters=1)))


class TestSlackness:
    @pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
    def test_exact_backend(self, beta):
        mu, nu = random_pair(np.random.default_rng(int(10 * beta)))
        r_eot, r_w = complementary_slackness(sb_solve(mu, nu, beta))
        assert abs(r_eot) <= 1e-4 and abs(r_w) <= 1e-4

    def test_cells_backend_bias_scales_with_softmin(self):
        mu = DiscreteMeasure.from_points([-0.5, 0.3], [0.4, 0.6])
        nu = gaussian_grid(0.2, 1.3, 41)
        res = [complementary_slackness(sb_solve(mu, nu, 2.0, SolverOptions(backend="cells", softmin=t)))[1]
               for t in (1e-3, 1e-4)]
        assert abs(res[1]) <= 1e-4
        assert abs(res[1]) <= 0.2 * abs(res[0])
