"""Oracles against closed forms, and the oracles' own refinement behaviour."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbbridge import DiscreteMeasure, Potential, QuadratureGrid, gaussian_grid, t_beta
from sbbridge.oracle import (brute_force_brenier_strassen, brute_force_infconv, finite_diff_check,
                             gaussian_closed_forms, two_stage_transform)
from sbbridge.transforms import q_beta

HALF_LOG2 = 0.5 * np.log(2.0)


class TestClosedForms:
    def test_w2_translation(self):
        assert gaussian_closed_forms("w2_1d", m1=0, v1=1, m2=1, v2=1) == pytest.approx(1.0)

    def test_kl_self(self):
        assert gaussian_closed_forms("kl", m=0, v=1, y=0) == pytest.approx(0.0)

    def test_sb_single_atom(self):
        assert gaussian_closed_forms("sb_single_atom", x=0, m=1, beta=1) == pytest.approx(0.5 + HALF_LOG2)

    def test_sb_single_atom_optimizes_variance(self):
        # minimize over the variance of a Gaussian kappa with the mean pinned
        beta = 3.0
        v = np.linspace(1e-3, 2, 200001)
        obj = 0.5 * (1.0 + v - 1 - np.log(v)) + 0.5 * beta * v
        assert obj.min() == pytest.approx(gaussian_closed_forms("sb_single_atom", x=0, m=1, beta=beta), abs=1e-8)
        assert v[obj.argmin()] == pytest.approx(1 / (1 + beta), abs=1e-5)

    def test_t_beta_dirac_at_origin(self):
        assert gaussian_closed_forms("t_beta_dirac", y=0, beta=1) == pytest.approx(0.34657359, abs=1e-6)

    def test_psi_vanishes_at_terminal_time(self):
        assert gaussian_closed_forms("psi_dirac", x=0, beta=2, t=1 - 1e-9) == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.parametrize("kind,params", [("w2_1d", dict(m1=0, v1=-1, m2=0, v2=1)),
                                             ("kl", dict(m=0, v=0, y=0)),
                                             ("sb_single_atom", dict(x=0, m=1, beta=0))])
    def test_nonpositive_parameters_rejected(self, kind, params):
        with pytest.raises(ValueError):
            gaussian_closed_forms(kind, **params)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gaussian_closed_forms("nope")


class TestInfconvOracle:
    def test_dirac_target(self):
        r = brute_force_infconv(0.0, DiscreteMeasure.dirac([1.0]), 1.0, n_cells=201)
        assert abs(r.value - (0.5 + HALF_LOG2)) <= 5e-3
        assert r.value >= 0.5 + HALF_LOG2 - 1e-9

    def test_gaussian_target(self):
        r = brute_force_infconv(0.3, gaussian_grid(0.3, 1.0, 241), 2.0, n_cells=201)
        assert 0.0 <= r.value <= 5e-3

    def test_refinement_does_not_increase(self):
        eta = DiscreteMeasure.from_points([-1.0, 0.5, 1.5], [0.3, 0.3, 0.4])
        coarse = brute_force_infconv(0.2, eta, 1.5, n_cells=101).value
        fine = brute_force_infconv(0.2, eta, 1.5, n_cells=201).value
        assert fine <= coarse + 1e-9

    def test_rejects_large_grids(self):
        with pytest.raises(ValueError):
            brute_force_infconv(0.0, DiscreteMeasure.dirac([1.0]), 1.0, n_cells=401)


class TestTwoStage:
    def test_dirac_matches_closed_form(self):
        f = Potential(DiscreteMeasure.dirac([0.0]), [0.0])
        quad = QuadratureGrid.tensor([-8.0], [8.0], 321)
        y = np.array([-1.0, 0.0, 0.7])
        want = [gaussian_closed_forms("t_beta_dirac", y=v, beta=1.0) for v in y]
        np.testing.assert_allclose(two_stage_transform(f, 1.0, y, quad), want, atol=1e-6)

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=6, unique=True),
           st.floats(0.3, 5.0), st.integers(0, 2**31 - 1))
    def test_agrees_with_t_beta_on_same_nodes(self, pts, beta, seed):
        rng = np.random.default_rng(seed)
        f = Potential(DiscreteMeasure.from_points(pts), rng.normal(size=len(pts)))
        quad = QuadratureGrid.tensor([-9.0], [9.0], 241)
        y = rng.uniform(-2, 2, 4)
        np.testing.assert_allclose(two_stage_transform(f, beta, y, quad), t_beta(f, beta, y, quad=quad),
                                   atol=1e-8)


class TestBrenierStrassenOracle:
    def test_dirac_pair(self):
        r = brute_force_brenier_strassen(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]))
        assert r.value == pytest.approx(0.5)

    def test_convex_order_is_zero(self):
        mu = DiscreteMeasure.from_points([-0.5, 0.5])
        nu = DiscreteMeasure.from_points([-1.0, 0.0, 1.0])
        assert brute_force_brenier_strassen(mu, nu).value == pytest.approx(0.0, abs=1e-8)

    def test_too_many_free_entries(self):
        m = DiscreteMeasure.from_points([0.0, 1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            brute_force_brenier_strassen(m, m)


class TestFiniteDiff:
    def test_quadratic_exact(self):
        beta = 2.5
        pts = np.random.default_rng(0).normal(size=(10, 2))
        err = finite_diff_check(lambda p: q_beta(p[None], beta)[0], lambda p: beta * p, pts)
        assert err <= 1e-10

    def test_detects_wrong_gradient(self):
        err = finite_diff_check(lambda p: float(p @ p), lambda p: p, np.ones((1, 2)))
        assert err == pytest.approx(1.0, abs=1e-6)

    def test_jacobian(self):
        fn = lambda p: np.array([p[0] * p[1], p[0] ** 2])
        jac = lambda p: np.array([[p[1], p[0]], [2 * p[0], 0.0]])
        assert finite_diff_check(fn, jac, np.array([[0.3, -1.2]])) <= 1e-8
