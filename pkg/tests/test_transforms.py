import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbbridge.errors import EmptyMassError
from sbbridge.measures import DiscreteMeasure
from sbbridge.oracle import finite_diff_check, gaussian_closed_forms
from sbbridge.transforms import (Potential, QuadratureGrid, SmoothPotential, gaussian_log_conv, laguerre_map,
                                 moreau_transform, q_beta, semiconcave_envelope, smooth_potential, t_beta,
                                 t_beta_grad)

ZERO_AT_ORIGIN = Potential(DiscreteMeasure.dirac([0.0]), [0.0])


def random_potential(rng, n, spread=1.5, d=1):
    pts = rng.uniform(-spread, spread, size=(n, d))
    return Potential(DiscreteMeasure(pts, rng.dirichlet(np.ones(n))), rng.normal(scale=0.5, size=n))


def semiconcave_potential(rng, n, beta):
    return semiconcave_envelope(random_potential(rng, n), beta)


class TestMoreau:
    def test_three_atoms(self):
        f = Potential(DiscreteMeasure.from_points([-1.0, 0.0, 1.0]), [0.0, 0.0, 0.0])
        val, idx = moreau_transform(f, 2.0, [0.25])
        assert val[0] == pytest.approx(0.0625)
        assert f.atoms[idx[0], 0] == 0.0

    def test_query_at_atom(self):
        f = Potential(DiscreteMeasure.from_points([-1.0, 0.5, 2.0]), [0.0, 0.0, 0.0])
        val, idx = moreau_transform(f, 1.0, f.atoms)
        np.testing.assert_allclose(val, 0.0)
        np.testing.assert_array_equal(idx, [0, 1, 2])

    def test_constant_shift(self):
        rng = np.random.default_rng(0)
        f = random_potential(rng, 5)
        x = rng.normal(size=12)
        np.testing.assert_allclose(moreau_transform(f.shift(0.7), 1.3, x)[0], moreau_transform(f, 1.3, x)[0] - 0.7)

    def test_ties_take_lowest_index(self):
        f = Potential(DiscreteMeasure.from_points([-1.0, 1.0]), [0.0, 0.0])
        assert moreau_transform(f, 1.0, [0.0])[1][0] == 0

    def test_semiconcave_in_query(self):
        rng = np.random.default_rng(1)
        f = random_potential(rng, 6)
        beta = 1.7
        x = np.linspace(-4, 4, 801)
        g = q_beta(x[:, None], beta) - moreau_transform(f, beta, x)[0]
        assert np.min(np.diff(g, 2)) >= -1e-6

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            moreau_transform(ZERO_AT_ORIGIN, 0.0, [0.0])


class TestGaussianLogConv:
    quad = QuadratureGrid.tensor([-12.0], [12.0], 961)

    def test_constant_is_zero(self):
        out = gaussian_log_conv(np.zeros(961), 1.0, [-1.0, 0.0, 2.0], self.quad)
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_linear_mgf(self):
        out = gaussian_log_conv(lambda z: z[:, 0], 1.0, [0.0], self.quad)
        assert out[0] == pytest.approx(0.5, abs=1e-6)

    def test_quadratic(self):
        beta, y = 2.0, np.array([-0.5, 0.0, 1.0])
        out = gaussian_log_conv(lambda z: -0.5 * beta * z[:, 0] ** 2, 1.0, y, self.quad)
        want = -0.5 * np.log1p(beta) - beta * y**2 / (2 * (1 + beta))
        np.testing.assert_allclose(out, want, atol=1e-6)

    def test_second_order_refinement(self):
        # a kink at 0 keeps the trapezoid rule out of its spectral regime
        h = lambda z: -np.abs(z[:, 0])
        ref = np.log(2 * np.exp(0.5) * 0.5 * (1 - __import__("scipy").special.erf(1 / np.sqrt(2))))
        errs = []
        for n in (121, 241, 481):
            q = QuadratureGrid.tensor([-12.0], [12.0], n)
            errs.append(abs(gaussian_log_conv(h, 1.0, [0.0], q)[0] - ref))
        assert errs[1] * 4 <= errs[0] * 1.05 and errs[2] * 4 <= errs[1] * 1.05

    def test_empty_mass(self):
        with pytest.raises(EmptyMassError):
            gaussian_log_conv(np.full(961, -np.inf), 1.0, [0.0], self.quad)

    def test_bad_variance(self):
        with pytest.raises(ValueError):
            gaussian_log_conv(np.zeros(961), 0.0, [0.0], self.quad)


class TestTBeta:
    @pytest.mark.parametrize("beta", [0.3, 1.0, 4.0])
    def test_dirac_closed_form(self, beta):
        y = np.linspace(-2, 2, 9)
        want = [gaussian_closed_forms("t_beta_dirac", y=v, beta=beta) for v in y]
        np.testing.assert_allclose(t_beta(ZERO_AT_ORIGIN, beta, y), want, atol=1e-10)

    def test_value_at_origin(self):
        assert t_beta(ZERO_AT_ORIGIN, 1.0, [0.0])[0] == pytest.approx(0.34657359, abs=1e-6)

    def test_quadrature_backend_agrees_with_exact(self):
        rng = np.random.default_rng(2)
        f = random_potential(rng, 4)
        y = rng.normal(size=6)
        quad = QuadratureGrid.tensor([-12.0], [12.0], 4001)
        np.testing.assert_allclose(t_beta(f, 1.2, y, quad=quad), t_beta(f, 1.2, y), atol=1e-5)

    def test_shift(self):
        # m shifts by -c, so T = -log int exp(-m) gamma shifts by -c
        rng = np.random.default_rng(3)
        f = random_potential(rng, 5)
        y = rng.normal(size=8)
        np.testing.assert_allclose(t_beta(f.shift(0.4), 2.0, y), t_beta(f, 2.0, y) - 0.4, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.2, 6.0))
    def test_gradient_fd(self, seed, beta):
        f = random_potential(np.random.default_rng(seed), 4)
        pts = np.linspace(-2.5, 2.5, 7)[:, None]
        err = finite_diff_check(lambda p: t_beta(f, beta, p[None])[0], lambda p: t_beta_grad(f, beta, p[None])[0],
                                pts)
        assert err <= 1e-5

    @pytest.mark.parametrize("beta", [0.5, 1.0, 4.0])
    def test_semiconcavity(self, beta):
        rng = np.random.default_rng(int(beta * 10))
        for _ in range(5):
            f = semiconcave_potential(rng, 5, beta)
            y = np.linspace(-5, 5, 1001)
            g = q_beta(y[:, None], beta / (1 + beta)) - t_beta(f, beta, y)
            assert np.min(np.diff(g, 2)) >= -1e-6

    def test_2d_quadrature_close_to_product(self):
        # f = 0 at the origin in d = 2: T = log(1+beta) + beta|y|^2 / (2(1+beta))
        f = Potential(DiscreteMeasure.dirac([0.0, 0.0]), [0.0])
        quad = QuadratureGrid.tensor([-8.0, -8.0], [8.0, 8.0], 161)
        y = np.array([[0.3, -0.2], [1.0, 0.5]])
        want = np.log(2.0) + np.sum(y**2, axis=1) / 4
        np.testing.assert_allclose(t_beta(f, 1.0, y, quad=quad), want, atol=1e-4)


class TestSemiconcaveEnvelope:
    def test_already_semiconcave_unchanged(self):
        f = Potential(DiscreteMeasure.from_points([-1.0, 0.0, 1.0]), [0.2, 0.0, 0.1])
        g = semiconcave_envelope(f, 2.0)
        np.testing.assert_allclose(g.values, f.values, atol=1e-6)

    def test_lattice_double_transform(self):
        rng = np.random.default_rng(4)
        f = random_potential(rng, 6)
        beta = 1.0
        x = np.linspace(-12, 12, 240001)
        m = moreau_transform(f, beta, x)[0]
        brute = np.array([np.min(0.5 * beta * (x - y) ** 2 - m) for y in f.atoms[:, 0]])
        g = semiconcave_envelope(f, beta).values
        # a lattice minimum bounds the infimum from above; minimizers sit on kinks, so the gap is O(h * slope)
        slope = beta * 30.0
        assert np.all(g <= brute + 1e-12)
        assert np.all(brute - g <= slope * (x[1] - x[0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.1, 10.0))
    def test_dominates(self, seed, beta):
        f = random_potential(np.random.default_rng(seed), 6, spread=2.0)
        assert np.all(semiconcave_envelope(f, beta).values >= f.values - 1e-12)

    def test_2d_dominates_and_idempotent(self):
        f = random_potential(np.random.default_rng(5), 6, d=2)
        g = semiconcave_envelope(f, 1.5)
        assert np.all(g.values >= f.values - 1e-12)
        np.testing.assert_allclose(semiconcave_envelope(g, 1.5).values, g.values, atol=1e-9)


class TestSmoothPotential:
    @pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
    def test_dirac_gradient(self, beta):
        # y*(x) = argmin (beta/2)(x - y)^2 - T(y), T(y) = beta y^2 / (2(1+beta)) + const
        u = smooth_potential(ZERO_AT_ORIGIN, beta)
        x = np.linspace(-1, 1, 5)
        np.testing.assert_allclose(u.gradient(x)[:, 0], (1 + beta) / beta * x, atol=1e-9)

    def test_fd_gradient(self):
        rng = np.random.default_rng(6)
        f = random_potential(rng, 5)
        u = smooth_potential(f, 1.3)
        pts = rng.uniform(-2, 2, size=(12, 1))
        assert finite_diff_check(lambda p: u.evaluate(p)[0][0], lambda p: u.gradient(p)[0], pts) <= 1e-5

    @pytest.mark.parametrize("beta", [0.5, 1.0, 4.0])
    def test_convex_and_smooth(self, beta):
        rng = np.random.default_rng(7 + int(beta))
        for _ in range(3):
            u = smooth_potential(random_potential(rng, 5), beta)
            x = np.sort(rng.uniform(-3, 3, 40))
            h = 1e-3
            d2 = (u.evaluate(x + h)[0] - 2 * u.evaluate(x)[0] + u.evaluate(x - h)[0]) / h**2
            assert d2.min() >= -1e-6 - 1e-5  # FD noise on top of the stated bound
            assert d2.max() <= (1 + beta) / beta + 1e-5

    def test_lipschitz_gradient(self):
        rng = np.random.default_rng(8)
        beta = 0.7
        u = smooth_potential(random_potential(rng, 6), beta)
        a, b = rng.uniform(-3, 3, (2, 50, 1))
        ga, gb = u.gradient(a), u.gradient(b)
        ratio = np.linalg.norm(ga - gb, axis=1) / np.linalg.norm(a - b, axis=1)
        assert ratio.max() <= (1 + beta) / beta + 1e-9

    def test_shift_keeps_gradient(self):
        rng = np.random.default_rng(9)
        f = random_potential(rng, 4)
        x = rng.normal(size=7)
        np.testing.assert_allclose(smooth_potential(f.shift(2.0), 1.0).gradient(x),
                                   smooth_potential(f, 1.0).gradient(x), atol=1e-10)

    def test_2d_fd(self):
        rng = np.random.default_rng(10)
        f = random_potential(rng, 4, d=2)
        u = smooth_potential(f, 1.0)
        pts = rng.uniform(-1, 1, size=(4, 2))
        assert finite_diff_check(lambda p: u.evaluate(p)[0][0], lambda p: u.gradient(p)[0], pts) <= 1e-5


class TestLaguerre:
    def test_map_selects_argmin_atom(self):
        f = Potential(DiscreteMeasure.from_points([-1.0, 1.0]), [0.0, 0.0])
        np.testing.assert_allclose(laguerre_map(f, 1.0)(np.array([[-0.3], [0.4]])), [[-1.0], [1.0]])
