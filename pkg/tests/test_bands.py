import numpy as np
import pytest

from wassreg import (
    Dataset,
    DegenerateError,
    DomainError,
    InputError,
    TimeGrid,
    density_band,
    deriv_kernel_matrix,
    fit_model,
    sandwich_kernel,
    winf_band,
)
from wassreg import bands as bands_mod
from wassreg.bands import SandwichKernel
from wassreg.simulate import SimConfig, generate_dataset


def sim(n=200, transport="linear", seed=0, m=201):
    cfg = SimConfig(n=n, p=1, alpha=(2.0,), beta=(1.0,), transport=transport, grid_size=m)
    return cfg, generate_dataset(cfg, np.random.default_rng(seed)).data


def kernel_from(grid, residuals, X):
    n = X.shape[0]
    design = np.column_stack([np.ones(n), X])
    lam_inv = np.linalg.inv(design.T @ design / n)
    return SandwichKernel(grid, design, lam_inv, residuals)


class TestSandwichKernel:
    def test_block_definition_and_symmetry(self, rng):
        cfg, data = sim(n=50, m=51)
        fit = fit_model(data)
        K = sandwich_kernel(data, fit)
        L = fit.summary.lambda_inv
        r = data.Q - fit.fitted
        Xt = np.column_stack([np.ones(50), data.X])
        direct = L @ (Xt.T @ (Xt * (r[:, 4] * r[:, 9])[:, None]) / 50) @ L
        np.testing.assert_allclose(K.block(4, 9), direct)
        np.testing.assert_allclose(K.block(4, 9), K.block(9, 4).T)

    def test_quadratic_form_nonnegative_and_matches_blocks(self):
        cfg, data = sim(n=50, m=51)
        K = sandwich_kernel(data, fit_model(data))
        x = np.array([0.2])
        xt = np.array([1.0, 0.2])
        var = K.variance_at(x)
        assert np.all(var >= 0)
        assert var[10] == pytest.approx(xt @ K.block(10, 10) @ xt)

    def test_zero_residuals(self):
        g = TimeGrid.uniform(11)
        X = np.linspace(-1, 1, 8)[:, None]
        K = kernel_from(g, np.zeros((8, 11)), X)
        assert np.all(K.block(2, 5) == 0)


class TestDerivKernel:
    def test_constant_kernel_has_zero_derivatives(self):
        g = TimeGrid.uniform(301)
        X = np.linspace(-1, 1, 6)[:, None]
        r = np.repeat(np.arange(1.0, 7.0)[:, None], g.size, axis=1)
        D = deriv_kernel_matrix(kernel_from(g, r, X), 0.1)
        B = D.block(3, 40)
        np.testing.assert_allclose(B[:2, 2:], 0, atol=1e-9)
        np.testing.assert_allclose(B[2:, 2:], 0, atol=1e-9)

    def test_product_kernel_mixed_derivative(self):
        g = TimeGrid.uniform(301)
        X = np.linspace(-1, 1, 6)[:, None]
        n = 6
        # One residual curve t, scaled so that x~^T D x~ = s t at x with weight one.
        K = kernel_from(g, np.zeros((n, g.size)), X)
        h = K.weights_at([0.0])
        r = np.zeros((n, g.size))
        r[0] = g.points * np.sqrt(n) / h[0]
        K = kernel_from(g, r, X)
        D = deriv_kernel_matrix(K, 0.1)
        xt = np.array([1.0, 0.0])
        B = D.block(10, 100)
        r11 = np.kron(np.eye(2), xt) @ B @ np.kron(np.eye(2), xt).T
        s, t = D.points[10], D.points[100]
        assert r11[0, 0] == pytest.approx(s * t, rel=1e-10)
        assert r11[1, 1] == pytest.approx(1.0, abs=1e-6)
        assert r11[0, 1] == pytest.approx(s, abs=1e-6)

    def test_mixed_derivative_symmetry(self, rng):
        g = TimeGrid.uniform(401)
        t = g.points
        X = rng.normal(size=(12, 1))
        r = np.array([np.sin((k + 1) * t + rng.uniform()) for k in range(12)])
        D = deriv_kernel_matrix(kernel_from(g, r, X), 0.1)
        for s, u in [(3, 17), (50, 200), (0, 320)]:
            Bsu, Bus = D.block(s, u), D.block(u, s)
            p1 = 2
            np.testing.assert_allclose(Bsu[p1:, :p1], Bus[:p1, p1:].T, atol=1e-4)

    def test_delta_validation(self):
        g = TimeGrid.uniform(11)
        K = kernel_from(g, np.zeros((5, 11)), np.arange(5.0)[:, None])
        for d in (0.0, 0.5, -1):
            with pytest.raises(DomainError):
                deriv_kernel_matrix(K, d)


class TestWinfBand:
    def test_bracket_properties(self):
        cfg, data = sim()
        fit = fit_model(data)
        b = winf_band(data, fit, [0.1], R=2000, seed=1)
        assert np.all(b.lower <= b.upper)
        assert np.all(b.lower >= b.raw_lower - 1e-12)
        assert np.all(b.upper <= b.raw_upper + 1e-12)
        assert np.all(np.diff(b.lower) >= 0) and np.all(np.diff(b.upper) >= 0)
        assert np.all(b.raw_lower <= b.center) and np.all(b.center <= b.raw_upper)
        b.lower_curve(data.grid)

    def test_feasible_envelope_is_kept(self):
        cfg, data = sim()
        fit = fit_model(data)
        b = winf_band(data, fit, [0.0], R=2000, seed=1)
        if np.all(np.diff(b.raw_lower) >= 0):
            np.testing.assert_array_equal(b.lower, b.raw_lower)

    def test_width_monotone_in_alpha(self):
        cfg, data = sim()
        fit = fit_model(data)
        wide = winf_band(data, fit, [0.2], alpha=0.01, R=2000, seed=3)
        narrow = winf_band(data, fit, [0.2], alpha=0.10, R=2000, seed=3)
        assert np.all(wide.raw_lower <= narrow.raw_lower + 1e-12)
        assert np.all(wide.raw_upper >= narrow.raw_upper - 1e-12)

    def test_half_width_scales_with_root_n(self):
        cfg = SimConfig(n=200, p=1, alpha=(2.0,), beta=(1.0,), grid_size=201)
        big = generate_dataset(SimConfig(n=800, p=1, alpha=(2.0,), beta=(1.0,),
                                         grid_size=201), np.random.default_rng(5)).data
        ratios = []
        for s in range(5):
            small = generate_dataset(cfg, np.random.default_rng(100 + s)).data
            wb = winf_band(big, fit_model(big), [0.0], R=2000, seed=1).half_width
            ws = winf_band(small, fit_model(small), [0.0], R=2000, seed=1).half_width
            ratios.append(np.median(ws) / np.median(wb))
        assert np.median(ratios) == pytest.approx(2.0, rel=0.1)

    def test_identical_responses_fail_without_fixed_support(self):
        g = TimeGrid.uniform(51)
        X = np.linspace(-0.5, 0.5, 20)[:, None]
        d = Dataset(X, np.tile(g.points, (20, 1)), g)
        with pytest.raises(DegenerateError):
            winf_band(d, fit_model(d), [0.0], R=500, seed=1)

    def test_identical_responses_fixed_support_zero_width(self):
        g = TimeGrid.uniform(51)
        X = np.linspace(-0.5, 0.5, 20)[:, None]
        d = Dataset(X, np.tile(g.points, (20, 1)), g, fixed_support=True)
        with pytest.warns(RuntimeWarning):
            b = winf_band(d, fit_model(d), [0.0], R=500, seed=1)
        np.testing.assert_allclose(b.lower, b.center)
        np.testing.assert_allclose(b.upper, b.center)
        assert b.contains(g.points)

    def test_fixed_support_trims_working_range(self):
        g = TimeGrid.uniform(101)
        r = np.random.default_rng(3)
        X = r.uniform(-0.5, 0.5, (60, 1))
        a = 1 + X[:, 0] + 0.2 * r.uniform(-1, 1, 60)
        d = Dataset(X, g.points[None, :] ** a[:, None], g, fixed_support=True)
        b = winf_band(d, fit_model(d), [0.0], R=1000, seed=1, delta=0.1)
        assert not b.working[:10].any() and not b.working[-10:].any()
        np.testing.assert_array_equal(b.raw_lower[:10], b.center[:10])

    def test_sampler_floor_does_not_change_decision(self, monkeypatch):
        cfg, data = sim(transport="nonlinear")
        fit = fit_model(data)
        truth = cfg.true_quantile([0.0])
        a = winf_band(data, fit, [0.0], R=2000, seed=1)
        monkeypatch.setattr(bands_mod, "SAMPLER_RTOL", 1e-14)
        b = winf_band(data, fit, [0.0], R=2000, seed=1)
        assert a.contains(truth) == b.contains(truth)
        assert a.critical_value == pytest.approx(b.critical_value, rel=1e-2)

    def test_deterministic(self):
        cfg, data = sim()
        fit = fit_model(data)
        a = winf_band(data, fit, [0.1], R=1000, seed=7)
        b = winf_band(data, fit, [0.1], R=1000, seed=7)
        assert a.critical_value == b.critical_value


class TestDensityBand:
    def test_symmetric_envelopes(self):
        cfg, data = sim()
        fit = fit_model(data)
        b = density_band(data, fit, [0.0], R=2000, seed=1)
        np.testing.assert_allclose(b.upper - b.center, b.center - b.lower)
        assert np.all(np.diff(b.abscissae) > 0)
        assert b.delta == 0.1

    def test_zero_residuals_zero_width(self):
        g = TimeGrid.uniform(101)
        X = np.linspace(-0.5, 0.5, 20)[:, None]
        Q = np.tile(g.points, (20, 1))
        d = Dataset(X, Q, g, np.ones_like(Q), np.zeros_like(Q))
        with pytest.warns(RuntimeWarning):
            b = density_band(d, fit_model(d), [0.0], R=500, seed=1)
        np.testing.assert_allclose(b.lower, b.center)
        np.testing.assert_allclose(b.center, 1.0)

    def test_needs_quantile_densities(self):
        g = TimeGrid.uniform(51)
        X = np.linspace(-0.5, 0.5, 20)[:, None]
        d = Dataset(X, np.tile(g.points, (20, 1)) * (1 + X), g)
        with pytest.raises(InputError):
            density_band(d, fit_model(d), [0.0], R=500, seed=1)

    def test_finite_difference_fallback_warns(self):
        cfg, data = sim()
        bare = Dataset(data.X, data.Q, data.grid, data.q)
        with pytest.warns(RuntimeWarning, match="numerically"):
            density_band(bare, fit_model(bare), [0.0], R=500, seed=1)

    def test_location_shift_error_is_first_order_exact(self):
        # Quantile error N = c gives density error -c f', matching the process.
        cfg, data = sim(n=300, m=401)
        fit = fit_model(data)
        dens = fit.density_at([0.0])
        q = dens.quantile_density.q_values
        dq = dens.quantile_density.dq_values
        c = 1e-4
        b1, b2 = dq / q ** 3, -1 / q ** 2
        u = dens.abscissae
        f = dens.density.values
        shifted = np.interp(u, u + c, f)
        inner = slice(60, -60)
        np.testing.assert_allclose((shifted - f)[inner], (b1 * c + b2 * 0)[inner],
                                   rtol=2e-2, atol=1e-7)
