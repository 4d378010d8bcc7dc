import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from wassreg import DegenerateError, DomainError, InputError, TimeGrid
from wassreg.experiments import (
    CoverageCell,
    PowerSetting,
    run_coverage_experiment,
    run_power_experiment,
)
from wassreg.simulate import (
    SimConfig,
    Transport,
    TransportSpec,
    base_density,
    base_pdf,
    base_quantile,
    default_bandwidth,
    empirical_quantile_from_sample,
    generate_dataset,
    sample_transport,
)


class TestBaseDensity:
    def test_endpoints_and_symmetry(self):
        dens, Q, qd = base_density()
        assert Q.values[0] == -2.5 and Q.values[-1] == 2.5
        assert Q(0.5) == 0.0
        t = np.linspace(0, 1, 1001)
        np.testing.assert_allclose(base_quantile(1 - t), -base_quantile(t), atol=1e-8)

    def test_normalization(self):
        val, _ = integrate.quad(base_pdf, -2.5, 2.5, epsabs=1e-12)
        assert val == pytest.approx(1.0, abs=1e-8)
        assert base_density()[0].integral() == pytest.approx(1.0, abs=1e-4)

    def test_peak_value(self):
        peak = stats.norm.pdf(0) / (stats.norm.cdf(2.5) - stats.norm.cdf(-2.5))
        assert base_pdf(0.0) == pytest.approx(peak, rel=1e-12)
        assert float(base_pdf(0.0)) == pytest.approx(0.40396, abs=1e-5)

    def test_matches_scipy_truncnorm(self):
        t = np.linspace(0.001, 0.999, 99)
        np.testing.assert_allclose(base_quantile(t), stats.truncnorm.ppf(t, -2.5, 2.5),
                                   atol=1e-10)

    def test_quantile_density_derivative(self):
        g = TimeGrid.uniform(2001)
        _, Q, qd = base_density(g)
        fd = np.gradient(qd.q_values, g.points)
        np.testing.assert_allclose(qd.dq_values[50:-50], fd[50:-50], rtol=1e-3)


class TestTransports:
    def test_linear_identity(self):
        T = Transport("linear", (0.0, 1.0))
        u = np.linspace(-3, 3, 11)
        np.testing.assert_array_equal(T(u), u)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_zero_frequencies_give_identity(self, seed):
        w = np.random.default_rng(seed).dirichlet(np.ones(10))
        T = Transport("nonlinear", weights=w, freqs=np.zeros(10))
        u = np.linspace(-5, 5, 21)
        np.testing.assert_allclose(T(u), u)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_nonlinear_maps_nondecreasing(self, seed):
        rng = np.random.default_rng(seed)
        T = sample_transport(TransportSpec("nonlinear"), rng)
        u = np.linspace(-6, 6, 2001)
        assert np.all(np.diff(T(u)) >= 0)
        assert np.all(T.derivative(u) >= -1e-15)
        np.testing.assert_allclose(T(0.0), 0.0, atol=1e-15)

    def test_derivatives_match_finite_differences(self, rng):
        T = sample_transport(TransportSpec("nonlinear"), rng)
        u = np.linspace(-4, 4, 801)
        fd1 = np.gradient(T(u), u)
        fd2 = np.gradient(T.derivative(u), u)
        np.testing.assert_allclose(T.derivative(u)[1:-1], fd1[1:-1], atol=1e-4)
        np.testing.assert_allclose(T.second_derivative(u)[1:-1], fd2[1:-1], atol=1e-4)

    def test_template_at_origin(self):
        for k in (-0.25, -0.125, 0.125, 0.25):
            T = Transport("nonlinear", weights=np.ones(1), freqs=np.array([k]))
            assert float(T(0.0)) == 0.0

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            TransportSpec("cubic")


class TestConfig:
    def test_scale_positivity_checked_at_corners(self):
        with pytest.raises(DomainError):
            SimConfig(n=50, p=2, beta=(3.0, 2.0))
        SimConfig(n=50, p=2, beta=(2.0, 1.9))

    def test_dimension_checks(self):
        with pytest.raises(DomainError):
            SimConfig(n=50, p=3, alpha=(0, 0, 0), beta=(0, 0, 0))
        with pytest.raises(DomainError):
            SimConfig(n=50, p=1)


class TestGenerate:
    def test_null_no_transport(self):
        cfg = SimConfig(n=20, transport="none")
        sim = generate_dataset(cfg, np.random.default_rng(0))
        Q0 = base_quantile(cfg.grid.points)
        np.testing.assert_allclose(sim.data.Q, np.tile(2 * Q0, (20, 1)))

    def test_linear_null_median(self):
        cfg = SimConfig(n=30, transport="linear")
        rng = np.random.default_rng(4)
        sim = generate_dataset(cfg, rng)
        med = sim.data.Q[:, 500]
        assert np.all(np.abs(med) <= 0.5)
        Q0 = base_quantile(cfg.grid.points)
        # Q_i = V1 + 2 V2 Q0, so slopes against Q0 lie in [1, 3].
        slope = (sim.data.Q[:, -1] - sim.data.Q[:, 0]) / (Q0[-1] - Q0[0])
        assert np.all((slope >= 1) & (slope <= 3))
        np.testing.assert_allclose(sim.data.Q - med[:, None], slope[:, None] * Q0, atol=1e-12)

    @pytest.mark.parametrize("kind", ["linear", "nonlinear", "none"])
    def test_strictly_increasing_and_derivatives(self, kind):
        cfg = SimConfig(n=25, alpha=(1.0, 0.5), beta=(1.0, 0.5), transport=kind,
                        grid_size=2001)
        d = generate_dataset(cfg, np.random.default_rng(1)).data
        assert np.all(np.diff(d.Q, axis=1) > 0)
        t = cfg.grid.points
        inner = slice(50, -50)
        np.testing.assert_allclose(d.q[:, inner], np.gradient(d.Q, t, axis=1)[:, inner],
                                   rtol=1e-3)
        np.testing.assert_allclose(d.dq[:, inner], np.gradient(d.q, t, axis=1)[:, inner],
                                   rtol=2e-3, atol=1e-3)

    def test_reproducible(self):
        cfg = SimConfig(n=40, transport="nonlinear")
        a = generate_dataset(cfg, np.random.default_rng(9)).data
        b = generate_dataset(cfg, np.random.default_rng(9)).data
        assert a.Q.tobytes() == b.Q.tobytes() and a.X.tobytes() == b.X.tobytes()

    def test_truth_helpers(self):
        cfg = SimConfig(n=10, p=1, alpha=(2.0,), beta=(1.0,))
        x = 0.3
        np.testing.assert_allclose(cfg.true_quantile([x]), 0.6 + 2.3 * base_quantile(cfg.grid.points))
        assert cfg.true_density([x], 0.6) == pytest.approx(base_pdf(0.0) / 2.3)

    def test_indirect_observation(self):
        cfg = SimConfig(n=20, p=1, alpha=(2.0,), beta=(1.0,), indirect=True)
        sim = generate_dataset(cfg, np.random.default_rng(3))
        d = sim.data
        assert np.all(np.diff(d.Q, axis=1) >= 0)
        err = np.max(np.abs(d.Q[:, 100:-100] - sim.truth[:, 100:-100]), axis=1)
        assert np.median(err) < 1.5


class TestEmpiricalQuantile:
    def test_uniform_plotting_positions(self):
        g = TimeGrid.uniform(201)
        N = 300
        sample = (np.arange(1, N + 1) - 0.5) / N
        for smoothing in ("none", "local_linear"):
            Q, qd = empirical_quantile_from_sample(sample, g, smoothing)
            assert np.max(np.abs(Q.values - g.points)) <= 2 / N

    def test_constant_sample_rejected(self):
        with pytest.raises(DomainError):
            empirical_quantile_from_sample(np.full(50, 3.0), TimeGrid.uniform(101))

    def test_too_small(self):
        with pytest.raises(InputError):
            empirical_quantile_from_sample(np.arange(10.0), TimeGrid.uniform(11))

    def test_default_bandwidth(self):
        sd = np.sqrt(301 / (12 * 299))
        assert default_bandwidth(300) == pytest.approx(1.06 * sd * 300 ** -0.2, rel=1e-12)


class TestExperiments:
    def test_power_worker_invariance(self):
        settings = [PowerSetting("global", "linear", 60, 0.0),
                    PowerSetting("partial", "nonlinear", 60, 0.5)]
        a = run_power_experiment(settings, reps=4, engines=("mixture", "satterthwaite"),
                                 seed=5, R=2000, return_pvalues=True)
        b = run_power_experiment(settings, reps=4, engines=("mixture", "satterthwaite"),
                                 seed=5, R=2000, workers=2, return_pvalues=True)
        assert [r["power"] for r in a] == [r["power"] for r in b]
        for ra, rb in zip(a, b):
            assert ra["p_values"].tobytes() == rb["p_values"].tobytes()

    def test_coverage_rows(self):
        rows = run_coverage_experiment([CoverageCell("linear", 60)], xs=(0.0, 0.3), reps=3,
                                       seed=1, R=500)
        assert [(r["band"], r["x"]) for r in rows] == [("winf", 0.0), ("winf", 0.3),
                                                       ("density", 0.0), ("density", 0.3)]
        assert all(0 <= r["noncoverage"] <= 1 for r in rows)

    def test_noise_free_design_is_degenerate(self):
        with pytest.raises(DegenerateError):
            run_coverage_experiment([CoverageCell("none", 60)], xs=(0.0,),
                                    kinds=("winf",), reps=1, seed=1, R=500)
