import math

import numpy as np
import pytest

from linsde.exceptions import BatchError, CovarianceError
from linsde.flow import integrate_flow
from linsde.linearise import InitialCondition, linearised_distribution
from linsde.models import VectorFieldModel, builtin_model
from linsde.sampling import (SimulationConfig, draw_initial, read_batch,
                             sample_coupled, sample_nonlinear)


def cubic_drift_model():
    base = builtin_model("sine")
    return VectorFieldModel(
        name="cubic", dim_state=1, dim_noise=1,
        drift=lambda x, t: np.asarray(x, dtype=float) ** 3,
        drift_gradient=lambda x, t: 3.0 * np.asarray(x, dtype=float)[..., None] ** 2,
        diffusion=base.diffusion, constants=base.constants,
        analytic_flow=None)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig(dt=0.0)
        with pytest.raises(ValueError):
            SimulationConfig(scheme="heun")
        with pytest.raises(ValueError):
            SimulationConfig(n_samples=0)

    def test_step_rounding(self):
        cfg = SimulationConfig(dt=1e-3)
        assert cfg.steps_for(1.5) == 1500
        assert cfg.steps_for(1e-5) == 1  # rounded up to one step

    def test_t_final_conflict(self, sine):
        cfg = SimulationConfig(dt=1e-2, n_samples=10, seed=0, t_final=1.0)
        with pytest.raises(ValueError, match="t_final"):
            sample_coupled(sine, InitialCondition.fixed([0.5]), 0.1, 2.0, cfg)


class TestDrawInitial:
    def test_fixed_rows_identical(self):
        init = InitialCondition.fixed([0.5, -1.0])
        draws = draw_initial(init, 7, seed=1)
        assert draws.shape == (7, 2)
        assert np.all(draws == np.array([0.5, -1.0]))

    def test_gaussian_sample_mean(self):
        n, rho = 100_000, 0.1
        init = InitialCondition.gaussian([0.5], rho=rho)
        draws = draw_initial(init, n, seed=2)
        assert abs(draws.mean() - 0.5) < 4 * rho / math.sqrt(n)

    def test_gaussian_full_covariance(self):
        cov = np.array([[0.04, 0.015], [0.015, 0.09]])
        init = InitialCondition.gaussian([1.0, -1.0], covariance=cov)
        draws = draw_initial(init, 60_000, seed=3)
        got = np.cov(draws, rowvar=False)
        assert np.linalg.norm(got - cov) / np.linalg.norm(cov) < 0.03

    def test_zero_covariance_equals_fixed(self):
        gauss = InitialCondition.gaussian([0.7], rho=0.0)
        fixed = InitialCondition.fixed([0.7])
        np.testing.assert_array_equal(draw_initial(gauss, 5, seed=4),
                                      draw_initial(fixed, 5, seed=4))

    def test_non_psd_rejected(self):
        init = InitialCondition.gaussian(
            [0.0, 0.0], covariance=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(CovarianceError):
            draw_initial(init, 3, seed=0)

    def test_seed_and_index_stability(self):
        init = InitialCondition.gaussian([0.0], rho=1.0)
        a = draw_initial(init, 10, seed=11)
        b = draw_initial(init, 10, seed=11)
        np.testing.assert_array_equal(a, b)
        # per-index streams: a longer batch extends, never reshuffles
        c = draw_initial(init, 20, seed=11)
        np.testing.assert_array_equal(c[:10], a)


class TestCoupledSampling:
    def test_seed_determinism(self, sine):
        cfg = SimulationConfig(dt=1e-3, n_samples=64, seed=123)
        init = InitialCondition.gaussian([0.5], rho=0.05)
        a = sample_coupled(sine, init, 0.05, 1.0, cfg)
        b = sample_coupled(sine, init, 0.05, 1.0, cfg)
        np.testing.assert_array_equal(a.y_samples, b.y_samples)
        np.testing.assert_array_equal(a.l_samples, b.l_samples)

    def test_linear_additive_paths_coincide(self, linadd):
        # linear drift + additive noise: both discretisations apply the
        # same affine update, so paths agree to rounding error
        cfg = SimulationConfig(dt=1e-3, n_samples=100, seed=5)
        batch = sample_coupled(linadd, InitialCondition.fixed([0.3, -0.4]),
                               0.1, 1.0, cfg)
        dist = np.linalg.norm(batch.y_samples - batch.l_samples, axis=1)
        assert dist.max() <= 10 * cfg.dt

    def test_zero_noise_reduces_to_deterministic(self, sine):
        cfg = SimulationConfig(dt=1e-3, n_samples=4, seed=6)
        batch = sample_coupled(sine, InitialCondition.fixed([0.5]), 0.0,
                               1.5, cfg)
        target = integrate_flow(sine, [0.5], 1.5)
        assert np.abs(batch.y_samples - target).max() <= 10 * cfg.dt
        assert np.abs(batch.l_samples - target).max() <= 10 * cfg.dt
        assert np.abs(batch.y_samples - batch.l_samples).max() <= 10 * cfg.dt

    def test_linearised_samples_match_gaussian_law(self, sine):
        # empirical moments of the linearised samples converge to the
        # closed-form law: N = 1e4 gives 5/sqrt(N) = 5% headroom
        n = 10_000
        eps, t = 0.05, 1.5
        init = InitialCondition.gaussian([0.5], rho=0.02)
        cfg = SimulationConfig(dt=1e-3, n_samples=n, seed=7)
        batch = sample_coupled(sine, init, eps, t, cfg)
        law = linearised_distribution(sine, init, t, eps)
        cov = np.cov(batch.l_samples, rowvar=False).reshape(1, 1)
        rel = np.linalg.norm(cov - law.covariance) / np.linalg.norm(law.covariance)
        assert rel <= 5.0 / math.sqrt(n)
        mean_err = np.linalg.norm(batch.l_samples.mean(axis=0) - law.mean)
        assert mean_err <= 5.0 * math.sqrt(law.covariance.max()) / math.sqrt(n)

    def test_scheme_refinement_within_noise(self, sine):
        # halving dt moves E_1 by less than the Monte-Carlo noise
        init = InitialCondition.fixed([0.5])
        eps, t, n = 1e-2, 1.5, 3000
        est = {}
        for dt in (1e-3, 5e-4):
            cfg = SimulationConfig(dt=dt, n_samples=n, seed=8)
            batch = sample_coupled(sine, init, eps, t, cfg)
            d = np.linalg.norm(batch.y_samples - batch.l_samples, axis=1)
            est[dt] = (d.mean(), d.std(ddof=1) / math.sqrt(n))
        diff = abs(est[1e-3][0] - est[5e-4][0])
        noise = math.hypot(est[1e-3][1], est[5e-4][1])
        assert diff <= 3 * noise

    def test_milstein_equals_euler_for_additive_noise(self, sine):
        init = InitialCondition.fixed([0.5])
        em = sample_coupled(sine, init, 0.1, 1.0,
                            SimulationConfig(dt=1e-3, n_samples=32, seed=9))
        mil = sample_coupled(sine, init, 0.1, 1.0,
                             SimulationConfig(dt=1e-3, n_samples=32, seed=9,
                                              scheme="milstein_1d"))
        np.testing.assert_array_equal(em.y_samples, mil.y_samples)
        np.testing.assert_array_equal(em.l_samples, mil.l_samples)

    def test_milstein_multiplicative_close_to_euler(self, mult):
        init = InitialCondition.fixed([2.0])
        cfg_em = SimulationConfig(dt=1e-3, n_samples=500, seed=10)
        cfg_mil = SimulationConfig(dt=1e-3, n_samples=500, seed=10,
                                   scheme="milstein_1d")
        em = sample_coupled(mult, init, 0.05, 1.0, cfg_em)
        mil = sample_coupled(mult, init, 0.05, 1.0, cfg_mil)
        # same Wiener increments, so the correction is the only difference
        assert not np.array_equal(em.y_samples, mil.y_samples)
        np.testing.assert_array_equal(em.l_samples, mil.l_samples)
        assert np.abs(em.y_samples - mil.y_samples).max() < 1e-3

    def test_milstein_requires_1d(self, jet):
        cfg = SimulationConfig(dt=1e-3, n_samples=4, seed=0,
                               scheme="milstein_1d")
        with pytest.raises(ValueError, match="1-D"):
            sample_coupled(jet, InitialCondition.fixed([0.0, 1.0]), 0.1,
                           1.0, cfg)

    def test_flagged_samples_excluded_and_counted(self):
        # cubic drift blows up for |x| > 1/sqrt(2) by t = 1; with
        # rho = 0.25 about 0.5% of draws escape, below the 1% abort line
        model = cubic_drift_model()
        init = InitialCondition.gaussian([0.0], rho=0.25)
        cfg = SimulationConfig(dt=1e-3, n_samples=2000, seed=12)
        batch = sample_coupled(model, init, 0.0, 1.0, cfg)
        assert batch.n_flagged > 0
        assert len(batch) == cfg.n_samples - batch.n_flagged
        assert np.all(np.isfinite(batch.y_samples))

    def test_flag_rate_above_threshold_aborts(self):
        model = cubic_drift_model()
        init = InitialCondition.gaussian([0.0], rho=0.35)
        cfg = SimulationConfig(dt=1e-3, n_samples=2000, seed=13)
        with pytest.raises(BatchError):
            sample_coupled(model, init, 0.0, 1.0, cfg)

    def test_nonlinear_only_matches_coupled_y(self, mult):
        init = InitialCondition.gaussian([2.0], rho=0.05)
        cfg = SimulationConfig(dt=1e-3, n_samples=50, seed=14)
        batch = sample_coupled(mult, init, 0.05, 1.0, cfg)
        y_only = sample_nonlinear(mult, init, 0.05, 1.0, cfg)
        np.testing.assert_array_equal(batch.y_samples, y_only)


class TestBatchSerialisation:
    def test_csv_roundtrip(self, tmp_path, jet):
        cfg = SimulationConfig(dt=1e-2, n_samples=25, seed=15)
        batch = sample_coupled(jet, InitialCondition.fixed([0.0, 1.0]),
                               0.05, 0.5, cfg)
        csv = tmp_path / "batch.csv"
        meta = tmp_path / "batch.json"
        batch.write_csv(csv, sidecar_path=meta)
        back = read_batch(csv, meta)
        np.testing.assert_array_equal(back.y_samples, batch.y_samples)
        np.testing.assert_array_equal(back.l_samples, batch.l_samples)
        assert back.epsilon == batch.epsilon
        assert back.config == batch.config
        assert back.model_name == "meandering_jet"

    def test_batch_requires_finite(self):
        from linsde.sampling import SamplePairBatch
        with pytest.raises(ValueError):
            SamplePairBatch(np.array([[np.nan]]), np.array([[0.0]]),
                            0.1, 0.0, SimulationConfig())
