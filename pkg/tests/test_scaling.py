import numpy as np
import pytest

from linsde.models import builtin_model
from linsde.sampling import SamplePairBatch, SimulationConfig, sample_coupled
from linsde.scaling import (SweepResult, bootstrap_coefficients, fit_scaling,
                            read_sweep, rho_curvature_interval, run_sweep,
                            strong_error)
from linsde.scaling import _cell_seed
from linsde.linearise import InitialCondition


def make_batch(y, l, epsilon=0.1, rho=0.0):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    l = np.atleast_2d(np.asarray(l, dtype=float))
    return SamplePairBatch(y, l, epsilon, rho,
                           SimulationConfig(n_samples=max(1, y.shape[0])))


def synthetic_sweep(xs, values, axis="epsilon", r=1.0, other=0.0,
                    distances=None):
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(values, dtype=float)
    eps = xs if axis == "epsilon" else np.full_like(xs, other)
    rho = xs if axis == "rho" else np.full_like(xs, other)
    return SweepResult(eps, rho, vals, np.zeros_like(vals),
                       np.zeros(xs.size, dtype=np.uint64), r, 100,
                       distances)


class TestStrongError:
    def test_identical_samples_give_zero(self):
        y = np.random.default_rng(0).random((50, 2))
        est, se = strong_error(make_batch(y, y), 1.0)
        assert est == 0.0 and se == 0.0

    def test_single_pair_squared_distance(self):
        d = 0.37
        est, se = strong_error(make_batch([[0.0, 0.0]], [[d, 0.0]]), 2.0)
        assert est == pytest.approx(d ** 2, rel=1e-15)
        assert se == 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        y = rng.random((40, 2))
        l = y + 0.01 * rng.random((40, 2))
        perm = rng.permutation(40)
        a = strong_error(make_batch(y, l), 1.5)
        b = strong_error(make_batch(y[perm], l[perm]), 1.5)
        assert a == pytest.approx(b, rel=1e-14)

    def test_power_mean_ordering(self):
        rng = np.random.default_rng(2)
        y = rng.random((200, 2))
        l = y + 0.05 * rng.standard_normal((200, 2))
        batch = make_batch(y, l)
        roots = [strong_error(batch, r)[0] ** (1.0 / r)
                 for r in (1.0, 2.0, 3.0, 4.0)]
        assert np.all(np.diff(roots) >= -1e-15)

    def test_empty_batch_rejected(self):
        batch = make_batch(np.empty((0, 1)), np.empty((0, 1)))
        with pytest.raises(ValueError):
            strong_error(batch, 1.0)


class TestFitScaling:
    def test_exact_const_plus_eps2(self):
        eps = np.array([0.01, 0.02, 0.05, 0.1, 0.2])
        sweep = synthetic_sweep(eps, 3.0 + 2.0 * eps ** 2)
        fit = fit_scaling(sweep, "const_plus_eps2")
        assert fit.coefficients[0] == pytest.approx(3.0, rel=1e-10)
        assert fit.coefficients[1] == pytest.approx(2.0, rel=1e-10)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_exact_loglog_slope(self):
        for r in (1.0, 2.0):
            eps = 10 ** np.linspace(-3, -1, 5)
            sweep = synthetic_sweep(eps, 0.7 * eps ** (2 * r), r=r)
            fit = fit_scaling(sweep, "loglog_line")
            assert fit.slope == pytest.approx(2 * r, rel=1e-10)
            assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_exact_rho_bases(self):
        rho = np.array([0.0, 0.01, 0.02, 0.04, 0.08])
        lin = synthetic_sweep(rho, 0.5 + 4.0 * rho, axis="rho")
        fit = fit_scaling(lin, "const_plus_rho")
        assert fit.coefficients == pytest.approx((0.5, 4.0), rel=1e-10)
        quad = synthetic_sweep(rho, 0.5 + 4.0 * rho ** 2, axis="rho")
        fit2 = fit_scaling(quad, "const_plus_rho2")
        assert fit2.coefficients == pytest.approx((0.5, 4.0), rel=1e-10)

    def test_exact_no_intercept_basis(self):
        eps = np.array([0.01, 0.02, 0.05, 0.1])
        sweep = synthetic_sweep(eps, 4.0 * eps + 7.0 * eps ** 2)
        fit = fit_scaling(sweep, "eps_plus_eps2")
        assert fit.coefficients == pytest.approx((4.0, 7.0), rel=1e-10)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_requires_constant_other_axis(self):
        sweep = SweepResult(np.array([0.01, 0.02, 0.01, 0.02]),
                            np.array([0.0, 0.0, 0.1, 0.1]),
                            np.ones(4), np.zeros(4),
                            np.zeros(4, dtype=np.uint64), 1.0, 10)
        with pytest.raises(ValueError, match="axis"):
            fit_scaling(sweep, "const_plus_eps2")

    def test_too_few_cells(self):
        sweep = synthetic_sweep([0.01, 0.02, 0.05], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="cells"):
            fit_scaling(sweep, "const_plus_eps2")

    def test_degenerate_design(self):
        sweep = synthetic_sweep([0.01] * 5, np.ones(5))
        with pytest.raises(ValueError, match="degenerate"):
            fit_scaling(sweep, "const_plus_eps2")

    def test_unknown_basis(self):
        sweep = synthetic_sweep([0.01, 0.02, 0.05, 0.1], np.ones(4))
        with pytest.raises(ValueError, match="basis"):
            fit_scaling(sweep, "cubic")

    def test_loglog_needs_positive(self):
        sweep = synthetic_sweep([0.01, 0.02, 0.05, 0.1],
                                [1.0, 2.0, 0.0, 3.0])
        with pytest.raises(ValueError, match="positive"):
            fit_scaling(sweep, "loglog_line")


class TestBootstrap:
    def test_noisy_recovery_within_interval(self):
        rng = np.random.default_rng(3)
        eps = np.array([0.01, 0.02, 0.05, 0.1, 0.2])
        beta0, beta1 = 2.0, 5.0
        truth = beta0 + beta1 * eps ** 2
        dists = [np.abs(rng.normal(m, 0.02 * m, size=4000)) for m in truth]
        est = np.array([d.mean() for d in dists])
        sweep = synthetic_sweep(eps, est, distances=dists)
        boots = bootstrap_coefficients(sweep, "const_plus_eps2",
                                       n_boot=300, seed=0)
        lo, hi = np.quantile(boots[:, 0], [0.005, 0.995])
        assert lo <= beta0 <= hi
        lo, hi = np.quantile(boots[:, 1], [0.005, 0.995])
        assert lo <= beta1 <= hi

    def test_requires_distances(self):
        sweep = synthetic_sweep([0.01, 0.02, 0.05, 0.1], np.ones(4))
        with pytest.raises(ValueError, match="keep_distances"):
            bootstrap_coefficients(sweep, "const_plus_eps2")

    def test_curvature_interval_flags_planted_quadratic(self):
        rng = np.random.default_rng(4)
        rho = np.array([0.0, 0.02, 0.05, 0.1])
        truth = 1.0 + 3.0 * rho + 40.0 * rho ** 2
        dists = [np.abs(rng.normal(m, 0.01 * m, size=3000)) for m in truth]
        est = np.array([d.mean() for d in dists])
        sweep = synthetic_sweep(rho, est, axis="rho", distances=dists)
        c2, lo, hi = rho_curvature_interval(sweep, n_boot=300, seed=1)
        assert lo > 0.0  # genuine curvature detected
        # and a planted straight line is not flagged
        truth = 1.0 + 3.0 * rho
        dists = [np.abs(rng.normal(m, 0.01 * m, size=3000)) for m in truth]
        est = np.array([d.mean() for d in dists])
        sweep = synthetic_sweep(rho, est, axis="rho", distances=dists)
        c2, lo, hi = rho_curvature_interval(sweep, n_boot=300, seed=1)
        assert lo <= 0.0 <= hi


class TestRunSweep:
    def test_single_cell_reduces_to_strong_error(self, sine):
        cfg = SimulationConfig(dt=1e-3, n_samples=200, seed=21)
        sweep = run_sweep(sine, [0.5], [0.0], [0.05], 1.0, 1.0, cfg)
        assert len(sweep) == 1
        cell_cfg = SimulationConfig(dt=1e-3, n_samples=200,
                                    seed=_cell_seed(21, 0, 0))
        batch = sample_coupled(sine, InitialCondition.fixed([0.5]), 0.05,
                               1.0, cell_cfg)
        est, se = strong_error(batch, 1.0)
        assert sweep.estimates[0] == est
        assert sweep.stderrs[0] == se

    def test_multiple_orders_share_cells(self, sine):
        cfg = SimulationConfig(dt=1e-2, n_samples=100, seed=22)
        sweeps = run_sweep(sine, [0.5], [0.0], [0.05, 0.1], 1.0,
                           [1.0, 2.0], cfg)
        assert len(sweeps) == 2
        np.testing.assert_array_equal(sweeps[0].seeds, sweeps[1].seeds)
        assert sweeps[0].r == 1.0 and sweeps[1].r == 2.0

    def test_monotone_in_epsilon(self, sine):
        cfg = SimulationConfig(dt=1e-3, n_samples=500, seed=23)
        sweep = run_sweep(sine, [0.5], [0.0], [1e-3, 1e-2, 1e-1], 1.0,
                          1.0, cfg)
        noise = 3 * np.hypot(sweep.stderrs[1:], sweep.stderrs[:-1])
        assert np.all(np.diff(sweep.estimates) > -noise)

    def test_multiplicative_monotone_in_rho(self, mult):
        cfg = SimulationConfig(dt=1e-3, n_samples=800, seed=24)
        sweep = run_sweep(mult, [2.0], [0.0, 0.05, 0.1], [1e-2], 1.0,
                          1.0, cfg)
        noise = 3 * np.hypot(sweep.stderrs[1:], sweep.stderrs[:-1])
        assert np.all(np.diff(sweep.estimates) > -noise)

    def test_restrict_and_roundtrip(self, tmp_path, sine):
        cfg = SimulationConfig(dt=1e-2, n_samples=50, seed=25)
        sweep = run_sweep(sine, [0.5], [0.0, 0.01], [0.05, 0.1], 0.5,
                          1.0, cfg)
        sub = sweep.restrict(rho=0.01)
        assert len(sub) == 2
        assert np.all(sub.rhos == 0.01)
        path = tmp_path / "sweep.csv"
        sweep.write_csv(path)
        back = read_sweep(path)
        np.testing.assert_array_equal(back.epsilons, sweep.epsilons)
        np.testing.assert_array_equal(back.estimates, sweep.estimates)
        np.testing.assert_array_equal(back.seeds, sweep.seeds)
        assert back.r == sweep.r and back.n_samples == sweep.n_samples

    def test_empty_grid_rejected(self, sine):
        cfg = SimulationConfig(n_samples=10)
        with pytest.raises(ValueError, match="non-empty"):
            run_sweep(sine, [0.5], [], [0.1], 1.0, 1.0, cfg)

    def test_cell_failure_annotated(self):
        model = builtin_model("linear_multiplicative")
        cfg = SimulationConfig(dt=1e-3, n_samples=20, seed=26)
        with pytest.raises(ValueError, match="epsilon=-1"):
            run_sweep(model, [2.0], [0.0], [-1.0], 1.0, 1.0, cfg)
