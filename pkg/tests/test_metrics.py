import numpy as np
import pytest
from scipy import stats

from stclust.metrics import (
    MetricReport,
    evaluate_model,
    forecast_error,
    format_metric_table,
    one_step_predictive_loglik,
    predictive_marginal_logpdf,
    rmse_mae,
    waic,
    write_metrics_csv,
)
from stclust.partition import Partition
from stclust.sampler import ChainConfig
from stclust.simulate import SimulationSpec, rook_grid_graph, simulate_dataset
from stclust.spatial import leroux_precision

from conftest import random_graph


class TestWaic:
    def test_single_draw(self):
        ll = np.array([[-1.0, -2.0, -0.5]])
        w, lppd, p_w = waic(ll)
        assert p_w == 0.0
        assert np.isclose(w, -2.0 * ll.sum())
        assert np.isclose(lppd, ll.sum())

    def test_two_draws_hand_value(self):
        # one unit, likelihood values e^-1 and e^-3
        ll = np.array([[-1.0], [-3.0]])
        w, lppd, p_w = waic(ll)
        expected_lppd = np.log((np.exp(-1) + np.exp(-3)) / 2.0)
        assert np.isclose(lppd, expected_lppd, atol=1e-14)
        assert np.isclose(p_w, 2.0 * (expected_lppd - (-2.0)), atol=1e-14)
        assert np.isclose(w, -2.0 * (lppd - p_w), atol=1e-14)

    def test_permutation_invariance(self, rng):
        ll = rng.standard_normal((30, 8)) - 2.0
        w, _, _ = waic(ll)
        w_draws, _, _ = waic(ll[rng.permutation(30)])
        w_units, _, _ = waic(ll[:, rng.permutation(8)])
        assert np.isclose(w, w_draws) and np.isclose(w, w_units)

    def test_p_waic_nonnegative(self, rng):
        for _ in range(20):
            ll = rng.standard_normal((15, 5)) * rng.uniform(0.1, 2.0)
            _, _, p_w = waic(ll)
            assert p_w >= -1e-8

    def test_logsumexp_matches_naive(self, rng):
        ll = rng.uniform(-3.0, -0.5, size=(12, 4))
        _, lppd, _ = waic(ll)
        naive = np.sum(np.log(np.mean(np.exp(ll), axis=0)))
        assert np.isclose(lppd, naive, atol=1e-10)


class TestPredictiveMarginal:
    def test_matches_dense_multivariate_normal(self, rng):
        for _ in range(15):
            n = int(rng.integers(2, 9))
            g = random_graph(n, rng)
            q = leroux_precision(rng.uniform(0.1, 0.95), g)
            sigma2, tau2 = rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)
            y = rng.standard_normal(n)
            mean = rng.standard_normal(n)
            cov = sigma2 * np.eye(n) + tau2 * np.linalg.inv(q.to_dense())
            expected = stats.multivariate_normal(mean, cov).logpdf(y)
            got = predictive_marginal_logpdf(y, mean, sigma2, tau2, q)
            assert abs(got - expected) < 1e-10

    def test_scalar_small_tau_limit(self, rng):
        # I = 1 with tau2 -> 0: reduces to N(y | mean, sigma2)
        from stclust.panel import AdjacencyGraph

        g = AdjacencyGraph.from_edges(1, [])
        q = leroux_precision(0.0, g)
        y, mean, sigma2 = np.array([0.7]), np.array([0.2]), 1.3
        got = predictive_marginal_logpdf(y, mean, sigma2, 1e-12, q)
        assert np.isclose(got, stats.norm.logpdf(0.7, 0.2, np.sqrt(sigma2)),
                          atol=1e-6)

    def test_mixture_estimate_matches_dense_oracle(self, rng):
        # same-draw Gaussian mixture: band route equals the dense route
        from scipy.special import logsumexp

        n = 2
        g = random_graph(n, rng)
        y = rng.standard_normal(n)
        lls_band, lls_dense = [], []
        for _ in range(200):
            rho = rng.uniform(0.1, 0.9)
            sigma2, tau2 = rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5)
            mean = rng.standard_normal(n)
            q = leroux_precision(rho, g)
            lls_band.append(predictive_marginal_logpdf(y, mean, sigma2, tau2, q))
            cov = sigma2 * np.eye(n) + tau2 * np.linalg.inv(q.to_dense())
            lls_dense.append(stats.multivariate_normal(mean, cov).logpdf(y))
        est_band = logsumexp(lls_band) - np.log(200)
        est_dense = logsumexp(lls_dense) - np.log(200)
        assert abs(est_band - est_dense) < 1e-10


class TestForecastErrors:
    def test_perfect_forecast(self):
        assert rmse_mae(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == (0.0, 0.0)

    def test_hand_values(self):
        rmse, mae = rmse_mae(np.array([1.0, -1.0]), np.zeros(2))
        assert rmse == 1.0 and mae == 1.0
        rmse, mae = rmse_mae(np.array([2.0, 0.0]), np.zeros(2))
        assert np.isclose(rmse, np.sqrt(2.0)) and mae == 1.0

    def test_rmse_at_least_mae(self, rng):
        for _ in range(25):
            err = rng.standard_normal(int(rng.integers(2, 30)))
            rmse, mae = rmse_mae(err, np.zeros_like(err))
            assert rmse >= mae >= 0.0


def tiny_problem():
    labels = Partition.from_labels([0, 0, 1, 1, 0, 1])
    spec = SimulationSpec(grid_rows=2, grid_cols=3, true_partition=labels,
                          p=1, rho=0.6, sigma2=0.5, tau2=0.5, seed=2)
    panel, graph, _ = simulate_dataset(spec, n_times=5)
    cfg = ChainConfig(iterations=80, burn_in=30, thin=2, seed=5)
    return panel, graph, cfg


class TestEndToEnd:
    def test_one_step_and_forecast(self):
        panel, graph, cfg = tiny_problem()
        per_year, total = one_step_predictive_loglik(panel, graph, cfg, t0=4)
        assert list(per_year) == [4, 5]
        assert np.isclose(total, sum(per_year.values()))
        assert all(np.isfinite(v) for v in per_year.values())
        rmse, mae, rmse_avg, mae_avg = forecast_error(panel, graph, cfg, t0=4)
        assert list(rmse) == [4, 5]
        for year in rmse:
            assert rmse[year] >= mae[year] >= 0.0
        assert np.isclose(rmse_avg, np.mean(list(rmse.values())))

    def test_bad_t0(self):
        panel, graph, cfg = tiny_problem()
        with pytest.raises(ValueError, match="t0"):
            one_step_predictive_loglik(panel, graph, cfg, t0=1)
        with pytest.raises(ValueError, match="t0"):
            one_step_predictive_loglik(panel, graph, cfg, t0=9)

    def test_full_report_and_writers(self, tmp_path):
        panel, graph, cfg = tiny_problem()
        report = evaluate_model(panel, graph, cfg, t0=5)
        assert np.isfinite(report.waic)
        assert report.waic == pytest.approx(
            -2.0 * (report.lppd - report.p_waic), rel=1e-12
        )
        assert list(report.predictive) == [5]
        assert np.isclose(report.lml_sum, report.predictive[5])
        path = tmp_path / "metrics.csv"
        write_metrics_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "metric,year,value"
        assert any(line.startswith("waic,,") for line in lines)
        assert any(line.startswith("rmse,5,") for line in lines)
        table = format_metric_table(report)
        assert "WAIC" in table and "average RMSE" in table

    def test_deterministic(self):
        panel, graph, cfg = tiny_problem()
        a = one_step_predictive_loglik(panel, graph, cfg, t0=5)
        b = one_step_predictive_loglik(panel, graph, cfg, t0=5)
        assert a == b
