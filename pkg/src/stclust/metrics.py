"""Model comparison: WAIC, one-step-ahead predictive likelihoods, and
out-of-sample forecast errors.

The predictive quantities refit the sampler on expanding time windows: for
each evaluation year t the chain runs on years 1..t-1 and the held-out year
is scored under the exact Gaussian marginal with the current-year effects
integrated out analytically,

    Y_t | theta, w_{t-1}  ~  N(fitted_t + diag(xi) w_{t-1},
                               sigma^2 I + tau^2 Q(rho, W)^{-1}).

The covariance is never formed densely: with Sigma = Q^{-1} (sigma^2 Q +
tau^2 I), both the log-determinant and the quadratic form reduce to banded
Cholesky operations on sigma^2 Q + tau^2 I.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .banded import BandedSPD, band_cholesky, band_solve, factor_logdet
from .panel import AdjacencyGraph, PanelData, panel_time_slice, permute_panel
from .sampler import ChainConfig, ChainOutput, run_chain
from .spatial import apply_permutation, leroux_precision, reverse_cuthill_mckee

_LOG2PI = np.log(2.0 * np.pi)


def waic(loglik: np.ndarray) -> tuple[float, float, float]:
    """Widely applicable information criterion from a draws x units
    log-likelihood matrix.

    Returns (waic, lppd, p_waic) with
    lppd = sum_i log mean_m exp(loglik[m, i]) (log-sum-exp stabilized),
    p_waic = 2 sum_i (log mean - mean log), and waic = -2 (lppd - p_waic).
    """
    loglik = np.atleast_2d(np.asarray(loglik, dtype=float))
    n_draws = loglik.shape[0]
    log_mean = logsumexp(loglik, axis=0) - np.log(n_draws)
    mean_log = loglik.mean(axis=0)
    lppd = float(np.sum(log_mean))
    p_waic = float(2.0 * np.sum(log_mean - mean_log))
    return -2.0 * (lppd - p_waic), lppd, p_waic


def rmse_mae(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float]:
    """Root-mean-square and mean-absolute error of a point forecast."""
    err = np.asarray(y_true, dtype=float) - np.asarray(y_pred, dtype=float)
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def predictive_marginal_logpdf(
    y: np.ndarray,
    mean: np.ndarray,
    sigma2: float,
    tau2: float,
    q: BandedSPD,
) -> float:
    """Log-density of N(mean, sigma^2 I + tau^2 Q^{-1}) at y, via band algebra."""
    n = q.n
    inner_bands = sigma2 * q.bands
    inner_bands[0] = inner_bands[0] + tau2
    inner = BandedSPD(n, q.bandwidth, inner_bands)
    inner_factor = band_cholesky(inner)
    q_factor = band_cholesky(q)
    logdet = factor_logdet(inner_factor) - factor_logdet(q_factor)
    resid = y - mean
    quad = float(resid @ q.matvec(band_solve(inner_factor, resid)))
    return -0.5 * (n * _LOG2PI + logdet + quad)


@dataclass
class MetricReport:
    """Model-comparison summary: WAIC pieces, per-year predictive
    log-likelihoods and their sum, and per-year forecast errors."""

    waic: float = np.nan
    lppd: float = np.nan
    p_waic: float = np.nan
    predictive: dict = field(default_factory=dict)
    lml_sum: float = np.nan
    rmse: dict = field(default_factory=dict)
    mae: dict = field(default_factory=dict)
    rmse_avg: float = np.nan
    mae_avg: float = np.nan


def _score_year(
    data_p: PanelData,
    graph_p: AdjacencyGraph,
    fit: ChainOutput,
    t_index: int,
) -> tuple[float, float, float]:
    """(log predictive likelihood, rmse, mae) for the held-out year t_index,
    everything already in the band-reduced unit order."""
    y_t = data_p.y[:, t_index]
    x_t = data_p.x[:, t_index, :]
    n_draws = fit.n_draws
    lls = np.empty(n_draws)
    mean_sum = np.zeros_like(y_t)
    for m in range(n_draws):
        mean = np.einsum("ik,ik->i", x_t, fit.beta[m])
        mean = mean + fit.xi[m] * fit.w[m][:, -1]
        mean_sum += mean
        q = leroux_precision(fit.rho[m], graph_p)
        lls[m] = predictive_marginal_logpdf(
            y_t, mean, fit.sigma2[m], fit.tau2[m], q
        )
    rmse, mae = rmse_mae(y_t, mean_sum / n_draws)
    return float(logsumexp(lls) - np.log(n_draws)), rmse, mae


def _expanding_window_scores(
    data: PanelData,
    graph: AdjacencyGraph,
    config: ChainConfig,
    t0: int,
) -> dict:
    """Fit on years 1..t-1 and score year t, for each t in t0..T (1-based)."""
    n_times = data.n_times
    if not 2 <= t0 <= n_times:
        raise ValueError(f"t0 must lie in 2..{n_times}")
    order = reverse_cuthill_mckee(graph)
    graph_p = apply_permutation(graph, order)
    data_p = permute_panel(data, order)
    scores = {}
    for t_index in range(t0 - 1, n_times):
        prefix = panel_time_slice(data_p, t_index)
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, t_index)))
        fit = run_chain(prefix, graph_p, config, rng=rng)
        scores[data.times[t_index]] = _score_year(data_p, graph_p, fit, t_index)
    return scores


def one_step_predictive_loglik(
    data: PanelData,
    graph: AdjacencyGraph,
    config: ChainConfig,
    t0: int,
) -> tuple[dict, float]:
    """Per-year log p(Y_t | Y_{1:t-1}) estimates for t = t0..T and their sum
    (the log marginal likelihood of years t0..T given the earlier ones)."""
    scores = _expanding_window_scores(data, graph, config, t0)
    per_year = {year: vals[0] for year, vals in scores.items()}
    return per_year, float(sum(per_year.values()))


def forecast_error(
    data: PanelData,
    graph: AdjacencyGraph,
    config: ChainConfig,
    t0: int,
) -> tuple[dict, dict, float, float]:
    """One-year-ahead posterior-mean forecast errors for t = t0..T.

    Returns ({year: rmse}, {year: mae}, rmse average, mae average).
    """
    scores = _expanding_window_scores(data, graph, config, t0)
    rmse = {year: vals[1] for year, vals in scores.items()}
    mae = {year: vals[2] for year, vals in scores.items()}
    return rmse, mae, float(np.mean(list(rmse.values()))), float(
        np.mean(list(mae.values()))
    )


def evaluate_model(
    data: PanelData,
    graph: AdjacencyGraph,
    config: ChainConfig,
    t0: int,
    full_fit: ChainOutput | None = None,
) -> MetricReport:
    """Full comparison report: WAIC on a whole-sample fit plus expanding-window
    predictive likelihoods and forecast errors from the fifth year on
    (or from ``t0``).  Pass ``full_fit`` to reuse an existing whole-sample fit.
    """
    if full_fit is None:
        full_fit = run_chain(data, graph, config)
    w, lppd, p_w = waic(full_fit.loglik)
    scores = _expanding_window_scores(data, graph, config, t0)
    predictive = {year: vals[0] for year, vals in scores.items()}
    rmse = {year: vals[1] for year, vals in scores.items()}
    mae = {year: vals[2] for year, vals in scores.items()}
    return MetricReport(
        waic=w,
        lppd=lppd,
        p_waic=p_w,
        predictive=predictive,
        lml_sum=float(sum(predictive.values())),
        rmse=rmse,
        mae=mae,
        rmse_avg=float(np.mean(list(rmse.values()))),
        mae_avg=float(np.mean(list(mae.values()))),
    )


def write_metrics_csv(report: MetricReport, path) -> None:
    """Write the report in long form: ``metric,year,value`` (blank year for
    whole-sample quantities)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("metric,year,value\n")
        for name in ("waic", "lppd", "p_waic", "lml_sum", "rmse_avg", "mae_avg"):
            val = getattr(report, name)
            if np.isfinite(val):
                fh.write(f"{name},,{val!r}\n")
        for name in ("predictive", "rmse", "mae"):
            for year, val in getattr(report, name).items():
                fh.write(f"{name},{year},{val!r}\n")


def format_metric_table(report: MetricReport) -> str:
    """Human-readable summary table."""
    lines = []
    if np.isfinite(report.waic):
        lines.append(f"WAIC: {report.waic:.3f}  (lppd {report.lppd:.3f}, "
                     f"p_waic {report.p_waic:.3f})")
    if report.predictive:
        years = list(report.predictive)
        lines.append("year        " + "  ".join(f"{y!s:>8}" for y in years))
        lines.append("log p(Y_t|.)" + "  ".join(
            f"{report.predictive[y]:8.2f}" for y in years))
        if report.rmse:
            lines.append("RMSE        " + "  ".join(
                f"{report.rmse[y]:8.3f}" for y in years))
            lines.append("MAE         " + "  ".join(
                f"{report.mae[y]:8.3f}" for y in years))
        lines.append(f"sum log predictive: {report.lml_sum:.3f}")
        if np.isfinite(report.rmse_avg):
            lines.append(f"average RMSE: {report.rmse_avg:.3f}   "
                         f"average MAE: {report.mae_avg:.3f}")
    return "\n".join(lines)
