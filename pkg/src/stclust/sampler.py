"""Metropolis-within-Gibbs sampler for the clustered spatio-temporal model.

Each iteration runs, in order: the allocation sweep, the cluster-level
regression and autoregressive parameters, the concentration parameter, the
latent effects (exact block-tridiagonal draw), the observation variance, the
effects scale, and the spatial dependence parameter.  Chains are fully
deterministic given their seed; multi-chain runs derive independent streams
from the root seed.

Units are internally reordered by reverse Cuthill-McKee so the spatial
precision is banded; recorded draws are mapped back to panel order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from . import __version__
from .banded import BandedSPD, band_cholesky, factor_logdet
from .dp import (
    BaseMeasure,
    ClusterState,
    canonicalize_labels,
    gibbs_allocations,
    update_cluster_betas,
    update_cluster_xis,
    update_concentration,
)
from .gmrf import (
    gmrf_residual_quad_form,
    random_effects_full_conditional,
    sample_block_tridiagonal,
    sample_gmrf_prior,
)
from .panel import AdjacencyGraph, PanelData, permute_panel
from .spatial import apply_permutation, leroux_precision, reverse_cuthill_mckee

_LOG2PI = np.log(2.0 * np.pi)


class NumericalError(RuntimeError):
    """A sub-step of the chain failed numerically (iteration recorded)."""


@dataclass
class ModelState:
    """One full MCMC configuration of the model parameters.

    Chain updates keep ``sigma2``, ``tau2`` strictly positive and ``rho``
    strictly interior; the boundary values are admitted only so the type can
    carry degenerate ground-truth settings from the simulation harness.
    """

    cluster: ClusterState
    w: np.ndarray
    sigma2: float
    tau2: float
    rho: float

    def __post_init__(self):
        if self.sigma2 < 0 or self.tau2 <= 0:
            raise ValueError("variances must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")


@dataclass
class ChainConfig:
    """Chain length, seeds, and prior hyperparameters.

    Defaults encode weakly informative priors: inverse-gamma(3, 2) on both
    variances (unit prior mean and variance), Beta(6, 1) on the spatial
    dependence (mean 6/7), Gamma(3, 2) on the concentration, standard normal
    base measure for the regression vectors, and a uniform base measure on
    (-1, 1) for the autoregressive coefficients.
    """

    iterations: int = 25_000
    burn_in: int = 10_000
    thin: int = 3
    seed: int = 0
    n_aux: int = 20
    a_sigma2: float = 3.0
    b_sigma2: float = 2.0
    a_tau2: float = 3.0
    b_tau2: float = 2.0
    alpha_rho: float = 6.0
    beta_rho: float = 1.0
    a_alpha: float = 3.0
    b_alpha: float = 2.0
    a_xi: float = 1.0
    b_xi: float = 1.0
    mu0: np.ndarray | None = None
    sigma0: np.ndarray | None = None
    mh_step_xi: float = 0.25
    mh_step_rho: float = 0.3
    adapt: bool = True
    fixed_partition: np.ndarray | None = None
    n_chains: int = 1
    init: str = "default"

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.init not in ("default", "prior"):
            raise ValueError("init must be 'default' or 'prior'")
        for name in ("n_aux", "a_sigma2", "b_sigma2", "a_tau2", "b_tau2",
                     "alpha_rho", "beta_rho", "a_alpha", "b_alpha", "a_xi",
                     "b_xi", "mh_step_xi", "mh_step_rho"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def base_measure(self, p: int) -> BaseMeasure:
        mu0 = np.zeros(p + 1) if self.mu0 is None else np.asarray(self.mu0, float)
        sigma0 = np.eye(p + 1) if self.sigma0 is None else np.asarray(self.sigma0, float)
        return BaseMeasure(mu0=mu0, sigma0=sigma0, a_xi=self.a_xi, b_xi=self.b_xi)

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def production_config(**overrides) -> ChainConfig:
    """Single-chain settings used for the headline fits: 25,000 iterations,
    10,000 burn-in, keep every 3rd draw (5,000 stored)."""
    return ChainConfig(**{"iterations": 25_000, "burn_in": 10_000, "thin": 3,
                          **overrides})


def ensemble_config(**overrides) -> ChainConfig:
    """Multi-chain settings: 25 chains with prior-draw initialization,
    5,000 burn-in and 4,000 kept draws each (100,000 pooled)."""
    return ChainConfig(**{"iterations": 9_000, "burn_in": 5_000, "thin": 1,
                          "n_chains": 25, "init": "prior", **overrides})


@dataclass
class ChainOutput:
    """Thinned posterior draws plus per-draw per-unit log-likelihoods.

    Cluster-level parameters are stored expanded to per-unit values, so all
    arrays are indexed by the panel's unit order and survive label switching.
    """

    unit_ids: list
    times: list
    s: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    rho: np.ndarray
    alpha: np.ndarray
    k: np.ndarray
    loglik: np.ndarray
    accept_xi: float
    accept_rho: float
    config: ChainConfig | None = None
    chain_index: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.s.shape[0]

    def save(self, out_dir) -> None:
        """Serialize to a directory: ``meta`` (key = value text) plus one
        columnar CSV per parameter group and ``loglik.csv``."""
        os.makedirs(out_dir, exist_ok=True)
        units = [str(u) for u in self.unit_ids]
        times = [str(t) for t in self.times]
        for name in units + times:
            if "," in name or ":" in name:
                raise ValueError(f"label {name!r} cannot contain ',' or ':'")

        meta = dict(self.meta)
        meta.update({
            "version": __version__,
            "chain_index": self.chain_index,
            "n_draws": self.n_draws,
            "n_units": len(units),
            "n_times": len(times),
            "n_predictors": self.beta.shape[2] - 1,
            "accept_xi": repr(self.accept_xi),
            "accept_rho": repr(self.accept_rho),
        })
        if self.config is not None:
            cfg = self.config
            for name in ("iterations", "burn_in", "thin", "seed", "n_aux",
                         "a_sigma2", "b_sigma2", "a_tau2", "b_tau2",
                         "alpha_rho", "beta_rho", "a_alpha", "b_alpha",
                         "a_xi", "b_xi", "mh_step_xi", "mh_step_rho",
                         "adapt", "n_chains", "init"):
                meta[name] = getattr(cfg, name)
        with open(os.path.join(out_dir, "meta"), "w", encoding="utf-8") as fh:
            for key, val in meta.items():
                fh.write(f"{key} = {val}\n")

        _write_csv(os.path.join(out_dir, "allocations.csv"), units,
                   self.s + 1, "%d")
        coef_names = ["intercept"] + [f"x{k}" for k in range(1, self.beta.shape[2])]
        beta_cols = [f"{u}:{c}" for u in units for c in coef_names]
        _write_csv(os.path.join(out_dir, "beta.csv"), beta_cols,
                   self.beta.reshape(self.n_draws, -1), "%.17g")
        _write_csv(os.path.join(out_dir, "xi.csv"), units, self.xi, "%.17g")
        w_cols = [f"{u}:{t}" for u in units for t in times]
        _write_csv(os.path.join(out_dir, "w.csv"), w_cols,
                   self.w.reshape(self.n_draws, -1), "%.17g")
        scalars = np.column_stack([self.sigma2, self.tau2, self.rho,
                                   self.alpha, self.k])
        _write_csv(os.path.join(out_dir, "scalars.csv"),
                   ["sigma2", "tau2", "rho", "alpha", "k"], scalars, "%.17g")
        _write_csv(os.path.join(out_dir, "loglik.csv"), units,
                   self.loglik, "%.17g")

    @classmethod
    def load(cls, out_dir) -> "ChainOutput":
        """Read a directory written by :meth:`save` (config echo stays in
        ``meta``; the structured ``config`` field is not reconstructed)."""
        meta: dict = {}
        with open(os.path.join(out_dir, "meta"), encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    key, val = line.split("=", 1)
                    meta[key.strip()] = val.strip()
        units_s, s = _read_csv(os.path.join(out_dir, "allocations.csv"))
        unit_ids = units_s
        beta_cols, beta_flat = _read_csv(os.path.join(out_dir, "beta.csv"))
        n_draws = s.shape[0]
        n_units = len(unit_ids)
        p1 = len(beta_cols) // n_units
        w_cols, w_flat = _read_csv(os.path.join(out_dir, "w.csv"))
        times = [c.split(":", 1)[1] for c in w_cols[: len(w_cols) // n_units]]
        _, xi = _read_csv(os.path.join(out_dir, "xi.csv"))
        _, scalars = _read_csv(os.path.join(out_dir, "scalars.csv"))
        _, loglik = _read_csv(os.path.join(out_dir, "loglik.csv"))
        return cls(
            unit_ids=unit_ids,
            times=times,
            s=s.astype(int) - 1,
            beta=beta_flat.reshape(n_draws, n_units, p1),
            xi=xi,
            w=w_flat.reshape(n_draws, n_units, len(times)),
            sigma2=scalars[:, 0],
            tau2=scalars[:, 1],
            rho=scalars[:, 2],
            alpha=scalars[:, 3],
            k=scalars[:, 4].astype(int),
            loglik=loglik,
            accept_xi=float(meta.get("accept_xi", "nan")),
            accept_rho=float(meta.get("accept_rho", "nan")),
            config=None,
            chain_index=int(meta.get("chain_index", 0)),
            meta=meta,
        )


def _write_csv(path, header, array, fmt) -> None:
    array = np.atleast_2d(np.asarray(array))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, array, fmt=fmt, delimiter=",")


def _read_csv(path) -> tuple[list, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def merge_chain_outputs(outputs: list) -> ChainOutput:
    """Pool the draws of several chains over the same data (draw-concatenation)."""
    if not outputs:
        raise ValueError("no chain outputs to merge")
    first = outputs[0]
    cat = lambda name: np.concatenate([getattr(o, name) for o in outputs])
    return ChainOutput(
        unit_ids=first.unit_ids,
        times=first.times,
        s=cat("s"), beta=cat("beta"), xi=cat("xi"), w=cat("w"),
        sigma2=cat("sigma2"), tau2=cat("tau2"), rho=cat("rho"),
        alpha=cat("alpha"), k=cat("k"), loglik=cat("loglik"),
        accept_xi=float(np.mean([o.accept_xi for o in outputs])),
        accept_rho=float(np.mean([o.accept_rho for o in outputs])),
        config=first.config,
        chain_index=-1,
    )


def update_sigma2(
    y: np.ndarray,
    fitted: np.ndarray,
    w: np.ndarray,
    prior: tuple[float, float],
    rng: np.random.Generator,
) -> float:
    """Inverse-gamma draw of the observation variance given the residuals."""
    a, b = prior
    resid = y - fitted - w
    shape = a + y.size / 2.0
    scale = b + 0.5 * float(np.sum(resid * resid))
    return float(1.0 / rng.gamma(shape, 1.0 / scale))


def update_tau2(
    w: np.ndarray,
    xi_units: np.ndarray,
    q: BandedSPD,
    prior: tuple[float, float],
    rng: np.random.Generator,
) -> float:
    """Inverse-gamma draw of the effects scale from the AR residual quadratic form."""
    a, b = prior
    shape = a + w.size / 2.0
    scale = b + 0.5 * gmrf_residual_quad_form(w, xi_units, q)
    return float(1.0 / rng.gamma(shape, 1.0 / scale))


def rho_log_posterior(
    rho: float,
    w: np.ndarray,
    xi_units: np.ndarray,
    tau2: float,
    graph: AdjacencyGraph,
    prior: tuple[float, float],
    q: BandedSPD | None = None,
    prior_only: bool = False,
) -> tuple[float, BandedSPD]:
    """Unnormalized log full conditional of the spatial dependence parameter.

    Beta(a, b) prior density times |Q(rho)|^{T/2} times the Gaussian kernel
    exp(-S(rho) / (2 tau^2)), S being the AR residual quadratic form.  Also
    returns the Leroux precision built for ``rho`` so callers can reuse it.
    """
    a, b = prior
    if q is None:
        q = leroux_precision(rho, graph)
    val = (a - 1.0) * np.log(rho) + (b - 1.0) * np.log1p(-rho)
    if not prior_only:
        n_times = w.shape[1]
        val += 0.5 * n_times * factor_logdet(band_cholesky(q))
        val -= 0.5 * gmrf_residual_quad_form(w, xi_units, q) / tau2
    return float(val), q


def update_rho(
    rho: float,
    w: np.ndarray,
    xi_units: np.ndarray,
    tau2: float,
    graph: AdjacencyGraph,
    q: BandedSPD,
    prior: tuple[float, float],
    step: float,
    rng: np.random.Generator,
    prior_only: bool = False,
) -> tuple[float, BandedSPD, bool]:
    """Random-walk Metropolis step for rho on the logit scale.

    Returns (rho, Q(rho), accepted); Q is rebuilt only on acceptance.
    """
    z_new = logit(rho) + step * rng.standard_normal()
    rho_new = float(expit(z_new))
    if not 0.0 < rho_new < 1.0:  # expit underflow at extreme proposals
        rng.random()
        return rho, q, False
    cur, _ = rho_log_posterior(rho, w, xi_units, tau2, graph, prior, q=q,
                               prior_only=prior_only)
    new, q_new = rho_log_posterior(rho_new, w, xi_units, tau2, graph, prior,
                                   prior_only=prior_only)
    log_ratio = (new + np.log(rho_new) + np.log1p(-rho_new)
                 - cur - np.log(rho) - np.log1p(-rho))
    if np.log(rng.random()) < log_ratio:
        return rho_new, q_new, True
    return rho, q, False


def _unit_logliks(y, fitted, w, sigma2) -> np.ndarray:
    resid = y - fitted - w
    n_times = y.shape[1]
    return (-0.5 * np.sum(resid * resid, axis=1) / sigma2
            - 0.5 * n_times * (_LOG2PI + np.log(sigma2)))


def _fitted_values(x: np.ndarray, cluster: ClusterState) -> np.ndarray:
    return np.einsum("itk,ik->it", x, cluster.beta_per_unit())


def draw_prior_allocations(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Sequential draw from the Polya urn over n units (canonical labels)."""
    s = np.zeros(n, dtype=int)
    k = 1
    for i in range(1, n):
        counts = np.bincount(s[:i], minlength=k).astype(float)
        probs = np.append(counts, alpha)
        probs /= probs.sum()
        s[i] = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        k = max(k, s[i] + 1)
    return s


def draw_from_prior(
    n_units: int,
    n_times: int,
    p: int,
    graph: AdjacencyGraph,
    config: ChainConfig,
    rng: np.random.Generator,
) -> tuple[ModelState, BandedSPD]:
    """Joint draw of all model parameters from their priors."""
    base = config.base_measure(p)
    alpha = float(rng.gamma(config.a_alpha, 1.0 / config.b_alpha))
    s = draw_prior_allocations(n_units, alpha, rng)
    k = int(s.max()) + 1
    betas = np.asarray([base.draw_beta(rng) for _ in range(k)])
    xis = np.asarray([base.draw_xi(rng) for _ in range(k)])
    cluster = ClusterState(s=s, betas=betas, xis=xis, alpha=alpha)
    sigma2 = float(1.0 / rng.gamma(config.a_sigma2, 1.0 / config.b_sigma2))
    tau2 = float(1.0 / rng.gamma(config.a_tau2, 1.0 / config.b_tau2))
    rho = float(rng.beta(config.alpha_rho, config.beta_rho))
    q = leroux_precision(rho, graph)
    w = sample_gmrf_prior(cluster.xi_per_unit(), tau2, q, n_times, rng)
    return ModelState(cluster=cluster, w=w, sigma2=sigma2, tau2=tau2, rho=rho), q


def simulate_observations(
    fitted: np.ndarray, w: np.ndarray, sigma2: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw the response given fitted values, effects, and the noise variance."""
    return fitted + w + np.sqrt(sigma2) * rng.standard_normal(fitted.shape)


def gibbs_sweep(
    state: ModelState,
    y: np.ndarray,
    x: np.ndarray,
    graph: AdjacencyGraph,
    q: BandedSPD,
    config: ChainConfig,
    rng: np.random.Generator,
    mh_step_xi: float | None = None,
    mh_step_rho: float | None = None,
    update_allocations: bool = True,
) -> tuple[ModelState, BandedSPD, dict]:
    """One full iteration of the sampler over all parameter blocks.

    ``y``, ``x`` and ``q`` must share one unit ordering (the graph's current
    labeling).  Returns the new state, the (possibly rebuilt) precision, and
    acceptance counts for the Metropolis sub-steps.
    """
    base = config.base_measure(x.shape[2] - 1)
    step_xi = config.mh_step_xi if mh_step_xi is None else mh_step_xi
    step_rho = config.mh_step_rho if mh_step_rho is None else mh_step_rho

    cluster = state.cluster
    if update_allocations:
        cluster = gibbs_allocations(cluster, y, x, state.w, state.sigma2,
                                    state.tau2, q, base, config.n_aux, rng)
    betas = update_cluster_betas(cluster, y, x, state.w, state.sigma2, base, rng)
    cluster = ClusterState(s=cluster.s, betas=betas, xis=cluster.xis,
                           alpha=cluster.alpha)
    xis, n_acc_xi = update_cluster_xis(cluster, state.w, state.tau2, q, base,
                                       step_xi, rng)
    alpha = update_concentration(cluster.alpha, cluster.n_clusters, len(cluster.s),
                                 (config.a_alpha, config.b_alpha), rng)
    cluster = ClusterState(s=cluster.s, betas=cluster.betas, xis=xis, alpha=alpha)

    fitted = _fitted_values(x, cluster)
    xi_units = cluster.xi_per_unit()
    psi, c = random_effects_full_conditional(y, fitted, xi_units, state.sigma2,
                                             state.tau2, q)
    w = sample_block_tridiagonal(psi, c, rng)
    sigma2 = update_sigma2(y, fitted, w, (config.a_sigma2, config.b_sigma2), rng)
    tau2 = update_tau2(w, xi_units, q, (config.a_tau2, config.b_tau2), rng)
    rho, q, rho_acc = update_rho(state.rho, w, xi_units, tau2, graph, q,
                                 (config.alpha_rho, config.beta_rho), step_rho, rng)
    new_state = ModelState(cluster=cluster, w=w, sigma2=sigma2, tau2=tau2, rho=rho)
    stats = {"xi_accepted": n_acc_xi, "xi_proposed": cluster.n_clusters,
             "rho_accepted": int(rho_acc)}
    return new_state, q, stats


def _initial_state(
    config: ChainConfig,
    n_units: int,
    n_times: int,
    p: int,
    graph: AdjacencyGraph,
    fixed: np.ndarray | None,
    rng: np.random.Generator,
) -> tuple[ModelState, BandedSPD]:
    if config.init == "prior":
        state, q = draw_from_prior(n_units, n_times, p, graph, config, rng)
        if fixed is not None:
            state = ModelState(
                cluster=_cluster_for_partition(fixed, config, p, rng),
                w=state.w, sigma2=state.sigma2, tau2=state.tau2, rho=state.rho)
        return state, q
    base = config.base_measure(p)
    if fixed is not None:
        cluster = _cluster_for_partition(fixed, config, p, rng)
    else:
        cluster = ClusterState(s=np.zeros(n_units, dtype=int),
                               betas=base.draw_beta(rng)[None, :],
                               xis=np.zeros(1), alpha=1.0)
    rho = 0.9
    q = leroux_precision(rho, graph)
    state = ModelState(cluster=cluster, w=np.zeros((n_units, n_times)),
                       sigma2=1.0, tau2=1.0, rho=rho)
    return state, q


def _cluster_for_partition(fixed, config, p, rng) -> ClusterState:
    base = config.base_measure(p)
    s, _ = canonicalize_labels(np.asarray(fixed, dtype=int))
    k = int(s.max()) + 1
    return ClusterState(s=s,
                        betas=np.asarray([base.draw_beta(rng) for _ in range(k)]),
                        xis=np.zeros(k), alpha=1.0)


def run_chain(
    data: PanelData,
    graph: AdjacencyGraph,
    config: ChainConfig,
    rng: np.random.Generator | None = None,
    chain_index: int = 0,
) -> ChainOutput:
    """Run one chain and return the thinned post-burn-in draws.

    The allocation sweep is skipped when ``config.fixed_partition`` is set
    (labels stay pinned; everything else is sampled).  Metropolis step sizes
    are adapted toward 0.3 acceptance during burn-in only, then frozen.
    """
    if graph.n != data.n_units:
        raise ValueError("graph and panel disagree on the number of units")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    order = reverse_cuthill_mckee(graph)
    graph_p = apply_permutation(graph, order)
    data_p = permute_panel(data, order)
    inverse = np.argsort(order)
    y, x = data_p.y, data_p.x
    n_units, n_times, p = data.n_units, data.n_times, data.n_predictors

    fixed = None
    if config.fixed_partition is not None:
        fixed = np.asarray(config.fixed_partition, dtype=int)
        if fixed.shape != (n_units,):
            raise ValueError("fixed_partition must assign every unit")
        fixed = fixed[order]

    state, q = _initial_state(config, n_units, n_times, p, graph_p, fixed, rng)

    n_stored = config.n_stored
    out_s = np.empty((n_stored, n_units), dtype=int)
    out_beta = np.empty((n_stored, n_units, p + 1))
    out_xi = np.empty((n_stored, n_units))
    out_w = np.empty((n_stored, n_units, n_times))
    out_scalars = {name: np.empty(n_stored) for name in
                   ("sigma2", "tau2", "rho", "alpha")}
    out_k = np.empty(n_stored, dtype=int)
    out_loglik = np.empty((n_stored, n_units))

    step_xi, step_rho = config.mh_step_xi, config.mh_step_rho
    acc = {"xi_accepted": 0, "xi_proposed": 0, "rho_accepted": 0, "rho_proposed": 0}
    stored = 0
    for it in range(1, config.iterations + 1):
        try:
            state, q, stats = gibbs_sweep(
                state, y, x, graph_p, q, config, rng,
                mh_step_xi=step_xi, mh_step_rho=step_rho,
                update_allocations=fixed is None)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            raise NumericalError(f"MCMC iteration {it} failed: {e}") from e

        if it <= config.burn_in:
            if config.adapt:
                gain = it ** -0.6
                if stats["xi_proposed"]:
                    rate = stats["xi_accepted"] / stats["xi_proposed"]
                    step_xi = float(np.clip(step_xi * np.exp(gain * (rate - 0.3)),
                                            1e-3, 1e3))
                step_rho = float(np.clip(
                    step_rho * np.exp(gain * (stats["rho_accepted"] - 0.3)),
                    1e-3, 1e3))
        else:
            acc["xi_accepted"] += stats["xi_accepted"]
            acc["xi_proposed"] += stats["xi_proposed"]
            acc["rho_accepted"] += stats["rho_accepted"]
            acc["rho_proposed"] += 1
            offset = it - config.burn_in
            if offset % config.thin == 0 and stored < n_stored:
                cluster = state.cluster
                s_orig, label_order = canonicalize_labels(cluster.s[inverse])
                out_s[stored] = s_orig
                out_beta[stored] = cluster.beta_per_unit()[inverse]
                out_xi[stored] = cluster.xi_per_unit()[inverse]
                out_w[stored] = state.w[inverse]
                out_scalars["sigma2"][stored] = state.sigma2
                out_scalars["tau2"][stored] = state.tau2
                out_scalars["rho"][stored] = state.rho
                out_scalars["alpha"][stored] = cluster.alpha
                out_k[stored] = cluster.n_clusters
                fitted = _fitted_values(x, cluster)
                out_loglik[stored] = _unit_logliks(y, fitted, state.w,
                                                   state.sigma2)[inverse]
                stored += 1

    return ChainOutput(
        unit_ids=list(data.unit_ids),
        times=list(data.times),
        s=out_s, beta=out_beta, xi=out_xi, w=out_w,
        sigma2=out_scalars["sigma2"], tau2=out_scalars["tau2"],
        rho=out_scalars["rho"], alpha=out_scalars["alpha"],
        k=out_k, loglik=out_loglik,
        accept_xi=acc["xi_accepted"] / max(acc["xi_proposed"], 1),
        accept_rho=acc["rho_accepted"] / max(acc["rho_proposed"], 1),
        config=config,
        chain_index=chain_index,
        meta={"mh_step_xi_final": step_xi, "mh_step_rho_final": step_rho},
    )


def run_conditional_on_partition(
    data: PanelData, graph: AdjacencyGraph, config: ChainConfig
) -> ChainOutput:
    """Re-run the chain with the allocation labels pinned to a fixed partition."""
    if config.fixed_partition is None:
        raise ValueError("config.fixed_partition is required")
    return run_chain(data, graph, config)


def run_chains(
    data: PanelData,
    graph: AdjacencyGraph,
    config: ChainConfig,
    workers: int | None = None,
) -> list:
    """Run ``config.n_chains`` independent chains with streams derived from
    the root seed.  ``workers`` (default: STCLUST_WORKERS env var, else 1)
    selects process-level parallelism."""
    children = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    jobs = [(data, graph, replace(config, n_chains=1), child, idx)
            for idx, child in enumerate(children)]
    if workers is None:
        workers = int(os.environ.get("STCLUST_WORKERS", "1"))
    if workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_single_seq, jobs))
    return [_run_single_seq(job) for job in jobs]


def _run_single_seq(args):
    data, graph, config, seed_seq, index = args
    rng = np.random.default_rng(seed_seq)
    return run_chain(data, graph, config, rng=rng, chain_index=index)
