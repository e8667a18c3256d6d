"""Dirichlet-process clustering of areal units.

Units are allocated to clusters sharing a regression vector beta and an
autoregressive coefficient xi.  Allocations follow a Polya-urn scheme and are
resampled by a Gibbs sweep with auxiliary parameters drawn from the base
measure; emptied clusters return their parameters to the auxiliary pool and a
consumed auxiliary slot is refreshed from the base measure, so candidate
parameters are recycled instead of redrawn for every unit.

Labels are kept canonical throughout: integer labels 0..K-1 ordered by first
occurrence along the unit axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln

from .banded import BandedSPD
from .gmrf import conditional_site_density

_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class BaseMeasure:
    """Base measure of the clustering prior: N(mu0, Sigma0) for beta and a
    Beta(a_xi, b_xi) rescaled to (-1, 1) for xi."""

    mu0: np.ndarray
    sigma0: np.ndarray
    a_xi: float = 1.0
    b_xi: float = 1.0
    _sigma0_inv: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        self.sigma0 = np.atleast_2d(np.asarray(self.sigma0, dtype=float))
        d = self.mu0.shape[0]
        if self.sigma0.shape != (d, d):
            raise ValueError("sigma0 must be square and match mu0")
        if self.a_xi <= 0 or self.b_xi <= 0:
            raise ValueError("xi shape parameters must be positive")
        np.linalg.cholesky(self.sigma0)  # fails if not SPD

    @classmethod
    def default(cls, p: int) -> "BaseMeasure":
        """Weakly informative default: standard normal beta, uniform xi."""
        return cls(mu0=np.zeros(p + 1), sigma0=np.eye(p + 1))

    @property
    def sigma0_inv(self) -> np.ndarray:
        if self._sigma0_inv is None:
            self._sigma0_inv = np.linalg.inv(self.sigma0)
        return self._sigma0_inv

    def draw_beta(self, rng: np.random.Generator, size: int | None = None):
        return rng.multivariate_normal(self.mu0, self.sigma0, size=size,
                                       method="cholesky")

    def draw_xi(self, rng: np.random.Generator, size: int | None = None):
        return 2.0 * rng.beta(self.a_xi, self.b_xi, size=size) - 1.0

    def log_xi_prior(self, xi: float) -> float:
        """Log-density of the (-1, 1) beta prior, including the 1/2 Jacobian
        of the affine map from (0, 1)."""
        if not -1.0 < xi < 1.0:
            return -np.inf
        u = (xi + 1.0) / 2.0
        return (
            (self.a_xi - 1.0) * np.log(u)
            + (self.b_xi - 1.0) * np.log1p(-u)
            - betaln(self.a_xi, self.b_xi)
            - np.log(2.0)
        )


@dataclass
class ClusterState:
    """Allocation labels plus the per-cluster unique parameter values."""

    s: np.ndarray
    betas: np.ndarray
    xis: np.ndarray
    alpha: float

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=int)
        self.betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        self.xis = np.atleast_1d(np.asarray(self.xis, dtype=float))
        k = self.n_clusters
        if self.betas.shape[0] != k or self.xis.shape[0] != k:
            raise ValueError(f"need exactly {k} unique beta/xi values")
        if not _is_canonical(self.s):
            raise ValueError("labels must be canonical (0..K-1, first-occurrence order)")
        if np.any(np.abs(self.xis) >= 1.0):
            raise ValueError("xi values must lie strictly inside (-1, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def n_units(self) -> int:
        return self.s.shape[0]

    @property
    def n_clusters(self) -> int:
        return int(self.s.max()) + 1

    def xi_per_unit(self) -> np.ndarray:
        return self.xis[self.s]

    def beta_per_unit(self) -> np.ndarray:
        return self.betas[self.s]

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.s, minlength=self.n_clusters)


def _is_canonical(s: np.ndarray) -> bool:
    seen = -1
    for label in s:
        if label > seen + 1 or label < 0:
            return False
        seen = max(seen, label)
    return True


def canonicalize_labels(s: np.ndarray) -> tuple[np.ndarray, list]:
    """Relabel to first-occurrence order.

    Returns the canonical labels and the list mapping new label -> old label
    (useful for permuting per-cluster parameter arrays alongside).
    """
    s = np.asarray(s, dtype=int)
    mapping: dict = {}
    order: list = []
    out = np.empty_like(s)
    for pos, label in enumerate(s):
        if label not in mapping:
            mapping[label] = len(order)
            order.append(int(label))
        out[pos] = mapping[label]
    return out, order


def polya_urn_log_prior(s: np.ndarray, alpha: float) -> float:
    """Log prior probability of a canonical allocation vector under the urn.

    The first unit starts cluster 0 with probability one; unit i joins an
    existing cluster j with probability n_j / (i + alpha) and opens a new one
    with probability alpha / (i + alpha), n_j counting earlier members.
    """
    s = np.asarray(s, dtype=int)
    if not _is_canonical(s):
        raise ValueError("allocation vector must be canonical")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    counts = np.zeros(s.max() + 1)
    counts[0] = 1.0
    out = 0.0
    k = 1
    for i in range(1, len(s)):
        denom = i + alpha
        j = s[i]
        if j == k:
            out += np.log(alpha / denom)
            k += 1
        else:
            out += np.log(counts[j] / denom)
        counts[j] += 1.0
    return float(out)


def _gaussian_row_loglik(resid2_sum: np.ndarray, n: int, var: float) -> np.ndarray:
    return -0.5 * resid2_sum / var - 0.5 * n * (_LOG2PI + np.log(var))


def gibbs_allocations(
    cluster: ClusterState,
    y: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    sigma2: float,
    tau2: float,
    q: BandedSPD,
    base: BaseMeasure,
    n_aux: int,
    rng: np.random.Generator,
    prior_only: bool = False,
) -> ClusterState:
    """One full resampling sweep of the allocation labels.

    For each unit in fixed order 0..I-1 the unit is removed, every existing
    cluster is scored by its urn weight times the observation likelihood and
    the conditional density of the unit's effects row, and each of ``n_aux``
    auxiliary parameter pairs is scored with weight alpha / n_aux.  With
    ``prior_only`` the likelihood factors are dropped (test hook: the sweep
    then targets the urn prior exactly).

    Returns a new canonical :class:`ClusterState`; the input is not modified.
    """
    if n_aux < 1:
        raise ValueError("n_aux must be at least 1")
    n_units, n_times = y.shape
    s = cluster.s.copy()
    betas = [b.copy() for b in cluster.betas]
    xis = list(cluster.xis)
    sizes = list(np.bincount(s, minlength=len(xis)).astype(float))
    alpha = cluster.alpha
    xi_units = cluster.xi_per_unit().copy()

    pool_betas = list(base.draw_beta(rng, size=n_aux))
    pool_xis = list(base.draw_xi(rng, size=n_aux))

    q_diag = q.diagonal()
    rows = q.offdiag_rows()
    w_prev = np.zeros_like(w)
    w_prev[:, 1:] = w[:, :-1]
    log_aux_scale = np.log(alpha / n_aux)

    for i in range(n_units):
        j_old = s[i]
        s[i] = -1
        sizes[j_old] -= 1.0
        if sizes[j_old] == 0.0:
            slot = int(rng.integers(n_aux))
            pool_betas[slot] = betas[j_old]
            pool_xis[slot] = xis[j_old]
            del betas[j_old], xis[j_old], sizes[j_old]
            s[s > j_old] -= 1

        k = len(sizes)
        cand_xis = np.asarray(xis + pool_xis)
        logits = np.concatenate(
            [np.log(np.asarray(sizes)), np.full(n_aux, log_aux_scale)]
        )
        if not prior_only:
            cand_betas = np.asarray(betas + pool_betas)
            resid = (y[i] - w[i])[None, :] - cand_betas @ x[i].T
            logits = logits + _gaussian_row_loglik(
                np.sum(resid * resid, axis=1), n_times, sigma2
            )
            idx, vals = rows[i]
            resid_nb = w[idx] - xi_units[idx, None] * w_prev[idx]
            g = -(vals[:, None] * resid_nb).sum(axis=0) / q_diag[i]
            mu = cand_xis[:, None] * w_prev[i][None, :] + g[None, :]
            dev = w[i][None, :] - mu
            logits = logits + _gaussian_row_loglik(
                np.sum(dev * dev, axis=1), n_times, tau2 / q_diag[i]
            )

        probs = np.exp(logits - logits.max())
        cum = np.cumsum(probs)
        choice = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        choice = min(choice, len(cum) - 1)

        if choice < k:
            s[i] = choice
            sizes[choice] += 1.0
            xi_units[i] = xis[choice]
        else:
            slot = choice - k
            s[i] = k
            betas.append(pool_betas[slot])
            xis.append(pool_xis[slot])
            sizes.append(1.0)
            xi_units[i] = pool_xis[slot]
            pool_betas[slot] = base.draw_beta(rng)
            pool_xis[slot] = base.draw_xi(rng)

    s_canon, order = canonicalize_labels(s)
    return ClusterState(
        s=s_canon,
        betas=np.asarray([betas[j] for j in order]),
        xis=np.asarray([xis[j] for j in order]),
        alpha=alpha,
    )


def update_cluster_betas(
    cluster: ClusterState,
    y: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    sigma2: float,
    base: BaseMeasure,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate Gaussian draw of every cluster's regression vector.

    Stacking the T rows of each member unit, the posterior for cluster j is
    N(m_j, S_j) with S_j^{-1} = Sigma0^{-1} + sum_i x_i' x_i / sigma^2 and
    m_j = S_j (Sigma0^{-1} mu0 + sum_i x_i' (y_i - w_i) / sigma^2).
    """
    k = cluster.n_clusters
    p1 = x.shape[2]
    out = np.empty((k, p1))
    prior_prec = base.sigma0_inv
    prior_mean_term = prior_prec @ base.mu0
    resid = y - w
    for j in range(k):
        members = np.nonzero(cluster.s == j)[0]
        xj = x[members].reshape(-1, p1)
        rj = resid[members].reshape(-1)
        prec = prior_prec + xj.T @ xj / sigma2
        rhs = prior_mean_term + xj.T @ rj / sigma2
        try:
            lower = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as e:
            raise ValueError(f"non-SPD posterior precision for cluster {j}: {e}") from e
        mean = _chol_solve(lower, rhs)
        out[j] = mean + np.linalg.solve(lower.T, rng.standard_normal(p1))
    return out


def _chol_solve(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(lower.T, np.linalg.solve(lower, rhs))


def xi_quadratic_coefficients(
    cluster_mask: np.ndarray,
    xi_units: np.ndarray,
    w: np.ndarray,
    q: BandedSPD,
) -> tuple[float, float]:
    """Coefficients (b, c) such that the log full conditional of a cluster's
    xi is ``log prior + (b * xi - c * xi^2 / 2) / tau^2`` up to a constant.

    Writing the autoregressive residuals with the cluster's own entries
    separated out, b = sum_t u_{t-1}' Q r_t and c = sum_t u_{t-1}' Q u_{t-1}
    where u masks w to the cluster and r carries the other units' terms.
    """
    w0 = w[:, :-1]
    background = np.where(cluster_mask, 0.0, xi_units)
    r = w[:, 1:] - background[:, None] * w0
    u = np.where(cluster_mask, 1.0, 0.0)[:, None] * w0
    qu = q.matvec(u)
    return float(np.sum(u * q.matvec(r))), float(np.sum(u * qu))


def update_cluster_xis(
    cluster: ClusterState,
    w: np.ndarray,
    tau2: float,
    q: BandedSPD,
    base: BaseMeasure,
    step: float,
    rng: np.random.Generator,
    prior_only: bool = False,
) -> tuple[np.ndarray, int]:
    """Random-walk Metropolis update of every cluster's xi on the atanh scale.

    The proposal ``atanh(xi') = atanh(xi) + step * eps`` keeps xi inside
    (-1, 1); the acceptance ratio includes the tanh change-of-variables term
    ``log(1 - xi^2)``.  Returns the new values and the number of accepted
    moves.  ``prior_only`` drops the likelihood factor (test hook).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xis = cluster.xis.copy()
    xi_units = cluster.xi_per_unit().copy()
    accepted = 0
    for j in range(cluster.n_clusters):
        if prior_only:
            b_coef, c_coef = 0.0, 0.0
        else:
            b_coef, c_coef = xi_quadratic_coefficients(
                cluster.s == j, xi_units, w, q
            )

        def log_target(xi: float) -> float:
            val = base.log_xi_prior(xi)
            if not prior_only:
                val += (b_coef * xi - 0.5 * c_coef * xi * xi) / tau2
            return val

        z = np.arctanh(xis[j])
        z_new = z + step * rng.standard_normal()
        xi_new = np.tanh(z_new)
        log_ratio = (
            log_target(xi_new)
            + np.log1p(-xi_new * xi_new)
            - log_target(xis[j])
            - np.log1p(-xis[j] * xis[j])
        )
        if np.log(rng.random()) < log_ratio:
            xis[j] = xi_new
            xi_units[cluster.s == j] = xi_new
            accepted += 1
    return xis, accepted


def update_concentration(
    alpha: float,
    k: int,
    n: int,
    prior: tuple[float, float],
    rng: np.random.Generator,
) -> float:
    """Auxiliary-variable update of the concentration parameter.

    Draws x ~ Beta(alpha + 1, n) and then alpha from a two-component gamma
    mixture with odds (a + k - 1) / (n (b - log x)) on the higher-shape
    component, which leaves the Gamma(a, b)-prior posterior given k clusters
    invariant.
    """
    if k < 1 or n < 1:
        raise ValueError("need k >= 1 and n >= 1")
    a, b = prior
    x = rng.beta(alpha + 1.0, n)
    rate = b - np.log(x)
    odds = (a + k - 1.0) / (n * rate)
    shape = a + k if rng.random() < odds / (1.0 + odds) else a + k - 1.0
    return float(rng.gamma(shape, 1.0 / rate))
