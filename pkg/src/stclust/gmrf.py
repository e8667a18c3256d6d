"""Gaussian Markov random field machinery for the spatio-temporal effects.

The latent effects ``w`` form an (I, T) matrix whose joint law, induced by a
vector-autoregressive decomposition with spatial precision Q, is a zero-mean
Gaussian with block-tridiagonal precision.  This module builds that joint
precision, the data-conditioned precision and linear term, and draws exact
samples with a forward/backward recursion on the block Cholesky factors.

Block convention: for ``w`` stacked time-major (w_1, ..., w_T), the
super-diagonal block (t, t+1) is ``-diag(xi) Q / tau^2``.  The orientation is
fixed by requiring ``w' Omega w`` to match the sequential autoregressive
density; swapping it is wrong whenever xi varies across units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .banded import BandedSPD, band_back_solve, band_cholesky


@dataclass
class BlockTridiagonal:
    """Symmetric block-tridiagonal matrix with T banded I x I diagonal blocks.

    ``off_blocks[t]`` is the dense super-diagonal block (t, t+1); the
    sub-diagonal block is its transpose.  Diagonal blocks share Q's bandwidth;
    off blocks are band-supported but stored dense because the sampling
    recursion fills them in anyway.
    """

    diag_blocks: list
    off_blocks: list

    def __post_init__(self):
        if len(self.off_blocks) != len(self.diag_blocks) - 1:
            raise ValueError("need exactly T - 1 off-diagonal blocks")
        n = self.diag_blocks[0].n
        for blk in self.diag_blocks:
            if blk.n != n:
                raise ValueError("diagonal blocks must share one dimension")
        for blk in self.off_blocks:
            if blk.shape != (n, n):
                raise ValueError("off blocks must be I x I")

    @property
    def n_blocks(self) -> int:
        return len(self.diag_blocks)

    @property
    def block_dim(self) -> int:
        return self.diag_blocks[0].n

    def to_dense(self) -> np.ndarray:
        """Expand to a dense (T*I, T*I) matrix, time-major."""
        t_blocks, n = self.n_blocks, self.block_dim
        out = np.zeros((t_blocks * n, t_blocks * n))
        for t in range(t_blocks):
            sl = slice(t * n, (t + 1) * n)
            out[sl, sl] = self.diag_blocks[t].to_dense()
            if t + 1 < t_blocks:
                sl1 = slice((t + 1) * n, (t + 2) * n)
                out[sl, sl1] = self.off_blocks[t]
                out[sl1, sl] = self.off_blocks[t].T
        return out


def _ar_scaled_bands(q: BandedSPD, xi: np.ndarray) -> np.ndarray:
    """Band storage of diag(xi) Q diag(xi)."""
    bands = np.empty_like(q.bands)
    n = q.n
    for d in range(q.bandwidth + 1):
        bands[d, : n - d] = q.bands[d, : n - d] * xi[d:] * xi[: n - d]
        bands[d, n - d:] = 0.0
    return bands


def joint_precision_omega(
    xi: np.ndarray, tau2: float, q: BandedSPD, n_times: int
) -> BlockTridiagonal:
    """Joint precision of the stacked effects (w_1, ..., w_T).

    Diagonal blocks are (Q + diag(xi) Q diag(xi)) / tau^2 except the last,
    which is Q / tau^2; super-diagonal blocks are -diag(xi) Q / tau^2.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (q.n,):
        raise ValueError(f"xi must have length {q.n}")
    if n_times < 1:
        raise ValueError("need at least one time point")
    inner_bands = (q.bands + _ar_scaled_bands(q, xi)) / tau2
    inner = BandedSPD(q.n, q.bandwidth, inner_bands)
    last = BandedSPD(q.n, q.bandwidth, q.bands / tau2)
    diag_blocks = [inner] * (n_times - 1) + [last]
    off = -xi[:, None] * q.to_dense() / tau2
    return BlockTridiagonal(diag_blocks=diag_blocks, off_blocks=[off] * (n_times - 1))


def random_effects_full_conditional(
    y: np.ndarray,
    fitted: np.ndarray,
    xi: np.ndarray,
    sigma2: float,
    tau2: float,
    q: BandedSPD,
) -> tuple[BlockTridiagonal, np.ndarray]:
    """Precision and linear term of the effects' Gaussian full conditional.

    The conditional is N(Psi^{-1} c, Psi^{-1}) with Psi equal to the joint
    prior precision plus I/sigma^2 on every diagonal block, and
    ``c[:, t] = (y[:, t] - fitted[:, t]) / sigma^2``.
    """
    n_units, n_times = y.shape
    omega = joint_precision_omega(xi, tau2, q, n_times)
    diag_blocks = []
    for blk in omega.diag_blocks:
        bands = blk.bands.copy()
        bands[0] = bands[0] + 1.0 / sigma2
        diag_blocks.append(BandedSPD(blk.n, blk.bandwidth, bands))
    c = (y - fitted) / sigma2
    return BlockTridiagonal(diag_blocks, omega.off_blocks), c


def sample_block_tridiagonal(
    psi: BlockTridiagonal, c: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Exact draw from N(Psi^{-1} c, Psi^{-1}) for block-tridiagonal Psi.

    Forward pass: factor the conditional precisions
    ``S_t = D_t - U_{t-1}' S_{t-1}^{-1} U_{t-1}`` and accumulate the
    forward means ``m_t = S_t^{-1} (c_t - U_{t-1}' m_{t-1})``.  Backward
    pass: ``w_T = m_T + L_T^{-T} z_T`` and
    ``w_t = m_t + L_t^{-T} (z_t - L_t^{-1} U_t w_{t+1})``.

    ``c`` and the returned draw have shape (I, T).
    """
    t_blocks, n = psi.n_blocks, psi.block_dim
    if c.shape != (n, t_blocks):
        raise ValueError(f"c must have shape ({n}, {t_blocks})")
    factors = []
    means = []
    try:
        for t in range(t_blocks):
            dense = psi.diag_blocks[t].to_dense()
            rhs = c[:, t]
            if t > 0:
                u_prev = psi.off_blocks[t - 1]
                x = solve_triangular(factors[-1], u_prev, lower=True, check_finite=False)
                dense = dense - x.T @ x
                rhs = rhs - u_prev.T @ means[-1]
            lower = np.linalg.cholesky(dense)
            m = solve_triangular(
                lower.T,
                solve_triangular(lower, rhs, lower=True, check_finite=False),
                lower=False, check_finite=False,
            )
            factors.append(lower)
            means.append(m)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"full-conditional precision not positive definite: {e}") from e

    w = np.empty((n, t_blocks))
    for t in range(t_blocks - 1, -1, -1):
        z = rng.standard_normal(n)
        if t < t_blocks - 1:
            z = z - solve_triangular(
                factors[t], psi.off_blocks[t] @ w[:, t + 1], lower=True,
                check_finite=False,
            )
        w[:, t] = means[t] + solve_triangular(factors[t].T, z, lower=False,
                                              check_finite=False)
    return w


def conditional_site_density(
    i: int,
    w: np.ndarray,
    xi_i: float,
    xi_units: np.ndarray,
    tau2: float,
    q: BandedSPD,
) -> float:
    """Log-density of row i of the effects given every other row.

    Equals sum_t log N(w_it | mu_it, tau^2 / Q_ii) with
    ``mu_it = xi_i w_{i,t-1} - (1/Q_ii) sum_{k != i} Q_ik (w_kt - xi_k w_{k,t-1})``
    and no autoregressive term at t = 1, matching the prior on w_1.  The
    i-th entry of ``xi_units`` is ignored (``xi_i`` takes its place), so the
    same call evaluates candidate autoregressive coefficients for unit i.
    """
    n_times = w.shape[1]
    q_ii = q.diagonal()[i]
    idx, vals = q.offdiag_row(i)
    w_prev = np.zeros((len(idx), n_times))
    w_prev[:, 1:] = w[idx, :-1]
    resid_nb = w[idx] - xi_units[idx, None] * w_prev
    g = -(vals[:, None] * resid_nb).sum(axis=0) / q_ii
    own_prev = np.concatenate(([0.0], w[i, :-1]))
    mu = xi_i * own_prev + g
    var = tau2 / q_ii
    dev = w[i] - mu
    return float(
        -0.5 * n_times * np.log(2.0 * np.pi * var) - 0.5 * np.sum(dev * dev) / var
    )


def gmrf_residual_quad_form(w: np.ndarray, xi_units: np.ndarray, q: BandedSPD) -> float:
    """w_1' Q w_1 + sum_{t>=2} (w_t - diag(xi) w_{t-1})' Q (w_t - diag(xi) w_{t-1})."""
    resid = np.empty_like(w)
    resid[:, 0] = w[:, 0]
    resid[:, 1:] = w[:, 1:] - xi_units[:, None] * w[:, :-1]
    return q.quad_form(resid)


def sample_gmrf_prior(
    xi_units: np.ndarray,
    tau2: float,
    q: BandedSPD,
    n_times: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Forward-simulate the effects: w_1 ~ N(0, tau^2 Q^{-1}), then the
    unit-wise AR(1) recursion with N(0, tau^2 Q^{-1}) innovations."""
    factor = band_cholesky(q)
    scale = np.sqrt(tau2)
    w = np.empty((q.n, n_times))
    for t in range(n_times):
        innov = scale * band_back_solve(factor, rng.standard_normal(q.n))
        w[:, t] = innov if t == 0 else xi_units * w[:, t - 1] + innov
    return w
