"""
Gaussian mean estimation with a meta parameter.

Each task i has samples with mean mu_i (drawn from N(0, sigma_tau^2 I_d)) and
covariance sigma_z^2 I_d. The loss is
    loss(u, w, z) = alpha * ||z - w||^2 + (1 - alpha) * ||u - w||^2
and the prior is flat, so the meta Gibbs posterior over (W_1..W_m, U) is
Gaussian with a data-independent precision.
"""

import logging
from typing import NamedTuple, Tuple

import numpy as np

from src.config import MC_BLOCK_SIZE, MIN_TRIALS
from src.errors import DegenerateAlpha, ValidationError
from src.gibbs_core import QuadraticEnergy, gaussian_gibbs
from src.info_measures import ChannelInfo, gaussian_channel_info
from src.meta_env import Role, substream
from src.models import GaussianChannel, MeanEstConfig, PosteriorParams, SampleLaw

logger = logging.getLogger(__name__)


class ChannelDecomposition(NamedTuple):
    A: np.ndarray
    aat: np.ndarray
    noise_cov: np.ndarray
    trace_value: float
    info: ChannelInfo


def _require_open_alpha(cfg: MeanEstConfig) -> None:
    if cfg.alpha <= 0.0 or cfg.alpha >= 1.0:
        raise DegenerateAlpha(f"The joint posterior is improper at alpha={cfg.alpha}")


def precision_shape(cfg: MeanEstConfig) -> np.ndarray:
    """Q of the quadratic energy, ordered (W_1..W_m, U); the posterior precision is gamma * Q."""
    m, a = cfg.m, cfg.alpha
    core = np.eye(m + 1)
    core[:m, m] = a - 1.0
    core[m, :m] = a - 1.0
    core[m, m] = m * (1.0 - a)
    return (2.0 / m) * np.kron(core, np.eye(cfg.d))


def quadratic_energy(cfg: MeanEstConfig, datasets: np.ndarray) -> QuadraticEnergy:
    """The joint empirical risk as 0.5 x^T Q x - b^T x + c for datasets of shape (m, n, d)."""
    datasets = np.asarray(datasets, dtype=float).reshape(cfg.m, cfg.n, cfg.d)
    task_means = datasets.mean(axis=1)
    b = np.concatenate([(2.0 * cfg.alpha / cfg.m) * task_means.reshape(-1), np.zeros(cfg.d)])
    c = cfg.alpha * float(np.sum(datasets ** 2)) / (cfg.m * cfg.n)
    return QuadraticEnergy(precision_shape(cfg), b, c)


def posterior_params(cfg: MeanEstConfig, datasets: np.ndarray) -> PosteriorParams:
    """Posterior mean and precision of (W_1..W_m, U) for datasets of shape (m, n, d)."""
    _require_open_alpha(cfg)
    energy = quadratic_energy(cfg, datasets)
    posterior = gaussian_gibbs(energy, cfg.gamma)
    return PosteriorParams(mean=posterior.mean, precision=cfg.gamma * energy.Q, m=cfg.m, d=cfg.d)


def posterior_means(cfg: MeanEstConfig, task_means: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form posterior means from per-task sample means (..., m, d) -> (mu_W, mu_U)."""
    grand = task_means.mean(axis=-2, keepdims=True)
    mu_w = cfg.alpha * task_means + (1.0 - cfg.alpha) * grand
    return mu_w, grand[..., 0, :]


def isk_closed_form(cfg: MeanEstConfig) -> float:
    """ISKL(U, W_1..W_m; D) = 2 gamma alpha ((m-1) alpha + 1) d sigma_z^2 / (mn)."""
    a = cfg.alpha
    return 2.0 * cfg.gamma * a * ((cfg.m - 1) * a + 1.0) * cfg.d * cfg.sigma_z ** 2 / (cfg.m * cfg.n)


def gen_rate_terms(cfg: MeanEstConfig) -> Tuple[float, float]:
    """The O(d/n) and O(d/(mn)) parts of the meta generalization error."""
    a, var = cfg.alpha, cfg.d * cfg.sigma_z ** 2
    return 2.0 * a * a * var / cfg.n, 2.0 * a * (1.0 - a) * var / (cfg.m * cfg.n)


def gen_closed_form(cfg: MeanEstConfig) -> float:
    """2 alpha^2 d sigma_z^2 / n + 2 alpha (1 - alpha) d sigma_z^2 / (mn)."""
    per_task, cross_task = gen_rate_terms(cfg)
    return per_task + cross_task


def channel_matrix(cfg: MeanEstConfig) -> np.ndarray:
    """A mapping centred samples (task-major, then sample, then coordinate) to (W_1..W_m, U)."""
    m, n, a = cfg.m, cfg.n, cfg.alpha
    rows = np.zeros((m + 1, m * n))
    rows[:m, :] = (1.0 - a) / (m * n)
    for i in range(m):
        rows[i, i * n:(i + 1) * n] += a / n
    rows[m, :] = 1.0 / (m * n)
    return np.kron(rows, np.eye(cfg.d))


def printed_aat_entries(cfg: MeanEstConfig) -> Tuple[float, float, float]:
    """Per-coordinate entries of A A^T: W diagonal, W off-diagonal, and every U entry."""
    m, n, a = cfg.m, cfg.n, cfg.alpha
    diag = ((m * a + (1.0 - a)) ** 2 + (m - 1) * (1.0 - a) ** 2) / (m * m * n)
    off = (2.0 * m * a * (1.0 - a) + m * (1.0 - a) ** 2) / (m * m * n)
    return diag, off, 1.0 / (m * n)


def channel_decomposition(cfg: MeanEstConfig) -> ChannelDecomposition:
    """
    The posterior as a Gaussian channel from samples to parameters.

    The noise covariance is the posterior covariance, so its inverse is the
    posterior precision, and sigma_z^2 tr(precision A A^T) is the ISKL.
    """
    _require_open_alpha(cfg)
    A = channel_matrix(cfg)
    aat = A @ A.T
    precision = cfg.gamma * precision_shape(cfg)
    posterior = gaussian_gibbs(QuadraticEnergy(precision_shape(cfg), np.zeros(A.shape[0])), cfg.gamma)
    trace_value = cfg.sigma_z ** 2 * float(np.trace(precision @ aat))
    channel = GaussianChannel(
        A=A,
        input_cov=cfg.sigma_z ** 2 * np.eye(A.shape[1]),
        noise_cov=posterior.cov,
        input_gaussian=cfg.sample_law is SampleLaw.GAUSSIAN,
    )
    return ChannelDecomposition(A, aat, posterior.cov, trace_value, gaussian_channel_info(channel))


def _draw_block(cfg: MeanEstConfig, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Task means (size, m, d) and samples (size, m, n, d)."""
    mu = cfg.sigma_tau * rng.standard_normal((size, cfg.m, cfg.d))
    shape = (size, cfg.m, cfg.n, cfg.d)
    if cfg.sample_law is SampleLaw.GAUSSIAN:
        noise = rng.standard_normal(shape)
    else:
        noise = rng.choice(np.array([-1.0, 1.0]), size=shape)
    return mu, mu[:, :, None, :] + cfg.sigma_z * noise


def _rao_blackwell_gaps(cfg: MeanEstConfig, mu: np.ndarray, z: np.ndarray) -> np.ndarray:
    # posterior covariance terms cancel between population and empirical risk
    mu_w, _ = posterior_means(cfg, z.mean(axis=2))
    bias = np.sum((mu_w - mu) ** 2, axis=-1)
    spread = np.mean(np.sum((z - mu_w[:, :, None, :]) ** 2, axis=-1), axis=-1)
    per_task = bias + cfg.d * cfg.sigma_z ** 2 - spread
    return cfg.alpha * per_task.mean(axis=1)


def _sampled_gaps(cfg: MeanEstConfig, mu: np.ndarray, z: np.ndarray, rng: np.random.Generator, cov_factor: np.ndarray) -> np.ndarray:
    size = mu.shape[0]
    mu_w, mu_u = posterior_means(cfg, z.mean(axis=2))
    mean = np.concatenate([mu_w.reshape(size, -1), mu_u], axis=1)
    draw = mean + rng.standard_normal(mean.shape) @ cov_factor.T
    w = draw[:, : cfg.m * cfg.d].reshape(size, cfg.m, cfg.d)
    u = draw[:, cfg.m * cfg.d:]
    fresh = mu[:, :, None, :] + cfg.sigma_z * (
        rng.standard_normal(z.shape) if cfg.sample_law is SampleLaw.GAUSSIAN
        else rng.choice(np.array([-1.0, 1.0]), size=z.shape)
    )

    def risk(data: np.ndarray) -> np.ndarray:
        fit = np.mean(np.sum((data - w[:, :, None, :]) ** 2, axis=-1), axis=-1)
        shrink = np.sum((u[:, None, :] - w) ** 2, axis=-1)
        return np.mean(cfg.alpha * fit + (1.0 - cfg.alpha) * shrink, axis=1)

    return risk(fresh) - risk(z)


def gen_monte_carlo(cfg: MeanEstConfig, trials: int, master_seed: int, rao_blackwell: bool = True) -> Tuple[float, float]:
    """
    Monte Carlo estimate of the meta generalization error and its standard error.

    Trials run in blocks of MC_BLOCK_SIZE, each on its own substream, so the
    estimate depends only on (cfg, trials, master_seed). With ``rao_blackwell``
    the posterior expectations of the quadratic loss are taken analytically;
    otherwise parameters and fresh data are sampled.
    """
    _require_open_alpha(cfg)
    if trials < MIN_TRIALS:
        raise ValidationError(f"At least {MIN_TRIALS} trials are required, got {trials}")
    cov_factor = None
    if not rao_blackwell:
        posterior = gaussian_gibbs(QuadraticEnergy(precision_shape(cfg), np.zeros((cfg.m + 1) * cfg.d)), cfg.gamma)
        cov_factor = np.linalg.cholesky(posterior.cov)

    gaps = []
    for block, start in enumerate(range(0, trials, MC_BLOCK_SIZE)):
        size = min(MC_BLOCK_SIZE, trials - start)
        rng = substream(master_seed, Role.MEAN_EST, block)
        mu, z = _draw_block(cfg, rng, size)
        if rao_blackwell:
            gaps.append(_rao_blackwell_gaps(cfg, mu, z))
        else:
            gaps.append(_sampled_gaps(cfg, mu, z, rng, cov_factor))
    values = np.concatenate(gaps)
    estimate = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(trials))
    logger.info("Mean-estimation Monte Carlo: %d trials, estimate %.6f +/- %.6f", trials, estimate, stderr)
    return estimate, stderr
