"""
Gibbs posteriors: exact on finite hypothesis spaces, closed form for quadratic energies.

P(y | x) is proportional to prior(y) * exp(-gamma * f(y, x)). Finite posteriors
are normalized in the log domain with a max shift (scipy's logsumexp).
"""

import logging
from typing import Any, NamedTuple, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, null_space
from scipy.special import logsumexp

from src.errors import NegativeGamma, PriorSupportMismatch, SingularPrecision
from src.models import DiscreteDist, EnergySpec, GaussianDist, GibbsPosterior

logger = logging.getLogger(__name__)

# Relative singular-value cutoff for improper precision matrices
PRECISION_RCOND = 1e-12


class QuadraticEnergy(NamedTuple):
    """f(w) = 0.5 w^T Q w - b^T w + c."""
    Q: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def value(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        return float(0.5 * w @ self.Q @ w - self.b @ w + self.c)


def _check_gamma(gamma: float) -> None:
    if gamma < 0:
        raise NegativeGamma(f"Inverse temperature must be nonnegative, got {gamma}")


def log_prior_vector(probs: np.ndarray) -> np.ndarray:
    """Elementwise log of prior probabilities with log 0 = -inf."""
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(probs, dtype=float))


def gibbs_table(energy: np.ndarray, log_prior: np.ndarray, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gibbs posteriors for every context at once.

    Args:
        energy: (n_hypotheses, n_contexts) energies
        log_prior: (n_hypotheses,) log prior, -inf off the support
        gamma: inverse temperature

    Returns:
        (table, log_z): table[h, x] = P(h | x), log_z[x] the log partition
    """
    _check_gamma(gamma)
    energy = np.asarray(energy, dtype=float)
    if energy.ndim == 1:
        energy = energy[:, None]
    log_prior = np.asarray(log_prior, dtype=float)
    if log_prior.shape != (energy.shape[0],):
        raise PriorSupportMismatch("Prior length does not match the number of hypotheses")
    logits = log_prior[:, None] - gamma * energy
    log_z = logsumexp(logits, axis=0)
    table = np.exp(logits - log_z)
    return table, log_z


def _checked_prior(spec: EnergySpec, prior: DiscreteDist) -> DiscreteDist:
    if prior.outcomes != spec.hypotheses:
        raise PriorSupportMismatch("Prior is not defined on the hypothesis space of the energy")
    return prior


def build_posterior(spec: EnergySpec, prior: DiscreteDist, gamma: float) -> GibbsPosterior:
    """The Gibbs posterior for every context of ``spec``."""
    prior = _checked_prior(spec, prior)
    table, log_z = gibbs_table(spec.energy, log_prior_vector(prior.probs), gamma)
    logger.debug("Gibbs posterior over %d hypotheses, %d contexts, gamma=%s",
                 len(spec.hypotheses), len(spec.contexts), gamma)
    return GibbsPosterior(gamma=gamma, prior=prior, table=table, log_partition=log_z)


def gibbs_posterior(spec: EnergySpec, prior: DiscreteDist, gamma: float, x: Any) -> DiscreteDist:
    """The Gibbs posterior for a single data context ``x``."""
    prior = _checked_prior(spec, prior)
    j = spec.context_index(x)
    table, _ = gibbs_table(spec.energy[:, [j]], log_prior_vector(prior.probs), gamma)
    return DiscreteDist(spec.hypotheses, table[:, 0])


def log_partition(spec: EnergySpec, prior: DiscreteDist, gamma: float, x: Any) -> float:
    """log sum_y prior(y) exp(-gamma f(y, x))."""
    prior = _checked_prior(spec, prior)
    j = spec.context_index(x)
    _, log_z = gibbs_table(spec.energy[:, [j]], log_prior_vector(prior.probs), gamma)
    return float(log_z[0])


def gaussian_gibbs(energy: QuadraticEnergy, gamma: float) -> GaussianDist:
    """
    Gibbs posterior of a quadratic energy under an improper flat prior.

    The result has precision gamma * Q and mean Q^-1 b. A singular precision
    raises SingularPrecision carrying an orthonormal basis of its null space.
    """
    _check_gamma(gamma)
    Q = np.atleast_2d(np.asarray(energy.Q, dtype=float))
    b = np.atleast_1d(np.asarray(energy.b, dtype=float))
    precision = gamma * Q
    kernel = null_space(precision, rcond=PRECISION_RCOND)
    if kernel.shape[1] > 0:
        raise SingularPrecision(
            f"Posterior precision has a {kernel.shape[1]}-dimensional null space", null_space=kernel
        )
    try:
        factor = cho_factor(precision, lower=True)
    except LinAlgError as exc:
        raise SingularPrecision("Posterior precision is not positive definite") from exc
    mean = cho_solve(factor, gamma * b)
    cov = cho_solve(factor, np.eye(precision.shape[0]))
    return GaussianDist(mean, 0.5 * (cov + cov.T))
