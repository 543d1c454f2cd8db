"""
KL-type divergences and information measures.

Finite measures work on DiscreteDist / JointDist tables with the 0 log 0 = 0
convention; absolute-continuity failures raise SupportMismatch instead of
being clamped. Gaussian measures use closed forms. Everything is in nats.
"""

import logging
from typing import Any, Callable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import rel_entr

from src.config import PROB_SUM_TOL, ZERO_SLICE_TOL
from src.errors import (
    DomainMismatch,
    SingularCovariance,
    SupportMismatch,
    UnknownAxis,
    ValidationError,
    ZeroMutualInformation,
)
from src.models import DiscreteDist, GaussianChannel, GaussianDist, InfoKind, JointDist

logger = logging.getLogger(__name__)

AxisSpec = Union[str, Sequence[str], None]

# Identity checks between two computation paths of the same quantity
ADDITIVITY_TOL = 1e-12


class ChannelInfo(NamedTuple):
    """Information measures of a Gaussian channel; I and L are None for non-Gaussian inputs."""
    mutual: Optional[float]
    lautum: Optional[float]
    iskl: float


class InfoTerms(NamedTuple):
    mutual: float
    lautum: float
    skl: float


def _kl_arrays(p: np.ndarray, q: np.ndarray, context: Any = None) -> float:
    bad = (p > 0) & (q <= 0)
    if np.any(bad):
        where = f" at z={context!r}" if context is not None else ""
        raise SupportMismatch(
            f"First argument is not absolutely continuous w.r.t. the second{where}", context=context
        )
    return float(np.sum(rel_entr(p, q)))


def kl(p: DiscreteDist, q: DiscreteDist) -> float:
    """D(p || q) in nats."""
    if p.outcomes != q.outcomes:
        raise DomainMismatch("kl: distributions are defined over different outcome spaces")
    return _kl_arrays(p.probs, q.probs)


def skl(p: DiscreteDist, q: DiscreteDist) -> float:
    """Symmetrized KL (Jeffreys) divergence D(p || q) + D(q || p)."""
    return kl(p, q) + kl(q, p)


def _axis_group(joint: JointDist, spec: AxisSpec) -> Tuple[str, ...]:
    if spec is None:
        return ()
    group = (spec,) if isinstance(spec, str) else tuple(spec)
    for name in group:
        if name not in joint.names:
            raise UnknownAxis(f"Unknown axis {name!r}; joint has {joint.names}")
    return group


def as_xyz(joint: JointDist, x: AxisSpec, y: AxisSpec, z: AxisSpec = None) -> Tuple[np.ndarray, Callable[[int], Any]]:
    """
    Collapse a joint table into a 3-d array (X, Y, Z).

    Each of x, y and z may name a single axis or a group of axes, which is
    merged into one compound variable. Axes in none of the groups are summed
    out. Returns the array and a function mapping a Z index to its outcome
    label (a tuple for grouped axes).
    """
    gx, gy, gz = _axis_group(joint, x), _axis_group(joint, y), _axis_group(joint, z)
    if not gx or not gy:
        raise UnknownAxis("Both the X and Y axis groups must be non-empty")
    used = gx + gy + gz
    if len(set(used)) != len(used):
        raise ValidationError(f"Axis groups overlap: {gx}, {gy}, {gz}")
    marginal = joint.marginal(list(used))
    sizes = marginal.table.shape
    nx = int(np.prod(sizes[:len(gx)]))
    ny = int(np.prod(sizes[len(gx):len(gx) + len(gy)]))
    z_shape = sizes[len(gx) + len(gy):]
    table = marginal.table.reshape(nx, ny, -1)
    z_outcomes = [joint.outcomes_of(name) for name in gz]

    def z_label(k: int) -> Any:
        if not gz:
            return None
        idx = np.unravel_index(k, z_shape)
        labels = tuple(outcomes[i] for outcomes, i in zip(z_outcomes, idx))
        return labels[0] if len(labels) == 1 else labels

    return table, z_label


def conditional_terms(
    table: np.ndarray,
    z_label: Callable[[int], Any] = lambda k: None,
    with_lautum: bool = True,
) -> InfoTerms:
    """
    Conditional mutual, lautum and symmetrized KL information of a 3-d (X, Y, Z) table.

    Slices with P(z) below ZERO_SLICE_TOL are skipped. With ``with_lautum``
    False only the mutual information is computed (lautum and skl are NaN).
    """
    table = np.asarray(table, dtype=float)
    pz = table.sum(axis=(0, 1))
    keep = np.flatnonzero(pz >= ZERO_SLICE_TOL)
    if keep.size < pz.size:
        logger.debug("Skipping %d zero-probability conditioning slices", pz.size - keep.size)
    weights = pz[keep]
    cond = table[:, :, keep] / weights
    product = cond.sum(axis=1)[:, None, :] * cond.sum(axis=0)[None, :, :]

    mutual = float(np.dot(weights, rel_entr(cond, product).sum(axis=(0, 1))))
    if not with_lautum:
        return InfoTerms(mutual, float("nan"), float("nan"))

    bad = (product > 0) & (cond <= 0)
    if np.any(bad):
        k = int(keep[np.flatnonzero(bad.any(axis=(0, 1)))[0]])
        raise SupportMismatch(
            f"Joint does not dominate the product of marginals at z={z_label(k)!r}",
            context=z_label(k),
        )
    lautum = float(np.dot(weights, rel_entr(product, cond).sum(axis=(0, 1))))

    # direct symmetrized KL, a second path for the additivity check
    support = (cond > 0) & (product > 0)
    diff = np.where(support, cond - product, 0.0)
    log_ratio = np.where(support, np.log(np.where(support, cond, 1.0)) - np.log(np.where(support, product, 1.0)), 0.0)
    skl_direct = float(np.dot(weights, (diff * log_ratio).sum(axis=(0, 1))))
    if abs(skl_direct - (mutual + lautum)) > ADDITIVITY_TOL * max(1.0, abs(skl_direct)):
        raise ValidationError(
            f"Symmetrized KL information {skl_direct!r} differs from I + L = {mutual + lautum!r}"
        )
    return InfoTerms(mutual, lautum, mutual + lautum)


def cond_info(joint: JointDist, x_axis: AxisSpec, y_axis: AxisSpec, z_axis: AxisSpec, kind: InfoKind = InfoKind.SKL) -> float:
    """E_{P_Z}[measure between P_{X,Y|Z=z} and P_{X|Z=z} (x) P_{Y|Z=z}] in nats."""
    table, z_label = as_xyz(joint, x_axis, y_axis, z_axis)
    terms = conditional_terms(table, z_label, with_lautum=kind is not InfoKind.MUTUAL)
    if kind is InfoKind.MUTUAL:
        return terms.mutual
    if kind is InfoKind.LAUTUM:
        return terms.lautum
    return terms.skl


def info_terms(joint: JointDist, x_axis: AxisSpec, y_axis: AxisSpec, z_axis: AxisSpec = None) -> InfoTerms:
    """Mutual, lautum and symmetrized KL information in one pass."""
    table, z_label = as_xyz(joint, x_axis, y_axis, z_axis)
    return conditional_terms(table, z_label)


def mutual_info(joint: JointDist, x_axis: AxisSpec, y_axis: AxisSpec) -> float:
    """I(X;Y) = D(P_XY || P_X (x) P_Y)."""
    return cond_info(joint, x_axis, y_axis, None, InfoKind.MUTUAL)


def lautum_info(joint: JointDist, x_axis: AxisSpec, y_axis: AxisSpec) -> float:
    """L(X;Y) = D(P_X (x) P_Y || P_XY)."""
    return cond_info(joint, x_axis, y_axis, None, InfoKind.LAUTUM)


def skl_info(joint: JointDist, x_axis: AxisSpec, y_axis: AxisSpec) -> float:
    """Symmetrized KL information I(X;Y) + L(X;Y)."""
    return cond_info(joint, x_axis, y_axis, None, InfoKind.SKL)


def information_ratio(joint: JointDist, x_axis: AxisSpec, y_axis: AxisSpec, z_axis: AxisSpec = None) -> float:
    """L/I, the lautum-to-mutual information ratio (conditional when z_axis is given)."""
    terms = info_terms(joint, x_axis, y_axis, z_axis)
    if terms.mutual <= ZERO_SLICE_TOL:
        raise ZeroMutualInformation(f"Mutual information {terms.mutual!r} is too small for a ratio")
    return terms.lautum / terms.mutual


def _channel_iskl(channel: np.ndarray, p_x: np.ndarray) -> float:
    joint = p_x[:, None] * channel
    return conditional_terms(joint[:, :, None]).skl


def skl_info_concavity_gap(channel: np.ndarray, p0: Union[DiscreteDist, np.ndarray], p1: Union[DiscreteDist, np.ndarray], lam: float) -> float:
    """
    ISKL under the lam-mixture of two input marginals minus the same mixture of their ISKLs.

    ``channel`` is a row-stochastic |X| x |Y| matrix P_{Y|X}. The gap is
    nonnegative whenever the two marginals differ along a two-input direction
    (in particular for binary X); with three or more inputs it can go negative.
    """
    channel = np.asarray(channel, dtype=float)
    if np.any(channel < 0) or np.any(np.abs(channel.sum(axis=1) - 1.0) > PROB_SUM_TOL):
        raise ValidationError("Channel rows must be probability vectors")
    p0 = p0.probs if isinstance(p0, DiscreteDist) else np.asarray(p0, dtype=float)
    p1 = p1.probs if isinstance(p1, DiscreteDist) else np.asarray(p1, dtype=float)
    if not 0.0 <= lam <= 1.0:
        raise ValidationError("Mixture weight must lie in [0, 1]")
    mixed = _channel_iskl(channel, lam * p0 + (1.0 - lam) * p1)
    return mixed - (lam * _channel_iskl(channel, p0) + (1.0 - lam) * _channel_iskl(channel, p1))


def _cholesky(cov: np.ndarray, what: str):
    try:
        return cho_factor(cov, lower=True)
    except LinAlgError as exc:
        raise SingularCovariance(f"{what} covariance is not positive definite") from exc


def gaussian_kl(p: GaussianDist, q: GaussianDist) -> float:
    """D(p || q) between multivariate Gaussians."""
    if p.dim != q.dim:
        raise DomainMismatch("gaussian_kl: dimensions differ")
    q_factor = _cholesky(q.cov, "Second")
    p_factor = _cholesky(p.cov, "First")
    diff = q.mean - p.mean
    trace_term = float(np.trace(cho_solve(q_factor, p.cov)))
    maha = float(diff @ cho_solve(q_factor, diff))
    logdet_q = 2.0 * float(np.sum(np.log(np.diag(q_factor[0]))))
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(p_factor[0]))))
    return 0.5 * (trace_term + maha - p.dim + logdet_q - logdet_p)


def gaussian_channel_info(ch: GaussianChannel) -> ChannelInfo:
    """
    Information measures of Y = A X + N.

    ISKL = tr(Sigma_N^-1 A Sigma A^T) holds for any input law with covariance
    Sigma; I and L need a Gaussian input and are None otherwise.
    """
    noise_factor = _cholesky(ch.noise_cov, "Noise")
    signal_cov = ch.A @ ch.input_cov @ ch.A.T
    signal_cov = 0.5 * (signal_cov + signal_cov.T)
    trace = float(np.trace(cho_solve(noise_factor, signal_cov)))
    if not ch.input_gaussian:
        return ChannelInfo(None, None, trace)
    d_y = ch.noise_cov.shape[0]
    output = GaussianDist(np.zeros(d_y), signal_cov + ch.noise_cov)
    noise = GaussianDist(np.zeros(d_y), ch.noise_cov)
    divergence = gaussian_kl(output, noise)
    return ChannelInfo(0.5 * trace - divergence, 0.5 * trace + divergence, trace)
