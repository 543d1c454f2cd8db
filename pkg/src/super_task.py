"""
Super-task Gibbs algorithm on an enumerable super-sample.

The super-sample Z has 2m task groups of two columns each. The task mask
s_hat picks one group per pair as the meta-training task and the sample
mask s picks one column per row of each group as the training sample.
(U, W^{s_hat}) is trained jointly on the selected samples of the training
tasks; the held-out tasks get W^{-s_hat} from the same base learner, given U,
trained on their s-selected samples.

Everything is computed exactly by enumerating Z, s and s_hat, with the
loops vectorized over masks and hypotheses.
"""

import itertools
import logging
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from src import info_measures
from src.config import SUPER_IDENTITY_TOL
from src.errors import LossRangeViolation, ShapeMismatch, ZeroGamma
from src.gibbs_core import gibbs_table, log_prior_vector
from src.meta_env import check_cap
from src.models import DiscreteDist, JointDist, Masks, SuperInstance, SuperLosses, SuperSample

logger = logging.getLogger(__name__)


class Selections(NamedTuple):
    """Each field is an (m, n) array of sample indices."""
    train_s: np.ndarray        # Z^{s_hat}_{s}
    train_not_s: np.ndarray    # Z^{s_hat}_{-s}
    test_s: np.ndarray         # Z^{-s_hat}_{s}
    test_not_s: np.ndarray     # Z^{-s_hat}_{-s}


class SuperTables(NamedTuple):
    joint: JointDist
    losses: SuperLosses


def _check_layout(z: np.ndarray, masks: Masks) -> Tuple[int, int]:
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] % 4 != 0:
        raise ShapeMismatch(f"Super-sample must be n x 4m, got {z.shape}")
    n, m = z.shape[0], z.shape[1] // 4
    if masks.s_hat.shape != (m,) or masks.s.shape != (n, 2 * m):
        raise ShapeMismatch(
            f"Masks must be ({m},) and {(n, 2 * m)}, got {masks.s_hat.shape} and {masks.s.shape}"
        )
    return m, n


def _column_indices(s: np.ndarray, s_hat: np.ndarray) -> Tuple[np.ndarray, ...]:
    """
    Column index of every selection for stacked masks.

    s: (..., n, 2m), s_hat: (..., m). Returns four arrays of shape (..., m, n).
    """
    m = s_hat.shape[-1]
    pairs = 2 * np.arange(m)
    train_group = pairs + s_hat
    test_group = pairs + 1 - s_hat
    s_rows = np.swapaxes(s, -1, -2)  # (..., 2m, n)

    def pick(groups: np.ndarray) -> np.ndarray:
        lead = np.broadcast_shapes(s_rows.shape[:-2], groups.shape[:-1])
        rows = np.broadcast_to(s_rows, lead + s_rows.shape[-2:])
        index = np.broadcast_to(groups[..., None], lead + (groups.shape[-1], s_rows.shape[-1]))
        return np.take_along_axis(rows, index, axis=-2)

    train_bits = pick(train_group)
    test_bits = pick(test_group)
    return (
        2 * train_group[..., None] + train_bits,
        2 * train_group[..., None] + 1 - train_bits,
        2 * test_group[..., None] + test_bits,
        2 * test_group[..., None] + 1 - test_bits,
    )


def select_training(z: np.ndarray, masks: Masks) -> Selections:
    """The four selections of the super-sample induced by the masks."""
    z = z.z if isinstance(z, SuperSample) else np.asarray(z, dtype=int)
    m, n = _check_layout(z, masks)
    rows = np.arange(n)[None, :]
    columns = _column_indices(masks.s, masks.s_hat)
    return Selections(*(z[rows, cols] for cols in columns))


def mirror(z: np.ndarray, masks: Masks) -> Tuple[np.ndarray, Masks]:
    """Swap the two groups of every pair and the two columns of every group, and flip both masks."""
    z = np.asarray(z, dtype=int)
    m, n = _check_layout(z, masks)
    order = np.arange(4 * m).reshape(m, 2, 2)[:, ::-1, ::-1].reshape(-1)
    s_order = np.arange(2 * m).reshape(m, 2)[:, ::-1].reshape(-1)
    return z[:, order], Masks(1 - masks.s_hat, 1 - masks.s[:, s_order])


def _task_risks(inst: SuperInstance, selection: np.ndarray) -> np.ndarray:
    """Individual empirical risks (..., m, |U|, |W|) of a stacked (..., m, n) selection."""
    risk = inst.loss[:, :, selection].mean(axis=-1)  # (U, W, ..., m)
    return np.moveaxis(risk, (0, 1), (-2, -1))


def _joint_risk(task_risks: np.ndarray) -> np.ndarray:
    """L_E over (u, w_1..w_m) flattened to (..., |U|, |W|^m) from per-task risks (..., m, U, W)."""
    lead = task_risks.shape[:-3]
    m, n_u, n_w = task_risks.shape[-3:]
    total = np.zeros(lead + (n_u,) + (n_w,) * m)
    for i in range(m):
        shape = list(lead) + [n_u] + [1] * m
        shape[len(lead) + 1 + i] = n_w
        total = total + task_risks[..., i, :, :].reshape(shape)
    return (total / m).reshape(lead + (n_u, n_w ** m))


def _product_prior(prior_w: np.ndarray, m: int) -> np.ndarray:
    prior = np.ones(1)
    for _ in range(m):
        prior = np.multiply.outer(prior, prior_w).reshape(-1)
    return prior


def _train_log_prior(inst: SuperInstance) -> np.ndarray:
    """log prior(u) + sum_i log prior_w(w_i) as (|U|, |W|^m)."""
    return log_prior_vector(inst.prior_u)[:, None] + log_prior_vector(_product_prior(inst.prior_w, inst.m))[None, :]


def _test_conditional(inst: SuperInstance, task_risks: np.ndarray) -> np.ndarray:
    """P(w^{-s_hat} | u) as (..., |U|, |W|^m) from held-out task risks (..., m, U, W)."""
    logits = log_prior_vector(inst.prior_w) - (inst.gamma / inst.m) * task_risks
    per_task = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    lead = per_task.shape[:-3]
    m, n_u, n_w = per_task.shape[-3:]
    total = np.ones(lead + (n_u,) + (n_w,) * m)
    for i in range(m):
        shape = list(lead) + [n_u] + [1] * m
        shape[len(lead) + 1 + i] = n_w
        total = total * per_task[..., i, :, :].reshape(shape)
    return total.reshape(lead + (n_u, n_w ** m))


def _param_labels(inst: SuperInstance) -> Tuple[Tuple[Any, ...], ...]:
    return tuple(itertools.product(*([inst.w_space] * inst.m)))


def train_posterior(inst: SuperInstance, z: np.ndarray, masks: Masks) -> DiscreteDist:
    """Super-task Gibbs posterior over (u, w_1..w_m) of the meta-training tasks."""
    sel = select_training(z, masks)
    energy = _joint_risk(_task_risks(inst, sel.train_s)).reshape(-1)
    table, _ = gibbs_table(energy, _train_log_prior(inst).reshape(-1), inst.gamma)
    labels = tuple((u,) + ws for u in inst.u_space for ws in _param_labels(inst))
    return DiscreteDist(labels, table[:, 0])


def test_posterior(inst: SuperInstance, z: np.ndarray, masks: Masks, u: Any) -> DiscreteDist:
    """Base-learner posterior over the held-out task parameters for a given u."""
    sel = select_training(z, masks)
    k = inst.u_space.index(u)
    energy = _joint_risk(_task_risks(inst, sel.test_s))[k]
    log_prior = log_prior_vector(_product_prior(inst.prior_w, inst.m))
    table, _ = gibbs_table(energy, log_prior, inst.gamma)
    return DiscreteDist(_param_labels(inst), table[:, 0])


def super_sample_law(inst: SuperInstance) -> Tuple[np.ndarray, np.ndarray]:
    """
    All super-samples and their probabilities.

    Each group draws a task from the environment and fills both of its
    columns with i.i.d. samples from it. Returns (configs (N, n, 4m), probs (N,)).
    """
    m, n = inst.m, inst.n
    k = len(inst.sample_space)
    configs = np.array(list(itertools.product(range(k), repeat=n * 4 * m)), dtype=int).reshape(-1, n, 4 * m)
    task_matrix = np.stack([task.probs for task in inst.tasks])
    probs = np.ones(configs.shape[0])
    for g in range(2 * m):
        cells = configs[:, :, 2 * g:2 * g + 2].reshape(configs.shape[0], -1)
        per_task = np.prod(task_matrix[:, cells], axis=-1)  # (T, N)
        probs = probs * (inst.task_prior.probs @ per_task)
    return configs, probs


def all_masks(m: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Every sample mask (N_s, n, 2m) and task mask (N_hat, m)."""
    s = np.array(list(itertools.product((0, 1), repeat=n * 2 * m)), dtype=int).reshape(-1, n, 2 * m)
    s_hat = np.array(list(itertools.product((0, 1), repeat=m)), dtype=int).reshape(-1, m)
    return s, s_hat


def enumerate_super_task(inst: SuperInstance, cap: Optional[int] = None) -> SuperTables:
    """
    The exact joint of (z, s, s_hat, u, w_train, w_test) and the expected losses.

    Raises:
        StateSpaceTooLarge: if the joint table exceeds the cap
    """
    m, n = inst.m, inst.n
    n_u, n_w = len(inst.u_space), len(inst.w_space)
    n_z = len(inst.sample_space) ** (4 * m * n)
    n_s, n_hat = 2 ** (2 * m * n), 2 ** m
    required = n_z * n_s * n_hat * n_u * n_w ** (2 * m)
    check_cap(required, cap)
    logger.info("Enumerating super-task joint with %d cells (m=%d, n=%d)", required, m, n)

    configs, p_z = super_sample_law(inst)
    s, s_hat = all_masks(m, n)
    columns = _column_indices(s[:, None, :, :], s_hat[None, :, :])  # each (N_s, N_hat, m, n)
    z_index = np.arange(configs.shape[0])[:, None, None, None, None]
    rows = np.arange(n)[None, None, None, None, :]
    # each (N_z, N_s, N_hat, m, n)
    selections = [configs[z_index, rows, cols[None]] for cols in columns]
    risks = [_task_risks(inst, sel) for sel in selections]  # each (N_z, N_s, N_hat, m, U, W)

    energy_train = _joint_risk(risks[0])
    logits = _train_log_prior(inst) - inst.gamma * energy_train
    log_z = logsumexp(logits, axis=(-2, -1), keepdims=True)
    p_train = np.exp(logits - log_z)  # (N_z, N_s, N_hat, U, W^m)
    p_test = _test_conditional(inst, risks[2])  # (N_z, N_s, N_hat, U, W^m)
    p_u = p_train.sum(axis=-1)

    weights = p_z[:, None, None] / (n_s * n_hat)

    def expect_train(selection_risk: np.ndarray) -> float:
        return float(np.sum(weights[..., None, None] * p_train * _joint_risk(selection_risk)))

    def expect_test(selection_risk: np.ndarray) -> float:
        per_u = np.sum(p_test * _joint_risk(selection_risk), axis=-1)
        return float(np.sum(weights[..., None] * p_u * per_u))

    losses = SuperLosses(
        hat=expect_train(risks[0]),
        bar=expect_train(risks[1]),
        tilde=expect_test(risks[2]),
        pop=expect_test(risks[3]),
        cross_train=expect_train(risks[2]),
        cross_test=expect_train(risks[3]),
    )

    table = weights[..., None, None, None] * p_train[..., :, :, None] * p_test[..., :, None, :]
    labels = _param_labels(inst)
    axes = [
        ("z", tuple(range(n_z))),
        ("s", tuple(range(n_s))),
        ("s_hat", tuple(range(n_hat))),
        ("u", inst.u_space),
        ("w_train", labels),
        ("w_test", labels),
    ]
    return SuperTables(JointDist(axes, table), losses)


def four_losses(inst: SuperInstance, cap: Optional[int] = None) -> SuperLosses:
    """Expected training, auxiliary and population losses (plus the two cross losses)."""
    return enumerate_super_task(inst, cap).losses


def _info(joint: JointDist) -> Dict[str, info_measures.InfoTerms]:
    params = ("u", "w_train")
    return {
        "term1": info_measures.info_terms(joint, params, ("s", "s_hat"), "z"),
        "term2": info_measures.info_terms(joint, params, "s", ("s_hat", "z")),
        "term3": info_measures.info_terms(joint, params, "s_hat", ("s", "z")),
        "term4": info_measures.info_terms(joint, "w_test", "s", ("u", "s_hat", "z")),
    }


def theorem2_terms(
    inst: SuperInstance,
    cap: Optional[int] = None,
    tables: Optional[SuperTables] = None,
    tolerance: float = SUPER_IDENTITY_TOL,
) -> Dict[str, Any]:
    """
    Conditional ISKL terms, the loss identities they satisfy and the generalization error.

    The exact identities are
        term1 = (gamma/4)(hat + bar + cross_train + cross_test) - gamma * hat
        term2 = (gamma/2)(bar - hat)
        term3 = (gamma/2)(cross_train - hat)
        term4 = (gamma/2)(pop - tilde)
    The "printed" forms replace the cross losses by tilde and pop; they agree
    with the exact ones when the loss does not depend on w.
    """
    if inst.gamma == 0:
        raise ZeroGamma("Loss identities divide by gamma, which is zero")
    tables = tables if tables is not None else enumerate_super_task(inst, cap)
    g = inst.gamma
    lo = tables.losses
    info = _info(tables.joint)
    iskl = {name: terms.skl for name, terms in info.items()}

    exact = {
        "1": iskl["term1"] - (g / 4.0 * (lo.hat + lo.bar + lo.cross_train + lo.cross_test) - g * lo.hat),
        "2": iskl["term2"] - g / 2.0 * (lo.bar - lo.hat),
        "3": iskl["term3"] - g / 2.0 * (lo.cross_train - lo.hat),
        "4": iskl["term4"] - g / 2.0 * (lo.pop - lo.tilde),
    }
    gen_direct = lo.pop - lo.hat
    gen_theorem2 = 2.0 / g * (iskl["term4"] + iskl["term3"])
    printed = {
        "1": iskl["term1"] - (g / 4.0 * (lo.hat + lo.bar + lo.tilde + lo.pop) - g * lo.hat),
        "3": iskl["term3"] - g / 2.0 * (lo.tilde - lo.hat),
        "gen": gen_theorem2 - gen_direct,
    }
    printed_hold = all(abs(v) <= tolerance for v in printed.values())
    if not printed_hold:
        logger.info("Printed forms of identities (1), (3) do not hold: the loss depends on w")
    return {
        "losses": lo.as_dict(),
        "iskl_terms": iskl,
        "mi_terms": {name: terms.mutual for name, terms in info.items()},
        "residuals": exact,
        "printed_residuals": printed,
        "printed_forms_hold": printed_hold,
        "gen_direct": gen_direct,
        "gen_theorem2": gen_theorem2,
        "gen_difference": gen_theorem2 - gen_direct,
    }


def hellstrom_intermediate_bounds(
    inst: SuperInstance,
    cap: Optional[int] = None,
    tables: Optional[SuperTables] = None,
) -> Dict[str, float]:
    """
    Slacks of |cross_train - hat| <= sqrt(2 I(U,W; s_hat | Z, s) / m) and |pop - tilde| <= sqrt(2 I(W'; s | U, Z, s_hat) / n).

    The task-level gap compares the training-task parameters on both groups
    of each pair; it equals |tilde - hat| when the loss does not depend on w.

    Raises:
        LossRangeViolation: if the loss leaves [0, 1]
    """
    lo_range, hi_range = inst.loss_range
    if lo_range < 0.0 or hi_range > 1.0:
        raise LossRangeViolation(f"Loss range [{lo_range}, {hi_range}] is not inside [0, 1]")
    tables = tables if tables is not None else enumerate_super_task(inst, cap)
    lo = tables.losses
    info = _info(tables.joint)
    task_bound = float(np.sqrt(2.0 * max(info["term3"].mutual, 0.0) / inst.m))
    sample_bound = float(np.sqrt(2.0 * max(info["term4"].mutual, 0.0) / inst.n))
    return {
        "task_gap": abs(lo.cross_train - lo.hat),
        "task_bound": task_bound,
        "task_slack": task_bound - abs(lo.cross_train - lo.hat),
        "sample_gap": abs(lo.pop - lo.tilde),
        "sample_bound": sample_bound,
        "sample_slack": sample_bound - abs(lo.pop - lo.tilde),
    }
