"""
The joint-training meta Gibbs algorithm on finite instances.

Meta parameters U and task parameters W_1..W_m are drawn jointly from
    P(u, w | D) proportional to prior(u, w) * exp(-gamma * L_E(u, w, D)),
where L_E is the joint empirical risk over the m meta-training datasets.
Every expectation here is exact: the joint law of task identities,
parameters and datasets is enumerated into a MetaJoint.

Two environment modes are supported (see EnvironmentMode). In both, the
population meta risk is the risk of the learned parameters on data drawn
independently of the training draw, which makes
    gen = ISKL(U, W_1..W_m; D_1..D_m) / gamma
an exact identity.
"""

import itertools
import logging
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from src import info_measures
from src.config import IDENTITY_TOL, PROB_SUM_TOL, ZERO_SLICE_TOL
from src.errors import NonFactorizedPrior, SupportMismatch, ZeroGamma
from src.gibbs_core import build_posterior, gibbs_table, log_prior_vector
from src.meta_env import check_cap, dataset_index, dataset_tuples, monte_carlo_expectation, task_dataset_law
from src.models import (
    DiscreteDist,
    EnergySpec,
    EnvironmentMode,
    InfoKind,
    JointDist,
    MetaInstance,
    MetaJoint,
    MetaSample,
)

logger = logging.getLogger(__name__)


def _u_index(inst: MetaInstance, u: Any) -> int:
    return inst.u_space.index(u)


def _w_index(inst: MetaInstance, w: Any) -> int:
    return inst.w_space.index(w)


def individual_empirical_risk(inst: MetaInstance, u: Any, w: Any, dataset: Sequence[int]) -> float:
    """(1/n) sum_j loss(u, w, z_j) for one task's dataset of sample indices."""
    row = inst.loss[_u_index(inst, u), _w_index(inst, w)]
    return float(np.mean(row[np.asarray(dataset, dtype=int)]))


def joint_empirical_risk(inst: MetaInstance, u: Any, ws: Sequence[Any], datasets: np.ndarray) -> float:
    """Average of the individual empirical risks over the m meta-training tasks."""
    datasets = np.atleast_2d(datasets)
    risks = [individual_empirical_risk(inst, u, w, d) for w, d in zip(ws, datasets)]
    return float(np.mean(risks))


def hypotheses(inst: MetaInstance) -> Tuple[Tuple[Any, ...], ...]:
    """(u, w_1, ..., w_m) labels in the row-major order of the prior array."""
    return tuple(itertools.product(inst.u_space, *([inst.w_space] * inst.m)))


def prior_dist(inst: MetaInstance) -> DiscreteDist:
    return DiscreteDist(hypotheses(inst), inst.prior.reshape(-1))


def task_risk_table(inst: MetaInstance) -> np.ndarray:
    """(|U|, |W|, |Z|^n) individual empirical risk of every (u, w, dataset)."""
    tuples = dataset_tuples(inst.env)
    return inst.loss[:, :, tuples].mean(axis=-1)


def energy_tensor(inst: MetaInstance) -> np.ndarray:
    """Joint empirical risk with axes (u, w_1..w_m, d_1..d_m)."""
    m = inst.m
    risk = task_risk_table(inst)
    n_u, n_w, n_sets = risk.shape
    energy = np.zeros((n_u,) + (n_w,) * m + (n_sets,) * m)
    for i in range(m):
        shape = [1] * (1 + 2 * m)
        shape[0], shape[1 + i], shape[1 + m + i] = n_u, n_w, n_sets
        energy = energy + risk.reshape(shape)
    return energy / m


def _energy_matrix(inst: MetaInstance) -> np.ndarray:
    """Energy as (hypotheses, dataset combinations)."""
    energy = energy_tensor(inst)
    n_hyp = inst.prior.size
    return energy.reshape(n_hyp, -1)


def meta_gibbs_posterior(inst: MetaInstance, datasets: np.ndarray) -> DiscreteDist:
    """The meta Gibbs posterior over (u, w_1..w_m) for one meta-training draw."""
    datasets = np.atleast_2d(np.asarray(datasets, dtype=int))
    risk = task_risk_table(inst)
    column = 0
    for i in range(inst.m):
        k = dataset_index(inst.env, datasets[i])
        shape = [1] * (1 + inst.m)
        shape[0], shape[1 + i] = risk.shape[0], risk.shape[1]
        column = column + risk[:, :, k].reshape(shape)
    energy = np.broadcast_to(column, inst.prior.shape).reshape(-1) / inst.m
    table, _ = gibbs_table(energy, log_prior_vector(inst.prior.reshape(-1)), inst.gamma)
    return DiscreteDist(hypotheses(inst), table[:, 0])


def _task_data_law(inst: MetaInstance) -> np.ndarray:
    """P(t_1..t_m, d_1..d_m) flattened to (|T|^m, |Z|^(nm))."""
    m = inst.m
    per_task = inst.env.task_prior.probs[:, None] * task_dataset_law(inst.env)
    n_tasks, n_sets = per_task.shape
    law = np.ones((n_tasks,) * m + (n_sets,) * m)
    for i in range(m):
        shape = [1] * (2 * m)
        shape[i], shape[m + i] = n_tasks, n_sets
        law = law * per_task.reshape(shape)
    return law.reshape(n_tasks ** m, n_sets ** m)


def build_meta_joint(inst: MetaInstance, cap: Optional[int] = None) -> MetaJoint:
    """
    Enumerate the joint law of (t_1..t_m, u, w_1..w_m, d_1..d_m).

    Raises:
        StateSpaceTooLarge: if the joint table exceeds the cap
    """
    m = inst.m
    n_tasks = len(inst.env.tasks)
    n_sets = len(inst.env.sample_space) ** inst.n
    required = n_tasks ** m * inst.prior.size * n_sets ** m
    check_cap(required, cap)
    logger.info("Building meta joint with %d cells (m=%d, n=%d, gamma=%s)", required, m, inst.n, inst.gamma)

    spec = EnergySpec(hypotheses(inst), _energy_matrix(inst))
    posterior = build_posterior(spec, prior_dist(inst), inst.gamma)
    law = _task_data_law(inst)
    table = law[:, None, :] * posterior.table[None, :, :]
    shape = (n_tasks,) * m + inst.prior.shape + (n_sets,) * m
    axes = (
        [(f"t{i + 1}", tuple(range(n_tasks))) for i in range(m)]
        + [("u", inst.u_space)]
        + [(f"w{i + 1}", inst.w_space) for i in range(m)]
        + [(f"d{i + 1}", tuple(range(n_sets))) for i in range(m)]
    )
    return MetaJoint(JointDist(axes, table.reshape(shape)), m)


def _flat(inst: MetaInstance, joint: MetaJoint) -> np.ndarray:
    """Joint as (task assignments, hypotheses, dataset combinations)."""
    n_hyp = inst.prior.size
    n_assign = len(inst.env.tasks) ** inst.m
    return joint.joint.table.reshape(n_assign, n_hyp, -1)


def _ensure_joint(inst: MetaInstance, joint: Optional[MetaJoint], cap: Optional[int]) -> MetaJoint:
    return joint if joint is not None else build_meta_joint(inst, cap)


def empirical_meta_risk(inst: MetaInstance, joint: Optional[MetaJoint] = None, cap: Optional[int] = None) -> float:
    """E[L_E(U, W, D)] under the joint law of parameters and training data."""
    joint = _ensure_joint(inst, joint, cap)
    return float(np.sum(_flat(inst, joint) * _energy_matrix(inst)[None]))


def population_meta_risk(
    inst: MetaInstance,
    joint: Optional[MetaJoint] = None,
    mode: EnvironmentMode = EnvironmentMode.PER_TASK,
    cap: Optional[int] = None,
) -> float:
    """
    Risk of the learned (U, W_1..W_m) on data independent of the training draw.

    PER_TASK scores on fresh datasets from the same meta-training tasks,
    FOLDED on fresh tasks drawn from the environment.
    """
    joint = _ensure_joint(inst, joint, cap)
    flat = _flat(inst, joint)
    energy = _energy_matrix(inst)
    if mode is EnvironmentMode.FOLDED:
        p_h = flat.sum(axis=(0, 2))
        p_d = flat.sum(axis=(0, 1))
        return float(p_h @ energy @ p_d)
    p_t = flat.sum(axis=(1, 2))
    p_th = flat.sum(axis=2)
    p_td = flat.sum(axis=1)
    live = p_t > 0
    per_assignment = np.einsum("th,hc,tc->t", p_th[live], energy, p_td[live]) / p_t[live]
    return float(np.sum(per_assignment))


def gen_error_direct(
    inst: MetaInstance,
    joint: Optional[MetaJoint] = None,
    mode: EnvironmentMode = EnvironmentMode.PER_TASK,
    cap: Optional[int] = None,
) -> float:
    """Population meta risk minus empirical meta risk."""
    joint = _ensure_joint(inst, joint, cap)
    return population_meta_risk(inst, joint, mode) - empirical_meta_risk(inst, joint)


def meta_info_terms(joint: MetaJoint, mode: EnvironmentMode = EnvironmentMode.PER_TASK) -> info_measures.InfoTerms:
    """I, L and ISKL between (U, W_1..W_m) and (D_1..D_m), conditioned on tasks in PER_TASK mode."""
    z_axis = joint.task_axes if mode is EnvironmentMode.PER_TASK else None
    return info_measures.info_terms(joint.joint, joint.param_axes, joint.data_axes, z_axis)


def gen_error_skl(
    inst: MetaInstance,
    joint: Optional[MetaJoint] = None,
    mode: EnvironmentMode = EnvironmentMode.PER_TASK,
    cap: Optional[int] = None,
) -> float:
    """ISKL(U, W_1..W_m; D_1..D_m) / gamma."""
    if inst.gamma == 0:
        raise ZeroGamma("The symmetrized KL characterization divides by gamma, which is zero")
    joint = _ensure_joint(inst, joint, cap)
    return meta_info_terms(joint, mode).skl / inst.gamma


def environment_mixing_gap(inst: MetaInstance, joint: Optional[MetaJoint] = None, cap: Optional[int] = None) -> float:
    """ISKL with datasets mixed over the environment minus the task-conditional ISKL."""
    joint = _ensure_joint(inst, joint, cap)
    folded = meta_info_terms(joint, EnvironmentMode.FOLDED).skl
    per_task = meta_info_terms(joint, EnvironmentMode.PER_TASK).skl
    return folded - per_task


def readapted_population_meta_risk(inst: MetaInstance, joint: Optional[MetaJoint] = None, cap: Optional[int] = None) -> float:
    """
    Population meta risk with the base learner re-run on a fresh test task.

    U is drawn from its marginal, a test task from the environment, and W_T
    from the base-learner conditional P(w_i | u, d_i) of the joint, averaged
    over the m task slots.
    """
    joint = _ensure_joint(inst, joint, cap)
    tau = inst.env.task_prior.probs
    law = task_dataset_law(inst.env)
    task_risk = inst.loss @ inst.env.task_matrix.T  # (U, W, T)
    p_u = joint.joint.marginal(["u"]).table
    total = 0.0
    for w_axis, d_axis in zip(joint.w_axes, joint.data_axes):
        slot = joint.joint.marginal(["u", w_axis, d_axis]).table
        norm = slot.sum(axis=1, keepdims=True)
        cond = np.divide(slot, norm, out=np.zeros_like(slot), where=norm > 0)
        total += float(np.einsum("t,tk,u,uwk,uwt->", tau, law, p_u, cond, task_risk))
    return total / inst.m


def base_learner_factorization_check(inst: MetaInstance, joint: Optional[MetaJoint] = None, cap: Optional[int] = None) -> float:
    """
    Max total-variation distance between P(w_1..w_m | u, D) and prod_i P(w_i | u, d_i).

    Raises:
        NonFactorizedPrior: if the prior is not prior(u) * prod_i prior_i(w_i)
    """
    m = inst.m
    prior = inst.prior
    product = np.ones_like(prior)
    for axis in range(prior.ndim):
        others = tuple(a for a in range(prior.ndim) if a != axis)
        shape = [1] * prior.ndim
        shape[axis] = prior.shape[axis]
        product = product * prior.sum(axis=others).reshape(shape)
    if np.max(np.abs(product - prior)) > PROB_SUM_TOL:
        raise NonFactorizedPrior("Prior does not factorize over (u, w_1, ..., w_m)")

    joint = _ensure_joint(inst, joint, cap)
    names = ["u"] + list(joint.w_axes) + list(joint.data_axes)
    table = joint.joint.marginal(names).table
    w_axes = tuple(range(1, 1 + m))
    norm = table.sum(axis=w_axes, keepdims=True)
    conditional = np.divide(table, norm, out=np.zeros_like(table), where=norm > 0)

    factored = np.ones_like(table)
    for i in range(m):
        drop = tuple(a for a in range(1, 1 + 2 * m) if a not in (1 + i, 1 + m + i))
        slot = table.sum(axis=drop, keepdims=True) if drop else table
        slot_norm = slot.sum(axis=1 + i, keepdims=True)
        factored = factored * np.divide(slot, slot_norm, out=np.zeros_like(slot), where=slot_norm > 0)

    tv = 0.5 * np.sum(np.abs(conditional - factored), axis=w_axes)
    live = norm.reshape(tv.shape) > ZERO_SLICE_TOL
    return float(np.max(tv[live])) if np.any(live) else 0.0


def _four_way(inst: MetaInstance, joint: MetaJoint, mode: EnvironmentMode) -> np.ndarray:
    """Joint as (T, U, W, D) with grouped task-parameter and dataset axes; T is trivial when folded."""
    flat = _flat(inst, joint)
    if mode is EnvironmentMode.FOLDED:
        flat = flat.sum(axis=0, keepdims=True)
    n_u = len(inst.u_space)
    return flat.reshape(flat.shape[0], n_u, -1, flat.shape[2])


def skl_chain_decomposition(
    inst: MetaInstance,
    joint: Optional[MetaJoint] = None,
    mode: EnvironmentMode = EnvironmentMode.PER_TASK,
    cap: Optional[int] = None,
) -> Dict[str, float]:
    """
    Split ISKL(U, W; D) into ISKL(U; D) + I(W; D | U) + E_{P_U P_D}[D(P_{W|U} || P_{W|U,D})].

    Conditioned on task identities in PER_TASK mode. Returns the three terms,
    the total and the residual total - sum.
    """
    joint = _ensure_joint(inst, joint, cap)
    p = _four_way(inst, joint, mode)  # (T, U, W, D)
    n_t, n_u, n_w, n_d = p.shape

    total = info_measures.conditional_terms(np.moveaxis(p.reshape(n_t, n_u * n_w, n_d), 0, -1)).skl
    p_tud = p.sum(axis=2)
    meta_term = info_measures.conditional_terms(np.moveaxis(p_tud, 0, -1)).skl
    # I(W; D | U, T): X = W, Y = D, Z = (U, T)
    task_term = info_measures.conditional_terms(
        np.transpose(p, (2, 3, 1, 0)).reshape(n_w, n_d, n_u * n_t), with_lautum=False
    ).mutual

    p_t = p.sum(axis=(1, 2, 3))
    p_tu = p.sum(axis=(2, 3))
    p_td = p.sum(axis=(1, 2))
    p_tuw = p.sum(axis=3)
    p_w_given_tu = np.divide(p_tuw, p_tu[:, :, None], out=np.zeros_like(p_tuw), where=p_tu[:, :, None] > 0)
    p_w_given_tud = np.divide(p, p_tud[:, :, None, :], out=np.zeros_like(p), where=p_tud[:, :, None, :] > 0)
    outer = np.divide(p_tu[:, :, None] * p_td[:, None, :], p_t[:, None, None],
                      out=np.zeros((n_t, n_u, n_d)), where=p_t[:, None, None] > 0)
    prior_side = np.broadcast_to(p_w_given_tu[:, :, :, None], p.shape)
    weight = np.broadcast_to(outer[:, :, None, :], p.shape)
    bad = (weight > 0) & (prior_side > 0) & (p_w_given_tud <= 0)
    if np.any(bad):
        raise SupportMismatch("P(w | u, d) vanishes where P(w | u) is positive")
    with np.errstate(invalid="ignore"):
        cells = weight * rel_entr(prior_side, p_w_given_tud)
    lautum_term = float(np.sum(np.where(weight > 0, cells, 0.0)))

    parts = meta_term + task_term + lautum_term
    return {
        "iskl_meta": meta_term,
        "mi_task_given_meta": task_term,
        "lautum_expansion": lautum_term,
        "iskl_total": total,
        "residual": total - parts,
    }


def theorem1_report(
    inst: MetaInstance,
    mode: EnvironmentMode = EnvironmentMode.PER_TASK,
    cap: Optional[int] = None,
    tolerance: float = IDENTITY_TOL,
) -> Dict[str, Any]:
    """All quantities of the exact generalization identity for one instance, as a JSON record."""
    joint = build_meta_joint(inst, cap)
    emp = empirical_meta_risk(inst, joint)
    pop = population_meta_risk(inst, joint, mode)
    terms = meta_info_terms(joint, mode)
    gen_direct = pop - emp
    gen_skl = terms.skl / inst.gamma if inst.gamma > 0 else None
    residual = abs(gen_direct - gen_skl) if gen_skl is not None else None
    decomposition = skl_chain_decomposition(inst, joint, mode)

    try:
        factorization = base_learner_factorization_check(inst, joint)
    except NonFactorizedPrior:
        factorization = None

    readapted = readapted_population_meta_risk(inst, joint)
    if residual is not None and residual > tolerance:
        logger.warning("Identity residual %.3e exceeds tolerance %.1e", residual, tolerance)
    return {
        "mode": mode.value,
        "gamma": inst.gamma,
        "m": inst.m,
        "n": inst.n,
        "empirical_meta_risk": emp,
        "population_meta_risk": pop,
        "gen_direct": gen_direct,
        "gen_skl": gen_skl,
        "residual": residual,
        "iskl": terms.skl,
        "mi": terms.mutual,
        "lautum": terms.lautum,
        "decomposition": decomposition,
        "factorization_deviation": factorization,
        "readapted_population_meta_risk": readapted,
        "readapted_gap": readapted - emp,
        "environment_mixing_gap": environment_mixing_gap(inst, joint),
    }


def conditional_gen_gap(inst: MetaInstance, sample: MetaSample) -> float:
    """
    E[population risk - empirical risk | tasks, datasets] under the posterior.

    The population risk scores each task slot on fresh data from its own
    task, so the expectation of this gap is the PER_TASK generalization error.
    """
    posterior = meta_gibbs_posterior(inst, sample.datasets)
    task_risk = inst.loss @ inst.env.task_matrix.T  # (U, W, T)
    risk = task_risk_table(inst)
    gap = np.zeros(inst.prior.shape)
    for i, (task, dataset) in enumerate(zip(sample.task_ids, np.atleast_2d(sample.datasets))):
        k = dataset_index(inst.env, dataset)
        shape = [1] * (1 + inst.m)
        shape[0], shape[1 + i] = risk.shape[0], risk.shape[1]
        gap = gap + (task_risk[:, :, task] - risk[:, :, k]).reshape(shape)
    return float(posterior.probs @ gap.reshape(-1)) / inst.m


def gen_error_monte_carlo(inst: MetaInstance, trials: int, master_seed: int) -> Tuple[float, float]:
    """PER_TASK generalization error and its standard error from sampled meta-training draws."""
    estimate, stderr = monte_carlo_expectation(
        inst.env, lambda sample: conditional_gen_gap(inst, sample), trials, master_seed
    )
    logger.info("Meta Gibbs Monte Carlo: %d trials, gen %.6g +/- %.2g", trials, estimate, stderr)
    return estimate, stderr
