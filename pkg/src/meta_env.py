"""
Finite task environments: exact enumeration and seeded sampling of meta-training data.

Datasets are stored as arrays of sample indices into ``env.sample_space``.
A task's dataset of n samples has a flat index in row-major order over
|Z|^n, which is how dataset axes of enumerated joints are labelled.
"""

import itertools
import logging
from enum import IntEnum
from typing import Callable, Iterator, Optional, Tuple

import numpy as np

from src.config import DEFAULT_STATE_CAP, ENUM_SUM_TOL
from src.errors import StateSpaceTooLarge, ValidationError
from src.models import FiniteEnvironment, MetaSample

logger = logging.getLogger(__name__)


class Role(IntEnum):
    """Tags that keep random substreams of different purposes apart."""
    TRAIN = 0
    TEST = 1
    MEAN_EST = 2


def substream(master_seed: int, role: Role, index: int) -> np.random.Generator:
    """Counter-based generator for (master_seed, role, index), independent of execution order."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(role), int(index)))
    return np.random.default_rng(seq)


def check_cap(required: int, cap: Optional[int]) -> None:
    cap = DEFAULT_STATE_CAP if cap is None else cap
    if required > cap:
        raise StateSpaceTooLarge(required, cap)


def dataset_tuples(env: FiniteEnvironment) -> np.ndarray:
    """(|Z|^n, n) array: row k lists the sample indices of dataset k."""
    k = len(env.sample_space)
    return np.array(list(itertools.product(range(k), repeat=env.n)), dtype=int).reshape(-1, env.n)


def dataset_index(env: FiniteEnvironment, samples: np.ndarray) -> int:
    """Flat index of one task's dataset (inverse of dataset_tuples)."""
    return int(np.ravel_multi_index(tuple(np.asarray(samples, dtype=int)), (len(env.sample_space),) * env.n))


def task_dataset_law(env: FiniteEnvironment) -> np.ndarray:
    """(n_tasks, |Z|^n) law of a single task's dataset given the task identity."""
    tuples = dataset_tuples(env)
    return np.prod(env.task_matrix[:, tuples], axis=-1)


def dataset_law(env: FiniteEnvironment) -> np.ndarray:
    """(|Z|^n,) law of a single task's dataset with the task drawn from the environment."""
    return env.task_prior.probs @ task_dataset_law(env)


def state_count(env: FiniteEnvironment) -> int:
    return len(env.tasks) ** env.m * len(env.sample_space) ** (env.m * env.n)


def enumerate_meta_datasets(env: FiniteEnvironment, cap: Optional[int] = None) -> Iterator[MetaSample]:
    """
    Every (task assignment, datasets) pair with positive probability, exactly once.

    Raises:
        StateSpaceTooLarge: if |tasks|^m |Z|^(mn) exceeds the cap
    """
    required = state_count(env)
    check_cap(required, cap)
    logger.info("Enumerating %d meta-training states (m=%d, n=%d)", required, env.m, env.n)

    law = task_dataset_law(env)
    tuples = dataset_tuples(env)
    tau = env.task_prior.probs
    n_tasks, n_sets = law.shape
    total = 0.0
    for task_ids in itertools.product(range(n_tasks), repeat=env.m):
        task_weight = float(np.prod(tau[list(task_ids)]))
        if task_weight == 0.0:
            continue
        for set_ids in itertools.product(range(n_sets), repeat=env.m):
            probability = task_weight * float(np.prod(law[list(task_ids), list(set_ids)]))
            if probability == 0.0:
                continue
            total += probability
            yield MetaSample(task_ids=task_ids, datasets=tuples[list(set_ids)], probability=probability)
    if abs(total - 1.0) > ENUM_SUM_TOL:
        raise ValidationError(f"Enumerated probabilities sum to {total!r}")


def _draw_task(env: FiniteEnvironment, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    task_ids = rng.choice(len(env.tasks), size=size, p=env.task_prior.probs)
    samples = np.empty((size, env.n), dtype=int)
    for i, task in enumerate(task_ids):
        samples[i] = rng.choice(len(env.sample_space), size=env.n, p=env.tasks[task].probs)
    return task_ids, samples


def sample_meta_datasets(env: FiniteEnvironment, master_seed: int, trial_index: int) -> MetaSample:
    """One meta-training draw, deterministic in (master_seed, trial_index)."""
    rng = substream(master_seed, Role.TRAIN, trial_index)
    task_ids, samples = _draw_task(env, rng, env.m)
    return MetaSample(
        task_ids=tuple(int(t) for t in task_ids),
        datasets=samples,
        seed_path=(int(master_seed), int(trial_index)),
    )


def test_task_draw(env: FiniteEnvironment, seed: int, index: int) -> Tuple[int, np.ndarray]:
    """A fresh task from the environment and its n samples, on the test substream."""
    rng = substream(seed, Role.TEST, index)
    task_ids, samples = _draw_task(env, rng, 1)
    return int(task_ids[0]), samples[0]


def enumerated_expectation(env: FiniteEnvironment, fn: Callable[[MetaSample], float], cap: Optional[int] = None) -> float:
    """E[fn(sample)] by exact enumeration."""
    samples = list(enumerate_meta_datasets(env, cap))
    values = np.array([fn(s) for s in samples])
    weights = np.array([s.probability for s in samples])
    return float(np.sum(weights * values))


def monte_carlo_expectation(
    env: FiniteEnvironment,
    fn: Callable[[MetaSample], float],
    trials: int,
    master_seed: int,
) -> Tuple[float, float]:
    """Monte Carlo estimate of E[fn(sample)] and its standard error."""
    if trials < 2:
        raise ValidationError("At least two trials are needed for a standard error")
    values = np.array([fn(sample_meta_datasets(env, master_seed, i)) for i in range(trials)])
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(trials))
