"""
Shared test fixtures and configuration.
"""

import pytest
import os
import sys

import numpy as np

# Add the project root directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.models import (
    DiscreteDist, FiniteEnvironment, MetaInstance, SuperInstance
)

CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'configs'))

# loss(u, w, z) = 0.5 [w != z] + 0.5 [u != w], indexed [u][w][z]
BERN2_LOSS = np.array([
    [[0.0, 0.5], [1.0, 0.5]],
    [[0.5, 1.0], [0.5, 0.0]],
])


def bern2_tasks():
    return [DiscreteDist.bernoulli(0.2), DiscreteDist.bernoulli(0.8)]


def make_bern2_env(m=2, n=1):
    return FiniteEnvironment(
        sample_space=(0, 1),
        tasks=bern2_tasks(),
        task_prior=DiscreteDist.uniform((0, 1)),
        m=m,
        n=n,
    )


def make_bern2_instance(m=2, n=1, gamma=1.0):
    return MetaInstance(
        env=make_bern2_env(m, n),
        u_space=(0, 1),
        w_space=(0, 1),
        loss=BERN2_LOSS,
        gamma=gamma,
        prior=np.full((2,) * (m + 1), 0.5 ** (m + 1)),
    )


@pytest.fixture
def bern2_factory():
    """Factory of bern2 instances with other m, n or gamma."""
    return make_bern2_instance


@pytest.fixture
def bern2_env():
    """Two Bernoulli tasks, Bern(0.2) and Bern(0.8), equally likely; m=2, n=1."""
    return make_bern2_env()


@pytest.fixture
def bern2_instance():
    """The bern2 environment with binary U and W, a 0-1 style loss and a uniform prior."""
    return make_bern2_instance()


@pytest.fixture
def tiny_super_instance():
    """Super-task instance with m=1, n=1, |Z| = |U| = |W| = 2."""
    return SuperInstance(
        sample_space=(0, 1),
        tasks=bern2_tasks(),
        task_prior=DiscreteDist.uniform((0, 1)),
        u_space=(0, 1),
        w_space=(0, 1),
        loss=BERN2_LOSS,
        gamma=2.0,
        prior_u=np.array([0.5, 0.5]),
        prior_w=np.array([0.5, 0.5]),
        m=1,
        n=1,
    )


def _simplex(rng, size):
    probs = rng.dirichlet(np.ones(size))
    probs = np.maximum(probs, 1e-3)
    return probs / probs.sum()


@pytest.fixture
def random_meta_instance():
    """Factory of random enumerable meta instances (|Z|, |U|, |W| <= 3, m <= 2, n <= 2)."""
    def make(seed, product_prior=True):
        rng = np.random.default_rng(seed)
        n_z, n_u, n_w = rng.integers(2, 4, size=3)
        m, n = rng.integers(1, 3, size=2)
        n_tasks = int(rng.integers(1, 3))
        env = FiniteEnvironment(
            sample_space=tuple(range(n_z)),
            tasks=[DiscreteDist(tuple(range(n_z)), _simplex(rng, n_z)) for _ in range(n_tasks)],
            task_prior=DiscreteDist.from_probs(_simplex(rng, n_tasks)),
            m=int(m),
            n=int(n),
        )
        if product_prior:
            prior = _simplex(rng, n_u)
            w_prior = _simplex(rng, n_w)
            for _ in range(m):
                prior = np.multiply.outer(prior, w_prior)
        else:
            prior = _simplex(rng, n_u * n_w ** m).reshape((n_u,) + (n_w,) * m)
        return MetaInstance(
            env=env,
            u_space=tuple(range(n_u)),
            w_space=tuple(range(n_w)),
            loss=rng.uniform(0.0, 1.0, size=(n_u, n_w, n_z)),
            gamma=float(rng.choice([0.5, 1.0, 2.0])),
            prior=prior / prior.sum(),
        )
    return make


@pytest.fixture
def random_super_instance():
    """Factory of random super-task instances with m=1, n in {1, 2} and binary Z, U, W."""
    def make(seed, n=None):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 3)) if n is None else n
        return SuperInstance(
            sample_space=(0, 1),
            tasks=[DiscreteDist((0, 1), _simplex(rng, 2)) for _ in range(2)],
            task_prior=DiscreteDist.from_probs(_simplex(rng, 2)),
            u_space=(0, 1),
            w_space=(0, 1),
            loss=rng.uniform(0.0, 1.0, size=(2, 2, 2)),
            gamma=float(rng.choice([0.5, 1.0, 2.0])),
            prior_u=_simplex(rng, 2),
            prior_w=_simplex(rng, 2),
            m=1,
            n=n,
        )
    return make
