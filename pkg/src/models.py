"""
Data models for the meta Gibbs laboratory.

This file contains the classes that represent the core data structures used
across the laboratory: finite and Gaussian distributions, Gibbs energies and
posteriors, task environments, meta-learning and super-task instances, and
bound reports.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import PROB_SUM_TOL
from src.errors import ShapeMismatch, UnknownAxis, ValidationError


class InfoKind(Enum):
    """Which KL-type information measure to compute."""
    MUTUAL = "mutual"
    LAUTUM = "lautum"
    SKL = "skl"


class SampleLaw(Enum):
    """Per-sample law of the mean-estimation tasks (both share mean and covariance)."""
    GAUSSIAN = "gaussian"
    SHIFTED_RADEMACHER = "shifted-rademacher"


class EnvironmentMode(Enum):
    """How the task environment enters information measures and risks."""
    PER_TASK = "per-task"   # condition on task identities, then average over the environment
    FOLDED = "folded"       # use the environment-mixed dataset law


class Experiment(Enum):
    """Experiments the CLI can run."""
    VERIFY_THEOREM1 = "verify-theorem1"
    VERIFY_THEOREM2 = "verify-theorem2"
    MEAN_ESTIMATION = "mean-estimation"
    BOUNDS = "bounds"
    RATE_SWEEP = "rate-sweep"


class Family(Enum):
    """Instance families supported by the rate sweep."""
    MEAN_EST = "mean_est"
    FINITE = "finite"


def _check_probs(probs: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(probs)):
        raise ValidationError(f"{what}: probabilities must be finite")
    if np.any(probs < 0):
        raise ValidationError(f"{what}: probabilities must be nonnegative")
    total = float(np.sum(probs))
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValidationError(f"{what}: probabilities sum to {total!r}, not 1")


@dataclass
class DiscreteDist:
    """A probability vector over an ordered list of unique outcomes."""
    outcomes: Tuple[Any, ...]
    probs: np.ndarray

    def __post_init__(self):
        self.outcomes = tuple(self.outcomes)
        self.probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(set(self.outcomes)) != len(self.outcomes):
            raise ValidationError("DiscreteDist: outcome identifiers must be unique")
        if len(self.outcomes) != self.probs.size:
            raise ValidationError("DiscreteDist: one probability per outcome is required")
        _check_probs(self.probs, "DiscreteDist")

    @classmethod
    def from_probs(cls, probs: Sequence[float], outcomes: Optional[Sequence[Any]] = None) -> "DiscreteDist":
        """Build a distribution, labelling outcomes 0..k-1 when no labels are given."""
        probs = np.asarray(probs, dtype=float).reshape(-1)
        if outcomes is None:
            outcomes = range(probs.size)
        return cls(tuple(outcomes), probs)

    @classmethod
    def uniform(cls, outcomes: Sequence[Any]) -> "DiscreteDist":
        outcomes = tuple(outcomes)
        return cls(outcomes, np.full(len(outcomes), 1.0 / len(outcomes)))

    @classmethod
    def bernoulli(cls, p: float) -> "DiscreteDist":
        """Bern(p) over outcomes (0, 1)."""
        return cls((0, 1), np.array([1.0 - p, p]))

    @property
    def size(self) -> int:
        return self.probs.size

    def prob(self, outcome: Any) -> float:
        return float(self.probs[self.outcomes.index(outcome)])

    def to_tree(self) -> Dict[str, Any]:
        return {"outcomes": list(self.outcomes), "probs": self.probs.tolist()}

    @classmethod
    def from_tree(cls, tree: Dict[str, Any]) -> "DiscreteDist":
        return cls(tuple(tree["outcomes"]), np.asarray(tree["probs"], dtype=float))


@dataclass
class JointDist:
    """
    A probability table over named finite variables.

    `axes` is a list of (name, outcomes) pairs; `table` has one array axis
    per named variable, in the same order.
    """
    axes: List[Tuple[str, Tuple[Any, ...]]]
    table: np.ndarray

    def __post_init__(self):
        self.axes = [(name, tuple(outcomes)) for name, outcomes in self.axes]
        self.table = np.asarray(self.table, dtype=float)
        names = self.names
        if len(set(names)) != len(names):
            raise ValidationError("JointDist: axis names must be unique")
        expected = tuple(len(outcomes) for _, outcomes in self.axes)
        if self.table.shape != expected:
            raise ValidationError(
                f"JointDist: table shape {self.table.shape} does not match axes {expected}"
            )
        _check_probs(self.table, "JointDist")

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.axes]

    def outcomes_of(self, name: str) -> Tuple[Any, ...]:
        return self.axes[self.names.index(name)][1]

    def marginal(self, names: Sequence[str]) -> "JointDist":
        """Marginal over the named axes, returned in the order given."""
        names = [names] if isinstance(names, str) else list(names)
        missing = [name for name in names if name not in self.names]
        if missing:
            raise UnknownAxis(f"Unknown axes {missing}; joint has {self.names}")
        keep = [self.names.index(name) for name in names]
        drop = tuple(i for i in range(len(self.axes)) if i not in keep)
        table = self.table.sum(axis=drop)
        # after summing, remaining axes are in ascending original order
        remaining = sorted(keep)
        table = np.transpose(table, [remaining.index(i) for i in keep])
        return JointDist([self.axes[i] for i in keep], table)

    def to_tree(self) -> Dict[str, Any]:
        """JSON-compatible tree: axes with outcome labels and the row-major table."""
        return {
            "axes": [{"name": name, "outcomes": list(outcomes)} for name, outcomes in self.axes],
            "table": self.table.reshape(-1).tolist(),
        }

    @classmethod
    def from_tree(cls, tree: Dict[str, Any]) -> "JointDist":
        axes = [(axis["name"], tuple(axis["outcomes"])) for axis in tree["axes"]]
        shape = tuple(len(outcomes) for _, outcomes in axes)
        return cls(axes, np.asarray(tree["table"], dtype=float).reshape(shape))


@dataclass
class GaussianDist:
    """A multivariate Gaussian given by mean and covariance."""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ValidationError("GaussianDist: covariance must be d x d")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=0.0):
            raise ValidationError("GaussianDist: covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(self.cov)) < -1e-12:
            raise ValidationError("GaussianDist: covariance must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass
class GaussianChannel:
    """The linear channel Y = A X + N with Gaussian noise N independent of X."""
    A: np.ndarray
    input_cov: np.ndarray
    noise_cov: np.ndarray
    input_gaussian: bool = True

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.input_cov = np.atleast_2d(np.asarray(self.input_cov, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        d_y, d_x = self.A.shape
        if self.input_cov.shape != (d_x, d_x):
            raise ValidationError("GaussianChannel: input covariance must be d_X x d_X")
        if self.noise_cov.shape != (d_y, d_y):
            raise ValidationError("GaussianChannel: noise covariance must be d_Y x d_Y")

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.noise_cov))


@dataclass
class EnergySpec:
    """Energy f(y, x) over a finite hypothesis space, one column per data context."""
    hypotheses: Tuple[Any, ...]
    energy: np.ndarray
    contexts: Optional[Tuple[Any, ...]] = None

    def __post_init__(self):
        self.hypotheses = tuple(self.hypotheses)
        energy = np.asarray(self.energy, dtype=float)
        if energy.ndim == 1:
            energy = energy[:, None]
        self.energy = energy
        if energy.shape[0] != len(self.hypotheses):
            raise ValidationError("EnergySpec: one energy row per hypothesis is required")
        if not np.all(np.isfinite(energy)):
            raise ValidationError("EnergySpec: energies must be finite")
        if self.contexts is None:
            self.contexts = tuple(range(energy.shape[1]))
        self.contexts = tuple(self.contexts)
        if len(self.contexts) != energy.shape[1]:
            raise ValidationError("EnergySpec: one energy column per context is required")

    def context_index(self, x: Any) -> int:
        return self.contexts.index(x)


@dataclass
class GibbsPosterior:
    """Gibbs posteriors for every data context of an EnergySpec."""
    gamma: float
    prior: DiscreteDist
    table: np.ndarray            # (n_hypotheses, n_contexts), columns sum to one
    log_partition: np.ndarray    # (n_contexts,)

    def per_context(self, j: int) -> DiscreteDist:
        return DiscreteDist(self.prior.outcomes, self.table[:, j])


@dataclass
class FiniteEnvironment:
    """A finite task environment: tasks are per-sample laws over a finite sample space."""
    sample_space: Tuple[Any, ...]
    tasks: List[DiscreteDist]
    task_prior: DiscreteDist
    m: int
    n: int

    def __post_init__(self):
        self.sample_space = tuple(self.sample_space)
        if self.m < 1 or self.n < 1:
            raise ValidationError("FiniteEnvironment: m and n must be at least 1")
        if self.task_prior.size != len(self.tasks):
            raise ValidationError("FiniteEnvironment: task prior must cover every task")
        for task in self.tasks:
            if task.outcomes != self.sample_space:
                raise ValidationError("FiniteEnvironment: every task must live on the sample space")

    @property
    def task_matrix(self) -> np.ndarray:
        """(n_tasks, |Z|) per-sample probabilities."""
        return np.stack([task.probs for task in self.tasks])


@dataclass
class MetaSample:
    """One draw of meta-training data: task identities and an m x n array of sample indices."""
    task_ids: Tuple[int, ...]
    datasets: np.ndarray
    probability: Optional[float] = None
    seed_path: Optional[Tuple[int, int]] = None


@dataclass
class MetaInstance:
    """A meta Gibbs problem small enough to enumerate exactly."""
    env: FiniteEnvironment
    u_space: Tuple[Any, ...]
    w_space: Tuple[Any, ...]
    loss: np.ndarray        # (|U|, |W|, |Z|)
    gamma: float
    prior: np.ndarray       # (|U|, |W|, ..., |W|) with m task axes

    def __post_init__(self):
        self.u_space = tuple(self.u_space)
        self.w_space = tuple(self.w_space)
        self.loss = np.asarray(self.loss, dtype=float)
        self.prior = np.asarray(self.prior, dtype=float)
        expected = (len(self.u_space), len(self.w_space), len(self.env.sample_space))
        if self.loss.shape != expected:
            raise ValidationError(f"MetaInstance: loss must have shape {expected}")
        if not np.all(np.isfinite(self.loss)) or np.any(self.loss < 0):
            raise ValidationError("MetaInstance: loss must be finite and nonnegative")
        prior_shape = (len(self.u_space),) + (len(self.w_space),) * self.env.m
        if self.prior.shape != prior_shape:
            raise ValidationError(f"MetaInstance: prior must have shape {prior_shape}")
        _check_probs(self.prior, "MetaInstance prior")

    @property
    def m(self) -> int:
        return self.env.m

    @property
    def n(self) -> int:
        return self.env.n

    @property
    def loss_range(self) -> Tuple[float, float]:
        return float(self.loss.min()), float(self.loss.max())


@dataclass
class MetaJoint:
    """
    The exact joint law of task identities, learned parameters and datasets.

    Axes are ``t1..tm`` (task identities), ``u``, ``w1..wm`` and ``d1..dm``
    (per-task dataset indices).
    """
    joint: JointDist
    m: int

    @property
    def task_axes(self) -> Tuple[str, ...]:
        return tuple(f"t{i + 1}" for i in range(self.m))

    @property
    def w_axes(self) -> Tuple[str, ...]:
        return tuple(f"w{i + 1}" for i in range(self.m))

    @property
    def data_axes(self) -> Tuple[str, ...]:
        return tuple(f"d{i + 1}" for i in range(self.m))

    @property
    def param_axes(self) -> Tuple[str, ...]:
        return ("u",) + self.w_axes


@dataclass
class MeanEstConfig:
    """Parameters of the Gaussian mean-estimation example."""
    m: int
    n: int
    d: int
    alpha: float
    gamma: float
    sigma_z: float = 1.0
    sigma_tau: float = 1.0
    sample_law: SampleLaw = SampleLaw.GAUSSIAN

    def __post_init__(self):
        if isinstance(self.sample_law, str):
            self.sample_law = SampleLaw(self.sample_law)
        if min(self.m, self.n, self.d) < 1:
            raise ValidationError("MeanEstConfig: m, n and d must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("MeanEstConfig: alpha must lie in [0, 1]")
        if self.gamma <= 0:
            raise ValidationError("MeanEstConfig: gamma must be positive")
        if self.sigma_z <= 0 or self.sigma_tau < 0:
            raise ValidationError("MeanEstConfig: sigma_z must be positive, sigma_tau nonnegative")


@dataclass
class PosteriorParams:
    """Mean (W_1..W_m, U) and precision of the mean-estimation Gibbs posterior."""
    mean: np.ndarray
    precision: np.ndarray
    m: int
    d: int

    def block(self, i: int, j: int) -> np.ndarray:
        """The d x d precision block between parameter blocks i and j (index m is U)."""
        d = self.d
        return self.precision[i * d:(i + 1) * d, j * d:(j + 1) * d]

    @property
    def mean_w(self) -> np.ndarray:
        return self.mean[: self.m * self.d].reshape(self.m, self.d)

    @property
    def mean_u(self) -> np.ndarray:
        return self.mean[self.m * self.d:]


@dataclass
class SuperSample:
    """
    The n x 4m super-sample.

    Task pair i holds groups g = 2i + k (k in {0, 1}); group g holds columns
    2g + l (l in {0, 1}). Entries are sample indices.
    """
    z: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=int)
        if self.z.shape != (self.n, 4 * self.m):
            raise ShapeMismatch(f"Super-sample must have shape {(self.n, 4 * self.m)}, got {self.z.shape}")

    def cell(self, i: int, k: int, j: int, l: int) -> int:
        return int(self.z[j, 2 * (2 * i + k) + l])


@dataclass
class Masks:
    """Membership masks of the super-sample: task mask s_hat (m,) and sample mask s (n, 2m)."""
    s_hat: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.s_hat = np.asarray(self.s_hat, dtype=int).reshape(-1)
        self.s = np.atleast_2d(np.asarray(self.s, dtype=int))
        if not (np.isin(self.s_hat, (0, 1)).all() and np.isin(self.s, (0, 1)).all()):
            raise ValidationError("Masks: entries must be binary")

    def flipped(self) -> "Masks":
        return Masks(1 - self.s_hat, 1 - self.s)


@dataclass
class SuperInstance:
    """A super-task Gibbs problem with product priors over (u, w) per task."""
    sample_space: Tuple[Any, ...]
    tasks: List[DiscreteDist]
    task_prior: DiscreteDist
    u_space: Tuple[Any, ...]
    w_space: Tuple[Any, ...]
    loss: np.ndarray         # (|U|, |W|, |Z|)
    gamma: float
    prior_u: np.ndarray
    prior_w: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        self.sample_space = tuple(self.sample_space)
        self.u_space = tuple(self.u_space)
        self.w_space = tuple(self.w_space)
        self.loss = np.asarray(self.loss, dtype=float)
        self.prior_u = np.asarray(self.prior_u, dtype=float)
        self.prior_w = np.asarray(self.prior_w, dtype=float)
        if self.m < 1 or self.n < 1:
            raise ValidationError("SuperInstance: m and n must be at least 1")
        expected = (len(self.u_space), len(self.w_space), len(self.sample_space))
        if self.loss.shape != expected:
            raise ValidationError(f"SuperInstance: loss must have shape {expected}")
        if not np.all(np.isfinite(self.loss)) or np.any(self.loss < 0):
            raise ValidationError("SuperInstance: loss must be finite and nonnegative")
        if self.task_prior.size != len(self.tasks):
            raise ValidationError("SuperInstance: task prior must cover every task")
        if self.prior_u.shape != (len(self.u_space),) or self.prior_w.shape != (len(self.w_space),):
            raise ValidationError("SuperInstance: priors must match the parameter spaces")
        _check_probs(self.prior_u, "SuperInstance prior_u")
        _check_probs(self.prior_w, "SuperInstance prior_w")

    @property
    def loss_range(self) -> Tuple[float, float]:
        return float(self.loss.min()), float(self.loss.max())


@dataclass
class SuperLosses:
    """The four super-task losses plus the cross losses of training-task parameters on held-out tasks."""
    hat: float
    bar: float
    tilde: float
    pop: float
    cross_train: float
    cross_test: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "hat": self.hat, "bar": self.bar, "tilde": self.tilde, "pop": self.pop,
            "cross_train": self.cross_train, "cross_test": self.cross_test,
        }


@dataclass
class BoundReport:
    """A generalization value checked against an upper bound."""
    gen_value: float
    bound_value: float
    ingredients: Dict[str, Any] = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.bound_value - self.gen_value

    def as_dict(self) -> Dict[str, Any]:
        return {
            "gen_value": self.gen_value,
            "bound_value": self.bound_value,
            "slack": self.slack,
            "ingredients": dict(self.ingredients),
        }


@dataclass
class ExperimentConfig:
    """A validated experiment description, as loaded from a JSON config file."""
    experiment: Experiment
    instance: Dict[str, Any]
    gamma: Optional[float] = None
    trials: int = 0
    master_seed: int = 0
    cap: int = 0
    out_dir: Optional[str] = None
    grid: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment.value,
            "instance": self.instance,
            "gamma": self.gamma,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "cap": self.cap,
            "out_dir": self.out_dir,
            "grid": self.grid,
        }
