"""
Data management for the meta Gibbs laboratory.

This file handles loading and validating experiment configs, turning their
inline instance descriptions into model objects, hashing configs, and
writing reports (JSON) and tables (CSV).
"""

import hashlib
import json
import logging
import os
from typing import Any, Dict, Optional, Type, TypeVar

import numpy as np
import pandas as pd

from src.config import DEFAULT_MASTER_SEED, DEFAULT_OUT_DIR, DEFAULT_STATE_CAP, DEFAULT_TRIALS
from src.errors import ConfigInvalid, LabError
from src.models import (
    DiscreteDist,
    EnvironmentMode,
    Experiment,
    ExperimentConfig,
    Family,
    FiniteEnvironment,
    MeanEstConfig,
    MetaInstance,
    SampleLaw,
    SuperInstance,
)

logger = logging.getLogger(__name__)

E = TypeVar("E")

CONFIG_KEYS = {"experiment", "instance", "gamma", "trials", "master_seed", "cap", "out_dir", "grid"}
FINITE_KEYS = {
    "sample_space", "tasks", "task_prior", "m", "n", "u_space", "w_space",
    "loss", "prior", "prior_u", "prior_w", "modes",
}
MEAN_EST_KEYS = {"m", "n", "d", "alpha", "sigma_z", "sigma_tau", "sample_law", "invariance", "rao_blackwell"}
GRID_KEYS = {"family", "points"}

# Keys left out of the hash: where results go does not change what they are
UNHASHED_KEYS = {"out_dir"}


def enum_from_config(cls: Type[E], raw: Any) -> E:
    """Look an Enum member up by value ("per-task") or by name ("PER_TASK")."""
    if isinstance(raw, cls):
        return raw
    try:
        return cls(raw)
    except ValueError:
        pass
    try:
        return cls[str(raw).upper().replace("-", "_")]
    except KeyError:
        choices = ", ".join(member.value for member in cls)
        raise ConfigInvalid(f"Unknown {cls.__name__} {raw!r}; expected one of: {choices}")


def _require(tree: Dict[str, Any], keys, where: str) -> None:
    missing = [key for key in keys if key not in tree]
    if missing:
        raise ConfigInvalid(f"{where}: missing keys {sorted(missing)}")


def _reject_unknown(tree: Dict[str, Any], allowed, where: str) -> None:
    unknown = set(tree) - set(allowed)
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {sorted(unknown)}")


def _uniform(size: int) -> np.ndarray:
    return np.full(size, 1.0 / size)


def build_environment(instance: Dict[str, Any], m: Optional[int] = None, n: Optional[int] = None) -> FiniteEnvironment:
    """A FiniteEnvironment from an inline description; m and n may be overridden (rate sweeps)."""
    _require(instance, ("sample_space", "tasks", "task_prior", "m", "n"), "instance")
    space = tuple(instance["sample_space"])
    tasks = [DiscreteDist(space, np.asarray(probs, dtype=float)) for probs in instance["tasks"]]
    return FiniteEnvironment(
        sample_space=space,
        tasks=tasks,
        task_prior=DiscreteDist.from_probs(instance["task_prior"]),
        m=int(instance["m"] if m is None else m),
        n=int(instance["n"] if n is None else n),
    )


def _parameter_priors(instance: Dict[str, Any]):
    n_u, n_w = len(instance["u_space"]), len(instance["w_space"])
    prior_u = np.asarray(instance["prior_u"], dtype=float) if "prior_u" in instance else _uniform(n_u)
    prior_w = np.asarray(instance["prior_w"], dtype=float) if "prior_w" in instance else _uniform(n_w)
    return prior_u, prior_w


def build_meta_instance(
    instance: Dict[str, Any],
    gamma: float,
    m: Optional[int] = None,
    n: Optional[int] = None,
) -> MetaInstance:
    """
    A MetaInstance from an inline description.

    The joint prior is either given in full ("prior", shape (|U|,) + (|W|,)*m)
    or built as prior_u x prior_w^m (both default to uniform).
    """
    _require(instance, ("u_space", "w_space", "loss"), "instance")
    env = build_environment(instance, m, n)
    if "prior" in instance and m is None:
        prior = np.asarray(instance["prior"], dtype=float)
    elif "prior" in instance:
        raise ConfigInvalid("A full joint prior cannot be resized; give prior_u and prior_w instead")
    else:
        prior_u, prior_w = _parameter_priors(instance)
        prior = prior_u
        for _ in range(env.m):
            prior = np.multiply.outer(prior, prior_w)
    return MetaInstance(
        env=env,
        u_space=tuple(instance["u_space"]),
        w_space=tuple(instance["w_space"]),
        loss=np.asarray(instance["loss"], dtype=float),
        gamma=float(gamma),
        prior=prior,
    )


def build_super_instance(instance: Dict[str, Any], gamma: float) -> SuperInstance:
    """A SuperInstance from an inline description (product priors, uniform by default)."""
    if "prior" in instance:
        raise ConfigInvalid("Super-task instances take prior_u and prior_w, not a joint prior")
    env = build_environment(instance)
    prior_u, prior_w = _parameter_priors(instance)
    return SuperInstance(
        sample_space=env.sample_space,
        tasks=env.tasks,
        task_prior=env.task_prior,
        u_space=tuple(instance["u_space"]),
        w_space=tuple(instance["w_space"]),
        loss=np.asarray(instance["loss"], dtype=float),
        gamma=float(gamma),
        prior_u=prior_u,
        prior_w=prior_w,
        m=env.m,
        n=env.n,
    )


def build_mean_est(instance: Dict[str, Any], gamma: float, m: Optional[int] = None, n: Optional[int] = None) -> MeanEstConfig:
    """A MeanEstConfig from an inline description."""
    _require(instance, ("alpha",), "instance")
    if m is None:
        _require(instance, ("m", "n"), "instance")
    return MeanEstConfig(
        m=int(instance["m"] if m is None else m),
        n=int(instance["n"] if n is None else n),
        d=int(instance.get("d", 1)),
        alpha=float(instance["alpha"]),
        gamma=float(gamma),
        sigma_z=float(instance.get("sigma_z", 1.0)),
        sigma_tau=float(instance.get("sigma_tau", 1.0)),
        sample_law=enum_from_config(SampleLaw, instance.get("sample_law", "gaussian")),
    )


def environment_modes(instance: Dict[str, Any]):
    """Modes a theorem-1 run covers; both unless the config narrows them."""
    raw = instance.get("modes", [mode.value for mode in EnvironmentMode])
    return [enum_from_config(EnvironmentMode, value) for value in raw]


def grid_family(grid: Dict[str, Any]) -> Family:
    return enum_from_config(Family, grid.get("family", Family.MEAN_EST.value))


class DataManager:
    """
    Handles experiment configs and result files.

    Reports and tables are written with sorted keys and fixed formatting and
    carry no timestamps, so identical configs and seeds give identical bytes.
    """

    def __init__(self, out_dir: Optional[str] = None):
        """
        Initialize the data manager.

        Args:
            out_dir: Directory results are written to
        """
        self.out_dir = out_dir or DEFAULT_OUT_DIR

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigInvalid(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigInvalid(f"Config file {path} must hold a JSON object")
        return data

    def load_config(self, path: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """
        Load and validate an experiment config.

        Args:
            path: JSON config file
            overrides: Scalar fields to replace (master_seed, trials, out_dir, cap);
                None values are ignored

        Returns:
            The validated ExperimentConfig

        Raises:
            ConfigInvalid: on unknown keys, bad values, or an instance that
                fails model validation
        """
        raw = self.read_json(path)
        for key, value in (overrides or {}).items():
            if value is not None:
                raw[key] = value
        return self.parse_config(raw)

    def parse_config(self, raw: Dict[str, Any]) -> ExperimentConfig:
        _reject_unknown(raw, CONFIG_KEYS, "config")
        _require(raw, ("experiment", "instance"), "config")
        experiment = enum_from_config(Experiment, raw["experiment"])
        instance = raw["instance"]
        if not isinstance(instance, dict):
            raise ConfigInvalid("config: 'instance' must be an object")

        gamma = raw.get("gamma", 1.0)
        if not isinstance(gamma, (int, float)) or isinstance(gamma, bool) or not np.isfinite(gamma):
            raise ConfigInvalid(f"gamma must be a finite number, got {gamma!r}")
        if gamma < 0:
            raise ConfigInvalid(f"gamma must be nonnegative, got {gamma}")

        config = ExperimentConfig(
            experiment=experiment,
            instance=instance,
            gamma=float(gamma),
            trials=self._int_field(raw, "trials", DEFAULT_TRIALS if experiment is Experiment.MEAN_ESTIMATION else 0),
            master_seed=self._int_field(raw, "master_seed", DEFAULT_MASTER_SEED),
            cap=self._int_field(raw, "cap", DEFAULT_STATE_CAP),
            out_dir=raw.get("out_dir"),
            grid=raw.get("grid", {}),
        )
        if config.cap < 1:
            raise ConfigInvalid("cap must be positive")
        self._validate_instance(config)
        return config

    @staticmethod
    def _int_field(raw: Dict[str, Any], key: str, default: int) -> int:
        value = raw.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigInvalid(f"{key} must be a nonnegative integer, got {value!r}")
        return value

    def _validate_instance(self, config: ExperimentConfig) -> None:
        """Build the model objects once so bad instances fail before any work starts."""
        instance, experiment = config.instance, config.experiment
        try:
            if experiment is Experiment.MEAN_ESTIMATION:
                _reject_unknown(instance, MEAN_EST_KEYS, "instance")
                build_mean_est(instance, config.gamma)
            elif experiment is Experiment.RATE_SWEEP:
                _reject_unknown(config.grid, GRID_KEYS, "grid")
                _require(config.grid, ("points",), "grid")
                if grid_family(config.grid) is Family.MEAN_EST:
                    _reject_unknown(instance, MEAN_EST_KEYS, "instance")
                    m, n = config.grid["points"][0]
                    build_mean_est(instance, config.gamma, m, n)
                else:
                    _reject_unknown(instance, FINITE_KEYS, "instance")
                    build_meta_instance(instance, config.gamma, *config.grid["points"][0])
            else:
                _reject_unknown(instance, FINITE_KEYS, "instance")
                if config.grid:
                    raise ConfigInvalid(f"{experiment.value} takes no grid")
                if experiment is Experiment.VERIFY_THEOREM1:
                    build_meta_instance(instance, config.gamma)
                    environment_modes(instance)
                elif experiment is Experiment.VERIFY_THEOREM2:
                    build_super_instance(instance, config.gamma)
                else:
                    build_meta_instance(instance, config.gamma)
        except ConfigInvalid:
            raise
        except (LabError, IndexError, KeyError, TypeError, ValueError) as e:
            raise ConfigInvalid(f"Invalid instance: {e}")

    @staticmethod
    def config_hash(config: ExperimentConfig) -> str:
        """SHA-256 of the canonical JSON of the effective config."""
        tree = {k: v for k, v in config.to_dict().items() if k not in UNHASHED_KEYS}
        canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _path(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)

    def save_report(self, report: Dict[str, Any], name: str = "report.json") -> str:
        """Write a report as JSON and return its path."""
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(to_jsonable(report), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
        logger.info(f"Report written to {path}")
        return path

    def save_sidecar(self, annotations: Dict[str, Any], name: str) -> str:
        """Write table annotations (fitted slopes and the like) next to a CSV."""
        return self.save_report(annotations, name)

    def export_csv(self, frame: pd.DataFrame, name: str) -> str:
        """Write a table as RFC-4180 CSV with a header row."""
        path = self._path(name)
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\r\n", float_format="%.17g")
        logger.info(f"Table written to {path}")
        return path

    def verify_report_hash(self, report_path: str, config_path: str, overrides: Optional[Dict[str, Any]] = None) -> bool:
        """
        Check that a report was produced from a config.

        Returns:
            True if the report's config_hash matches the config's, False otherwise
        """
        try:
            with open(report_path, "r", encoding="utf-8") as f:
                report = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error reading report {report_path}: {e}")
            return False
        expected = self.config_hash(self.load_config(config_path, overrides))
        matches = report.get("config_hash") == expected
        if not matches:
            logger.warning(f"Report {report_path} does not match config {config_path}")
        return matches


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars and arrays (and tuples) into plain JSON values; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    if hasattr(value, "value") and hasattr(value, "name"):
        return value.value
    return value
