"""
Tests for config loading, hashing and result files.
"""

import json
import os

import pytest
import numpy as np
import pandas as pd

from src.data_manager import DataManager, build_meta_instance, enum_from_config, to_jsonable
from src.errors import ConfigInvalid
from src.models import EnvironmentMode, Experiment, SampleLaw

from conftest import CONFIG_DIR


BUNDLED = [
    "bern2_theorem1.json",
    "tiny_theorem2.json",
    "mean_estimation.json",
    "bounds.json",
    "rate_sweep.json",
    "rate_sweep_finite.json",
]


@pytest.fixture
def bern2_raw():
    """The bundled bern2 config as a dict."""
    with open(os.path.join(CONFIG_DIR, "bern2_theorem1.json"), encoding="utf-8") as f:
        return json.load(f)


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return str(path)


class TestLoadConfig:
    """Tests for loading and validating configs."""

    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_configs_load(self, name):
        """Test that every shipped config validates."""
        config = DataManager().load_config(os.path.join(CONFIG_DIR, name))
        assert isinstance(config.experiment, Experiment)

    def test_defaults(self, tmp_path, bern2_raw):
        """Test defaults for fields a config leaves out."""
        del bern2_raw["gamma"]
        config = DataManager().load_config(write_config(tmp_path, bern2_raw))
        assert config.gamma == 1.0
        assert config.trials == 0
        assert config.cap >= 1

    def test_overrides(self, tmp_path, bern2_raw):
        """Test that non-None overrides replace config fields."""
        config = DataManager().load_config(write_config(tmp_path, bern2_raw), {"master_seed": 7, "trials": None})
        assert config.master_seed == 7
        assert config.trials == 0

    def test_unknown_key(self, tmp_path, bern2_raw):
        """Test rejection of keys the config does not know."""
        bern2_raw["temperature"] = 2.0
        with pytest.raises(ConfigInvalid):
            DataManager().load_config(write_config(tmp_path, bern2_raw))

    def test_negative_gamma(self, tmp_path, bern2_raw):
        """Test rejection of a negative inverse temperature."""
        bern2_raw["gamma"] = -1.0
        with pytest.raises(ConfigInvalid):
            DataManager().load_config(write_config(tmp_path, bern2_raw))

    def test_bad_instance(self, tmp_path, bern2_raw):
        """Test that model validation errors surface as ConfigInvalid."""
        bern2_raw["instance"]["task_prior"] = [0.7, 0.7]
        with pytest.raises(ConfigInvalid):
            DataManager().load_config(write_config(tmp_path, bern2_raw))

    def test_grid_outside_rate_sweep(self, tmp_path, bern2_raw):
        """Test that only rate sweeps take a grid."""
        bern2_raw["grid"] = {"points": [[1, 1]]}
        with pytest.raises(ConfigInvalid):
            DataManager().load_config(write_config(tmp_path, bern2_raw))

    def test_missing_file(self, tmp_path):
        """Test a missing config file."""
        with pytest.raises(ConfigInvalid):
            DataManager().load_config(str(tmp_path / "missing.json"))

    def test_not_an_object(self, tmp_path):
        """Test a config that is valid JSON but not an object."""
        with pytest.raises(ConfigInvalid):
            DataManager().load_config(write_config(tmp_path, [1, 2, 3]))


class TestInstances:
    """Tests for building model objects from inline descriptions."""

    def test_enum_lookup(self):
        """Test lookup by value and by name."""
        assert enum_from_config(EnvironmentMode, "per-task") is EnvironmentMode.PER_TASK
        assert enum_from_config(EnvironmentMode, "FOLDED") is EnvironmentMode.FOLDED
        assert enum_from_config(SampleLaw, "shifted_rademacher") is SampleLaw.SHIFTED_RADEMACHER
        with pytest.raises(ConfigInvalid):
            enum_from_config(EnvironmentMode, "sideways")

    def test_product_prior(self, bern2_raw):
        """Test the default uniform product prior and resizing."""
        inst = build_meta_instance(bern2_raw["instance"], 1.0, m=3, n=2)
        assert inst.prior.shape == (2, 2, 2, 2)
        np.testing.assert_allclose(inst.prior, 1.0 / 16.0)

    def test_joint_prior_cannot_resize(self, bern2_raw):
        """Test that a full joint prior is tied to its m."""
        bern2_raw["instance"]["prior"] = np.full((2, 2, 2), 0.125).tolist()
        assert build_meta_instance(bern2_raw["instance"], 1.0).prior.shape == (2, 2, 2)
        with pytest.raises(ConfigInvalid):
            build_meta_instance(bern2_raw["instance"], 1.0, m=1, n=1)


class TestConfigHash:
    """Tests for the canonical config hash."""

    def test_stable(self, tmp_path, bern2_raw):
        """Test that key order in the file does not change the hash."""
        manager = DataManager()
        first = manager.load_config(write_config(tmp_path, bern2_raw, "a.json"))
        reordered = dict(reversed(list(bern2_raw.items())))
        second = manager.load_config(write_config(tmp_path, reordered, "b.json"))
        assert DataManager.config_hash(first) == DataManager.config_hash(second)
        assert len(DataManager.config_hash(first)) == 64

    def test_out_dir_is_ignored(self, tmp_path, bern2_raw):
        """Test that the output directory is not part of the hash."""
        manager = DataManager()
        path = write_config(tmp_path, bern2_raw)
        a = manager.load_config(path, {"out_dir": str(tmp_path / "x")})
        b = manager.load_config(path, {"out_dir": str(tmp_path / "y")})
        assert DataManager.config_hash(a) == DataManager.config_hash(b)

    def test_seed_changes_hash(self, tmp_path, bern2_raw):
        """Test that the master seed is part of the hash."""
        manager = DataManager()
        path = write_config(tmp_path, bern2_raw)
        a = manager.load_config(path, {"master_seed": 1})
        b = manager.load_config(path, {"master_seed": 2})
        assert DataManager.config_hash(a) != DataManager.config_hash(b)


class TestResultFiles:
    """Tests for reports, tables and hash verification."""

    def test_report_is_deterministic(self, tmp_path):
        """Test sorted keys and identical bytes across writes."""
        manager = DataManager(str(tmp_path / "out"))
        report = {"b": np.float64(0.5), "a": [np.int64(1), (2, 3)], "c": float("nan")}
        first = open(manager.save_report(report, "r.json"), encoding="utf-8").read()
        second = open(manager.save_report(report, "r.json"), encoding="utf-8").read()
        assert first == second
        assert json.loads(first) == {"a": [1, [2, 3]], "b": 0.5, "c": None}
        assert first.index('"a"') < first.index('"b"')

    def test_export_csv(self, tmp_path):
        """Test CRLF row endings and a header row."""
        manager = DataManager(str(tmp_path))
        path = manager.export_csv(pd.DataFrame({"m": [1, 2], "gen": [0.1, 0.2]}), "t.csv")
        with open(path, "rb") as f:
            raw = f.read()
        assert raw.startswith(b"m,gen\r\n")
        assert raw.count(b"\r\n") == 3

    def test_verify_report_hash(self, tmp_path, bern2_raw):
        """Test matching and mismatching reports."""
        manager = DataManager(str(tmp_path))
        path = write_config(tmp_path, bern2_raw)
        config = manager.load_config(path)
        report_path = manager.save_report({"config_hash": DataManager.config_hash(config)}, "ok.json")
        assert manager.verify_report_hash(report_path, path)
        assert not manager.verify_report_hash(report_path, path, {"master_seed": 3})
        assert not manager.verify_report_hash(str(tmp_path / "missing.json"), path)

    def test_to_jsonable(self):
        """Test conversion of numpy values, enums and non-finite floats."""
        value = {1: np.array([1.0, np.inf]), "mode": EnvironmentMode.FOLDED, "flag": np.bool_(True)}
        assert to_jsonable(value) == {"1": [1.0, None], "mode": "folded", "flag": True}
