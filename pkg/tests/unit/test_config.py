"""Tests for environment settings and strict run configuration parsing."""

from pathlib import Path

import pytest

from src.core.config import AppConfig, load_run_config, parse_run_config
from src.core.exceptions import ConfigurationError
from src.domain.models import LossKind

FULL_CONFIG = """\
dataset:
  n_classes: 4
  samples_per_class: 50
  d_in: 6
  kappa: 80.0
  seed: 2
train:
  lr: 0.05
  lr_drops: [100, 150]
  total_iters: 200
  loss_kind: combined+intra
  embedding_dim: 3
margin:
  preset: cosface
  s: 30
report:
  output_dir: runs/test
  checkpoint_name: cosface.arck
"""


class TestAppConfig:

    def test_defaults(self, monkeypatch):
        for name in ("ARC_LAB_OUTPUT_DIR", "ARC_LAB_LOG_LEVEL", "ARC_LAB_WORKERS"):
            monkeypatch.delenv(name, raising=False)
        config = AppConfig.from_env()
        assert config.output_dir == Path("runs")
        assert config.log_level == "INFO"
        assert config.workers == 1

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("ARC_LAB_OUTPUT_DIR", "/tmp/arc")
        monkeypatch.setenv("ARC_LAB_LOG_LEVEL", "debug")
        monkeypatch.setenv("ARC_LAB_WORKERS", "4")
        config = AppConfig.from_env()
        assert config.output_dir == Path("/tmp/arc")
        assert config.log_level == "DEBUG"
        assert config.workers == 4

    def test_bad_log_level(self, monkeypatch):
        monkeypatch.setenv("ARC_LAB_LOG_LEVEL", "loud")
        with pytest.raises(ConfigurationError):
            AppConfig.from_env()

    @pytest.mark.parametrize("value", ["many", "0"])
    def test_bad_workers(self, monkeypatch, value):
        monkeypatch.setenv("ARC_LAB_WORKERS", value)
        with pytest.raises(ConfigurationError):
            AppConfig.from_env()


class TestParseRunConfig:

    def test_full_config(self):
        config = parse_run_config(FULL_CONFIG)
        assert config.dataset.n_classes == 4
        assert config.dataset.kappa == 80.0
        assert config.train.lr_drops == (100, 150)
        assert config.train.loss_kind is LossKind.COMBINED_INTRA
        assert config.train.margin.name == "cosface"
        assert config.train.margin.s == 30.0
        assert config.report.checkpoint_name == "cosface.arck"

    def test_empty_document_uses_defaults(self):
        config = parse_run_config("")
        assert config.train.margin.name == "arcface"
        assert config.dataset.n_classes == 8
        assert config.train.embedding_dim == 512

    def test_explicit_margin(self):
        config = parse_run_config("margin:\n  m1: 1.0\n  m2: 0.3\n  m3: 0.2\n  s: 16\n")
        assert config.train.margin.as_tuple() == (1.0, 0.3, 0.2, 16.0)

    def test_identity_margin_needs_baseline(self):
        with pytest.raises(ConfigurationError):
            parse_run_config("margin:\n  m1: 1.0\n  m2: 0.0\n  m3: 0.0\n")
        config = parse_run_config("margin:\n  m1: 1.0\n  m2: 0.0\n  m3: 0.0\n  baseline: true\n")
        assert config.train.margin.is_identity

    def test_unknown_key_reports_line(self):
        text = "dataset:\n  n_classes: 4\n  colour: red\n"
        with pytest.raises(ConfigurationError, match=r"cfg\.yaml:3: unknown key 'colour'"):
            parse_run_config(text, source="cfg.yaml")

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError, match="unknown key 'optimizer'"):
            parse_run_config("optimizer:\n  lr: 0.1\n")

    def test_preset_with_explicit_values(self):
        with pytest.raises(ConfigurationError, match="margin"):
            parse_run_config("margin:\n  preset: arcface\n  m2: 0.4\n")

    def test_incomplete_explicit_margin(self):
        with pytest.raises(ConfigurationError):
            parse_run_config("margin:\n  m1: 1.0\n")

    def test_invalid_value_names_section_line(self):
        text = "dataset:\n  n_classes: 4\ntrain:\n  lr: -1.0\n"
        with pytest.raises(ConfigurationError, match=r"<config>:3: invalid train section"):
            parse_run_config(text)

    def test_unknown_loss_kind(self):
        with pytest.raises(ConfigurationError):
            parse_run_config("train:\n  loss_kind: hinge\n")

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigurationError, match="must be a mapping"):
            parse_run_config("train: 5\n")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigurationError, match="invalid YAML"):
            parse_run_config("train: [1, 2\n")


class TestLoadRunConfig:

    def test_load_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(FULL_CONFIG, encoding="utf-8")
        assert load_run_config(path).train.total_iters == 200

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "missing.yaml")

    def test_shipped_configs_parse(self):
        configs = Path(__file__).resolve().parents[2] / "configs"
        for path in sorted(configs.glob("*.yaml")):
            load_run_config(path)
