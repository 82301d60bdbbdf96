"""
Configuration Management
Handles environment settings and strict YAML run configurations
"""

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv

from src.core.exceptions import ConfigurationError
from src.domain.models import MarginSpec, SynthSpec, TrainConfig

# Load environment variables
load_dotenv()

SECTIONS = ("dataset", "train", "margin", "report")
MARGIN_KEYS = ("preset", "m1", "m2", "m3", "s", "baseline")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class AppConfig:
    """Process-wide settings taken from the environment"""
    output_dir: Path = Path("runs")
    log_level: str = "INFO"
    workers: int = 1

    @classmethod
    def from_env(cls) -> "AppConfig":
        """
        Create configuration from environment variables

        Returns:
            AppConfig instance
        """
        try:
            workers = int(os.getenv("ARC_LAB_WORKERS", "1"))
        except ValueError as e:
            raise ConfigurationError(f"ARC_LAB_WORKERS must be an integer: {e}") from e
        if workers < 1:
            raise ConfigurationError("ARC_LAB_WORKERS must be at least 1")
        log_level = os.getenv("ARC_LAB_LOG_LEVEL", "INFO").upper()
        if log_level not in LOG_LEVELS:
            raise ConfigurationError(f"ARC_LAB_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {log_level}")
        return cls(
            output_dir=Path(os.getenv("ARC_LAB_OUTPUT_DIR", "runs")),
            log_level=log_level,
            workers=workers,
        )


@dataclass
class ReportConfig:
    """Which artefacts a run writes and where"""
    output_dir: Optional[str] = None
    checkpoint_name: str = "model.arck"
    write_loss_trace: bool = True
    write_spread: bool = True
    write_snapshots: bool = True


@dataclass
class RunConfig:
    """Parsed run configuration: dataset, training (with margin) and report sections"""
    dataset: SynthSpec = field(default_factory=SynthSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    report: ReportConfig = field(default_factory=ReportConfig)


def _field_names(cls) -> tuple:
    return tuple(f.name for f in fields(cls))


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _check_keys(node: yaml.Node, allowed: tuple, where: str, source: str) -> None:
    """Reject unknown keys, reporting the line of the first offender"""
    if not isinstance(node, yaml.MappingNode):
        raise ConfigurationError(f"{source}:{_line(node)}: '{where}' must be a mapping")
    for key_node, _ in node.value:
        if key_node.value not in allowed:
            raise ConfigurationError(
                f"{source}:{_line(key_node)}: unknown key '{key_node.value}' in {where}; "
                f"allowed: {', '.join(allowed)}"
            )


def _build_margin(values: Dict[str, Any]) -> MarginSpec:
    if "preset" in values:
        explicit = [k for k in ("m1", "m2", "m3", "baseline") if k in values]
        if explicit:
            raise ValueError(f"margin.preset cannot be combined with {explicit}")
        return MarginSpec.preset(str(values["preset"]), values.get("s"))
    missing = [k for k in ("m1", "m2", "m3") if k not in values]
    if missing:
        raise ValueError(f"margin needs either 'preset' or all of m1, m2, m3 (missing {missing})")
    return MarginSpec(
        float(values["m1"]), float(values["m2"]), float(values["m3"]),
        float(values.get("s", 64.0)), name="custom", baseline=bool(values.get("baseline", False)),
    )


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """
    Parse a YAML run configuration strictly

    Args:
        text: YAML document
        source: Name used in error messages

    Returns:
        RunConfig instance

    Raises:
        ConfigurationError: On YAML syntax errors, unknown keys or invalid values
    """
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigurationError(f"{where}: invalid YAML: {e}") from e
    if root is None:
        return RunConfig()

    _check_keys(root, SECTIONS, "the top level", source)
    section_nodes = {key.value: value for key, value in root.value}
    section_lines = {key.value: _line(key) for key, _ in root.value}
    allowed = {
        "dataset": _field_names(SynthSpec),
        "train": tuple(n for n in _field_names(TrainConfig) if n != "margin"),
        "margin": MARGIN_KEYS,
        "report": _field_names(ReportConfig),
    }
    for name, node in section_nodes.items():
        if node.tag == "tag:yaml.org,2002:null":
            continue
        _check_keys(node, allowed[name], name, source)

    def section(name: str) -> Dict[str, Any]:
        return dict(data.get(name) or {})

    current = "dataset"
    try:
        dataset = SynthSpec(**section("dataset"))
        current = "margin"
        margin = _build_margin(section("margin")) if section("margin") else MarginSpec.preset("arcface")
        current = "train"
        train_values = section("train")
        if "lr_drops" in train_values:
            train_values["lr_drops"] = tuple(train_values["lr_drops"] or ())
        train = TrainConfig(margin=margin, **train_values)
        current = "report"
        report = ReportConfig(**section("report"))
    except (ValueError, TypeError, KeyError) as e:
        line = section_lines.get(current, 1)
        raise ConfigurationError(f"{source}:{line}: invalid {current} section: {e}") from e
    return RunConfig(dataset=dataset, train=train, report=report)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load a YAML run configuration from disk

    Args:
        path: Configuration file

    Returns:
        RunConfig instance
    """
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read run config {config_path}: {e}") from e
    return parse_run_config(text, source=str(config_path))
