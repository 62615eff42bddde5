"""
Run Service - run configuration resolution (YAML file + overrides), run
directories, dataset resolution and one-line JSON command summaries.
Used by: every CLI command
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import click
import numpy as np
import yaml
from pydantic import ValidationError

from landmark_forge.config import settings
from landmark_forge.schemas.run import RunConfig
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.services.dataset_service import load_dataset, split_samples
from landmark_forge.services.errors import ConfigError, MissingArtifactError
from landmark_forge.services.synthetic_service import generate_synthetic_dataset

logger = logging.getLogger(__name__)

CONFIG_DUMP = "config.yaml"


def parse_override(item: str) -> Tuple[List[str], Any]:
    """`section.key=value`; the value is parsed as YAML (numbers, lists, null)."""
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw != "" else ""
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value of override {item!r}: {e}")
    return key.strip().split("."), value


def _assign(tree: Dict[str, Any], path: List[str], value: Any) -> None:
    node = tree
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {part} is not a section")
    node[path[-1]] = value


def load_run_config(
    config_path: Optional[str] = None, overrides: Iterable[str] = (), flags: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Merge, in increasing priority: defaults, the YAML file, --set overrides,
    dedicated CLI flags (dotted keys, None values skipped).
    """
    tree: Dict[str, Any] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise MissingArtifactError(f"Config file not found: {path}")
        try:
            tree = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}")
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
    tree.setdefault("workers", settings.workers)
    for item in overrides:
        _assign(tree, *parse_override(item))
    for key, value in (flags or {}).items():
        if value is not None:
            _assign(tree, key.split("."), value)
    try:
        return RunConfig(**tree)
    except ValidationError as e:
        raise ConfigError(str(e))


def run_root() -> Path:
    return Path(settings.run_root)


def stage_dir(cfg: RunConfig, stage: str) -> Path:
    path = run_root() / cfg.run_name / stage
    path.mkdir(parents=True, exist_ok=True)
    return path


def expected_artifact(cfg: RunConfig, stage: str, name: str) -> Path:
    return run_root() / cfg.run_name / stage / name


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"required artifact not found: {path}")
    return path


def dump_config(cfg: RunConfig, directory: Path) -> Path:
    path = Path(directory) / CONFIG_DUMP
    path.write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
    return path


def load_samples(cfg: RunConfig) -> List[ImageSample]:
    data = cfg.dataset
    if data.root is None:
        logger.info("Generating %d synthetic samples (%d identities)", data.synthetic_count, data.synthetic_identities)
        return generate_synthetic_dataset(data.synthetic_count, data.synthetic_identities, data.canvas, cfg.seed)
    return list(load_dataset(data.root, data.annotations, data.eye_indices))


def train_val(cfg: RunConfig, samples: List[ImageSample]) -> Tuple[List[ImageSample], List[ImageSample]]:
    return split_samples(samples, cfg.dataset.val_fraction, cfg.seed)


def pairs_file(cfg: RunConfig) -> Optional[Path]:
    if cfg.dataset.root is None:
        return None
    path = Path(cfg.dataset.root) / "pairs.txt"
    return path if path.exists() else None


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def emit(summary: Dict[str, Any]) -> None:
    """One-line JSON summary on stdout for scripting."""
    click.echo(json.dumps({k: _jsonable(v) for k, v in summary.items()}, sort_keys=True))
