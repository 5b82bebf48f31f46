"""Flat key-value configuration files, CLI overrides and worker limits."""

import os
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml
from pydantic import ValidationError

from nbv_planner.errors import ConfigError
from nbv_planner.models import ObjectSpec, ToolkitConfig

# Flat section name -> path inside ToolkitConfig
SECTIONS: dict[str, tuple[str, ...]] = {
    "scene": ("scene",),
    "metric": ("reconstruction", "metric"),
    "grid": ("reconstruction", "grid"),
    "reconstruction": ("reconstruction",),
    "train": ("train",),
}

# Provenance sections written into manifests; ignored when a manifest is used as config
MANIFEST_SECTIONS = ("toolkit", "run")


def flatten_config(cfg: ToolkitConfig) -> dict[str, Any]:
    """Return every setting as a `section.field` mapping."""
    data = cfg.model_dump(mode="json")
    flat: dict[str, Any] = {}
    for section, path in SECTIONS.items():
        node = data
        for part in path:
            node = node[part]
        for key, value in node.items():
            if isinstance(value, dict):
                continue
            flat[f"{section}.{key}"] = value
    return flat


def config_from_flat(
    flat: Mapping[str, Any], base: Optional[ToolkitConfig] = None
) -> ToolkitConfig:
    """Apply flat `section.field` values on top of `base` (defaults if None)."""
    nested = (base or ToolkitConfig()).model_dump(mode="json")
    for key, value in flat.items():
        section, _, field = str(key).partition(".")
        if section not in SECTIONS or not field or "." in field:
            raise ConfigError(f"unknown config key: {key}")
        node = nested
        for part in SECTIONS[section]:
            node = node[part]
        if field not in node or isinstance(node[field], dict):
            raise ConfigError(f"unknown config key: {key}")
        node[field] = value

    try:
        return ToolkitConfig.model_validate(nested)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(config_path: Optional[str] = None) -> ToolkitConfig:
    """Load a flat YAML config file. No path means defaults."""
    if config_path is None:
        return ToolkitConfig()

    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {config_path}")

    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {config_path}: {e}") from e

    if data is None:
        return ToolkitConfig()
    if not isinstance(data, dict):
        raise ConfigError(f"config file must be a flat mapping: {config_path}")
    settings = {
        key: value
        for key, value in data.items()
        if str(key).partition(".")[0] not in MANIFEST_SECTIONS
    }
    return config_from_flat(settings)


def resolve_config(
    config_path: Optional[str], overrides: Mapping[str, Any]
) -> ToolkitConfig:
    """Defaults < config file < explicit CLI flags (None flags are ignored)."""
    base = load_config(config_path)
    explicit = {key: value for key, value in overrides.items() if value is not None}
    if not explicit:
        return base
    return config_from_flat(explicit, base)


def worker_count() -> int:
    """Worker threads allowed by NBV_THREADS (default: machine parallelism)."""
    raw = os.environ.get("NBV_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"NBV_THREADS must be a positive integer, got '{raw}'")
    if value < 1:
        raise ConfigError(f"NBV_THREADS must be a positive integer, got '{raw}'")
    return value


def parse_objects(text: str) -> list[ObjectSpec]:
    """Parse `kind:seed,kind:seed,mesh.ply` into object specs numbered in order."""
    specs: list[ObjectSpec] = []
    for index, entry in enumerate(part.strip() for part in text.split(",")):
        if not entry:
            raise ConfigError(f"unknown object: empty entry in '{text}'")
        if entry.lower().endswith(".ply"):
            specs.append(ObjectSpec(object_id=index, kind="ply", path=entry))
            continue
        kind, _, seed = entry.partition(":")
        try:
            specs.append(ObjectSpec(object_id=index, kind=kind, seed=int(seed) if seed else 0))
        except ValueError:
            raise ConfigError(f"unknown object: '{entry}'")
    return specs
