"""Experiment config files, overrides and run manifests.

Config files are YAML mappings whose keys mirror TrainConfig. The ``loss``
section may name a ``preset`` whose fields are filled in before validation.
"""

import copy
import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src import __version__
from src.errors import ConfigError
from src.kernels import get_profile
from src.rlcore.losses import PRESETS
from src.trainer import TrainConfig

logger = logging.getLogger(__name__)


def to_plain(value: Any) -> Any:
    """Recursively convert enums and tuples so the value is YAML/JSON friendly."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    return value


def load_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML mapping.

    Raises:
        ConfigError: if the file is missing, unparsable or not a mapping.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"Cannot parse {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``a.b.c=value`` overrides; values are parsed as YAML scalars.

    Raises:
        ConfigError: for an override without ``=`` or an empty key.
    """
    out = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"Override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"Override {item!r} has an empty key")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"Cannot parse override value in {item!r}: {exc}") from exc
        node = out
        for part in parts[:-1]:
            child = node.get(part)
            if isinstance(child, str) and part in ("rollout_profile", "train_profile", "optimizer"):
                child = {"name": child} if part == "optimizer" else _profile_mapping(child)
            if not isinstance(child, dict):
                child = {}
            node[part] = child
            node = child
        node[parts[-1]] = value
    return out


def _profile_mapping(name: str) -> Dict[str, Any]:
    try:
        return to_plain(get_profile(name).model_dump())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_loss(data: Dict[str, Any]) -> Dict[str, Any]:
    loss = data.get("loss")
    if isinstance(loss, str):
        loss = {"preset": loss}
    if isinstance(loss, dict) and "preset" in loss:
        loss = dict(loss)
        name = loss.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"Unknown loss preset {name!r}; available: {sorted(PRESETS)}")
        data = {**data, "loss": {**to_plain(PRESETS[name]), **loss}}
    return data


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ()))
        if err.get("type") == "extra_forbidden":
            lines.append(f"unknown config key '{loc}'")
        else:
            lines.append(f"{loc or 'config'}: {err.get('msg')}")
    return "; ".join(lines)


def build_train_config(data: Dict[str, Any]) -> TrainConfig:
    """Validate a config mapping.

    Raises:
        ConfigError: naming every unknown key or invalid field.
    """
    try:
        return TrainConfig(**_resolve_loss(data))
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_train_config(
    path: Union[str, Path], overrides: Iterable[str] = (), seed: Optional[int] = None
) -> TrainConfig:
    data = apply_overrides(load_yaml(path), overrides)
    if seed is not None:
        data["seed"] = seed
    return build_train_config(data)


def config_to_dict(config: TrainConfig) -> Dict[str, Any]:
    return to_plain(config.model_dump())


def config_hash(config: TrainConfig) -> str:
    """Stable SHA-256 of the canonical config; equal configs always collide."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def dump_config_yaml(config: TrainConfig, path: Union[str, Path]) -> Path:
    """Write the fully resolved config; reloading it gives an equal TrainConfig."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(config), sort_keys=True), encoding="utf-8")
    return path


class RunManifest(BaseModel):
    """Self-identifying description of one run's outputs. Carries no timestamps."""

    model_config = ConfigDict(extra="forbid")

    config_hash: str
    artifact_version: str = __version__
    variant: str
    profiles: Dict[str, Dict[str, Any]]
    seed: int
    outputs: Dict[str, str] = Field(default_factory=dict)

    @classmethod
    def for_config(cls, config: TrainConfig, outputs: Dict[str, str]) -> "RunManifest":
        return cls(
            config_hash=config_hash(config),
            variant=config.loss.variant.value,
            profiles={
                "rollout": config.rollout_profile.describe(),
                "train": config.train_profile.describe(),
            },
            seed=config.seed,
            outputs=outputs,
        )

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


class CellSpec(BaseModel):
    """One cell of a comparison matrix: a label plus the fields it changes."""

    model_config = ConfigDict(extra="forbid")

    label: str
    rollout_profile: Optional[Any] = None
    train_profile: Optional[Any] = None
    loss: Optional[Any] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)


class MatrixConfig(BaseModel):
    """Comparison matrix file."""

    model_config = ConfigDict(extra="forbid")

    base: Dict[str, Any] = Field(default_factory=dict)
    base_config: Optional[str] = None
    cells: List[CellSpec] = Field(..., min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    reference: Optional[str] = None
    smooth_window: int = Field(25, ge=1, description="Centred rolling-mean window")
    collapse_ratio: float = Field(0.5, gt=0, lt=1)
    collapse_floor: float = Field(0.2, ge=0, description="Running max needed before collapse counts")


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_matrix(path: Union[str, Path]) -> MatrixConfig:
    """Read and validate a comparison matrix file.

    Raises:
        ConfigError: on unknown keys, duplicate labels or a missing reference cell.
    """
    path = Path(path)
    data = load_yaml(path)
    try:
        matrix = MatrixConfig(**data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc

    if matrix.base_config:
        base_path = Path(matrix.base_config)
        if not base_path.is_absolute():
            base_path = path.parent / base_path
        matrix.base = _merge(load_yaml(base_path), matrix.base)

    labels = [c.label for c in matrix.cells]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"Duplicate cell labels in {path}: {labels}")
    if matrix.reference is not None and matrix.reference not in labels:
        raise ConfigError(f"Reference cell {matrix.reference!r} is not one of {labels}")
    return matrix


def cell_config_data(matrix: MatrixConfig, cell: CellSpec, seed: int) -> Dict[str, Any]:
    """Config mapping for one (cell, seed) pair."""
    data = copy.deepcopy(matrix.base)
    for key in ("rollout_profile", "train_profile"):
        value = getattr(cell, key)
        if value is not None:
            data[key] = value
    if cell.loss is not None:
        loss = cell.loss if isinstance(cell.loss, dict) else {"preset": cell.loss}
        data["loss"] = loss
    data = _merge(data, cell.overrides)
    data["seed"] = seed
    return data
