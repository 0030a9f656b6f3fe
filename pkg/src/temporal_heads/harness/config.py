"""Run configuration files and variant lookup.

A run config is a JSON object::

    {
      "family": "tslstm",
      "variant": "ts3-max-lstm512",       # optional catalog row to start from
      "model": {"lstm_widths": [64]},     # field overrides
      "train": {"max_epochs": 20}
    }

Unknown keys at any level are errors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .. import tconv, tslstm
from ..errors import ConfigError
from ..models import FAMILIES, config_from_dict, config_to_dict
from ..train import TrainConfig

TOP_LEVEL_KEYS = {"family", "variant", "model", "train"}


def catalog(family: str, num_classes: int = 101) -> list:
    """Catalog entries (id, table, block, config) of a family."""
    if family == "tslstm":
        return tslstm.variant_catalog(num_classes)
    if family == "tconv":
        return tconv.tconv_catalog(num_classes)
    raise ConfigError(f"family {family!r} has no variant catalog; expected tslstm or tconv")


def find_variant(family: str, variant_id: str, num_classes: int = 101):
    for entry in catalog(family, num_classes):
        if entry.id == variant_id:
            return entry
    raise ConfigError(f"unknown {family} variant {variant_id!r}")


def describe_entry(family: str, entry, num_classes: int | None = None) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(column names, row descriptor) for a catalog entry."""
    cfg = entry.config if num_classes is None else replace(entry.config, num_classes=num_classes)
    if family == "tslstm":
        return tslstm.DESCRIPTOR_COLUMNS, tslstm.describe(cfg)
    return tconv.DESCRIPTOR_COLUMNS[entry.table], tconv.describe(cfg, entry.table)


@dataclass(frozen=True)
class RunConfig:
    family: str
    model: object
    train: TrainConfig
    variant: str | None = None

    def resolved(self) -> dict:
        """Every setting with defaults expanded, as printed before a run."""
        return {
            "family": self.family,
            "variant": self.variant,
            "model": config_to_dict(self.model),
            "train": self.train.to_dict(),
        }


def run_config_from_dict(doc: dict, num_classes: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("a run config must be a JSON object")
    unknown = sorted(set(doc) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown run config keys: {', '.join(unknown)}")
    family = doc.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"'family' must be one of {sorted(FAMILIES)}, got {family!r}")
    overrides = dict(doc.get("model") or {})
    if num_classes is not None:
        overrides.setdefault("num_classes", num_classes)
    variant = doc.get("variant")
    if variant is not None:
        base = config_to_dict(find_variant(family, variant).config)
        model = config_from_dict(family, {**base, **overrides})
    else:
        model = config_from_dict(family, overrides)
    train = TrainConfig.from_dict(dict(doc.get("train") or {}), family)
    return RunConfig(family, model, train, variant)


def load_run_config(path, num_classes: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    try:
        return run_config_from_dict(doc, num_classes)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
