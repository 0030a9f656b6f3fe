"""One interface over the three head families, plus config (de)serialisation."""
from __future__ import annotations

import dataclasses
from dataclasses import replace

import numpy as np

from . import layers as L
from . import tconv, tslstm
from .errors import ConfigError
from .harness import baseline
from .harness.baseline import FrameBaselineConfig
from .params import ParameterSet
from .tconv import TemporalConvConfig
from .layers import cross_entropy
from .tensor import Tensor
from .tslstm import TsLstmConfig

FAMILIES = {
    "tslstm": TsLstmConfig,
    "tconv": TemporalConvConfig,
    "baseline": FrameBaselineConfig,
}


def family_of(cfg) -> str:
    for name, cls in FAMILIES.items():
        if isinstance(cfg, cls):
            return name
    raise ConfigError(f"not a model config: {type(cfg).__name__}")


def config_to_dict(cfg) -> dict:
    """All fields, defaults expanded, tuples as lists."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


def config_from_dict(family: str, doc: dict):
    """Build a config; unknown keys are errors so ablation typos cannot pass silently."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
    cls = FAMILIES[family]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown {family} config keys: {', '.join(unknown)}")
    kwargs = {}
    for k, v in doc.items():
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


class Head:
    """A model family bound to one config."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.family = family_of(cfg)

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    def init(self, dim: int, length: int, rng: np.random.Generator) -> tuple[ParameterSet, dict]:
        if self.family == "tslstm":
            return tslstm.init_params(self.cfg, dim, rng)
        if self.family == "tconv":
            return tconv.init_params(self.cfg, dim, length, rng)
        return baseline.init_params(self.cfg, dim, rng)

    def logits(self, x, params, mode="eval", stats=None, rng=None) -> Tensor:
        if self.family == "tslstm":
            return tslstm.logits(x, self.cfg, params, mode, stats, rng)
        if self.family == "tconv":
            return tconv.logits(x, self.cfg, params, mode, stats, rng)
        raise ConfigError("the frame baseline has no sequence-level logits; use predict_proba")

    def loss(self, x, y, params, mode="train", stats=None, rng=None) -> tuple[Tensor, np.ndarray]:
        """Training loss and the (B, C) scores used for train accuracy."""
        if self.family == "baseline":
            z = baseline.frame_logits(x, self.cfg, params)
            n = x.shape[-1]
            loss = cross_entropy(z, np.repeat(np.asarray(y), n))
            scores = z.data.reshape(len(y), n, -1).mean(axis=1)
            return loss, scores
        z = self.logits(x, params, mode, stats, rng)
        return cross_entropy(z, y), z.data

    def predict_proba(self, x, params, stats=None, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            return self.predict_proba(x[None], params, stats, batch_size)[0]
        outs = []
        for i in range(0, len(x), batch_size):
            xb = x[i:i + batch_size]
            if self.family == "baseline":
                outs.append(baseline.predict_proba(xb, self.cfg, params))
            else:
                outs.append(L.softmax(self.logits(xb, params, "eval", stats)).data)
        return np.concatenate(outs) if outs else np.zeros((0, self.num_classes))


def with_classes(cfg, num_classes: int):
    return replace(cfg, num_classes=num_classes)


def shrink(cfg, divisor: int = 128, minimum: int = 2, num_classes: int | None = None):
    """Scale every hidden width down by ``divisor`` (floored at ``minimum``)."""

    def s(w):
        return None if w is None else max(minimum, int(w) // divisor)

    if isinstance(cfg, TsLstmConfig):
        cfg = replace(cfg, lstm_widths=tuple(s(w) for w in cfg.lstm_widths), pre_fc_width=s(cfg.pre_fc_width))
    elif isinstance(cfg, TemporalConvConfig):
        cfg = replace(cfg, fc_width=s(cfg.fc_width))
    if num_classes is not None:
        cfg = replace(cfg, num_classes=num_classes)
    return cfg
