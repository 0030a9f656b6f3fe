"""Temporal Segment LSTM head and its ablation variants.

Pipeline per sequence::

    [BN] -> [per-frame FC] -> per-segment temporal pooling
         -> LSTM over segment vectors (last hidden) | concatenation of segment vectors
         -> [BN] -> FC(num_classes) -> softmax

With ``pool_kind="none"`` every frame is fed to the LSTM directly (the vanilla
LSTM baseline).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .params import ParameterSet
from .tensor import Tensor, as_tensor

POOL_KINDS = ("max", "mean", "none")


@dataclass(frozen=True)
class TsLstmConfig:
    num_segments: int = 3
    pre_bn: bool = True
    pre_fc_width: int | None = None
    pool_kind: str = "max"
    lstm_widths: tuple[int, ...] = (512,)
    post_bn: bool = True
    num_classes: int = 101

    def __post_init__(self):
        object.__setattr__(self, "lstm_widths", tuple(int(w) for w in self.lstm_widths))
        if self.num_segments < 1:
            raise ConfigError("num_segments must be positive")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.pool_kind not in POOL_KINDS:
            raise ConfigError(f"pool_kind must be one of {POOL_KINDS}, got {self.pool_kind!r}")
        if any(w < 1 for w in self.lstm_widths):
            raise ConfigError("LSTM widths must be positive")
        if self.pre_fc_width is not None and self.pre_fc_width < 1:
            raise ConfigError("pre_fc_width must be positive")
        if self.pre_fc_width is not None and self.lstm_widths:
            raise ConfigError("pre_fc_width and an LSTM stack are mutually exclusive")
        if self.pool_kind == "none":
            if not self.lstm_widths:
                raise ConfigError("pool_kind='none' (vanilla LSTM) requires lstm_widths")
            if self.num_segments != 1:
                raise ConfigError("pool_kind='none' feeds raw frames and needs num_segments=1")


class SegmentPartition(NamedTuple):
    boundaries: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.boundaries)

    def __iter__(self):
        return iter(self.boundaries)


def partition(n: int, s: int) -> SegmentPartition:
    """Split ``[0, n)`` into ``s`` contiguous windows; earlier windows absorb the remainder."""
    if s < 1 or n < 1:
        raise ConfigError(f"need 1 <= segments <= frames, got segments={s}, frames={n}")
    if s > n:
        raise ConfigError(f"cannot split {n} frames into {s} non-empty segments")
    base, extra = divmod(n, s)
    bounds, t = [], 0
    for i in range(s):
        length = base + (1 if i < extra else 0)
        bounds.append((t, t + length))
        t += length
    return SegmentPartition(tuple(bounds))


def _feature_width(cfg: TsLstmConfig, dim: int) -> int:
    return cfg.pre_fc_width if cfg.pre_fc_width is not None else dim


def _consensus_width(cfg: TsLstmConfig, dim: int) -> int:
    if cfg.lstm_widths:
        return cfg.lstm_widths[-1]
    return cfg.num_segments * _feature_width(cfg, dim)


def init_params(cfg: TsLstmConfig, dim: int, rng: np.random.Generator) -> tuple[ParameterSet, dict]:
    params, stats = ParameterSet(), {}
    if cfg.pre_bn:
        L.init_bn(params, stats, "pre_bn", dim)
    if cfg.pre_fc_width is not None:
        L.init_fc(params, rng, "pre_fc", dim, cfg.pre_fc_width)
    din = _feature_width(cfg, dim)
    for i, width in enumerate(cfg.lstm_widths):
        L.init_lstm(params, rng, f"lstm{i}", din, width)
        din = width
    head = _consensus_width(cfg, dim)
    if cfg.post_bn:
        L.init_bn(params, stats, "post_bn", head)
    L.init_fc(params, rng, "classifier", head, cfg.num_classes)
    return params, stats


def logits(x, cfg: TsLstmConfig, params: ParameterSet, mode: str = "eval",
           stats: dict | None = None, rng=None) -> Tensor:
    """Unnormalised class scores for a batch ``x`` of shape (B, D, N)."""
    L.check_mode(mode)
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"expected a (B, D, N) batch, got {x.shape}")
    b, d, n = x.shape
    if cfg.num_segments > n:
        raise ConfigError(f"{cfg.num_segments} segments exceed sequence length {n}")

    h = x
    if cfg.pre_bn or cfg.pre_fc_width is not None:
        rows = h.transpose(0, 2, 1).reshape(b * n, d)
        if cfg.pre_bn:
            rows = L.bn(params, stats, "pre_bn", rows, mode)
        if cfg.pre_fc_width is not None:
            rows = L.fc(params, "pre_fc", rows)
        h = rows.reshape(b, n, rows.shape[1]).transpose(0, 2, 1)

    if cfg.pool_kind == "none":
        steps = [h[:, :, t] for t in range(n)]
    else:
        steps = [L.temporal_pool(h, cfg.pool_kind, w) for w in partition(n, cfg.num_segments)]

    if cfg.lstm_widths:
        layers = [L.lstm_params(params, f"lstm{i}") for i in range(len(cfg.lstm_widths))]
        v = L.lstm_stack(steps, layers)
    else:
        v = steps[0] if len(steps) == 1 else T.concat(steps, axis=1)

    if cfg.post_bn:
        v = L.bn(params, stats, "post_bn", v, mode)
    return L.fc(params, "classifier", v)


def forward(x, cfg: TsLstmConfig, params: ParameterSet, mode: str = "eval",
            stats: dict | None = None, rng=None) -> np.ndarray:
    """Class distribution for one (D, N) feature matrix or a (B, D, N) batch."""
    arr = x.values if hasattr(x, "values") else x
    arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    probs = L.softmax(logits(arr, cfg, params, mode, stats, rng)).data
    return probs[0] if single else probs


# -- catalog -----------------------------------------------------------------
class CatalogEntry(NamedTuple):
    id: str
    table: str
    block: str
    config: object


def _widths(ws) -> str:
    return str(ws[0]) if len(ws) == 1 else "(" + ", ".join(str(w) for w in ws) + ")"


DESCRIPTOR_COLUMNS = ("TS", "BN", "FC", "Temporal Pooling", "BN", "FC")


def describe(cfg: TsLstmConfig) -> tuple[str, ...]:
    """Row descriptor aligned with ``DESCRIPTOR_COLUMNS``."""
    if cfg.pool_kind == "none":
        pooling = f"LSTM-{_widths(cfg.lstm_widths)}"
    else:
        pooling = cfg.pool_kind.capitalize()
        if cfg.lstm_widths:
            pooling += f" + {_widths(cfg.lstm_widths)}"
    return (
        str(cfg.num_segments),
        "BN" if cfg.pre_bn else "",
        "" if cfg.pre_fc_width is None else str(cfg.pre_fc_width),
        pooling,
        "BN" if cfg.post_bn else "",
        f"FC-{cfg.num_classes}",
    )


def _variant_id(cfg: TsLstmConfig) -> str:
    parts = [f"ts{cfg.num_segments}"]
    if cfg.pool_kind == "none":
        if not (cfg.pre_bn and cfg.post_bn):
            parts.append("nobn")
        parts.append("lstm" + "-".join(str(w) for w in cfg.lstm_widths))
        return "-".join(parts)
    if cfg.pre_fc_width is not None:
        parts.append(f"fc{cfg.pre_fc_width}")
    parts.append(cfg.pool_kind)
    if cfg.lstm_widths:
        parts.append("lstm" + "-".join(str(w) for w in cfg.lstm_widths))
    if not cfg.pre_bn and not cfg.post_bn:
        parts.append("nobn")
    elif not cfg.pre_bn:
        parts.append("postbn")
    return "-".join(parts)


def variant_catalog(num_classes: int = 101) -> list[CatalogEntry]:
    """Every row of the complete TS-LSTM ablation table, in table order."""
    rows: list[tuple[str, TsLstmConfig]] = []

    def add(block, **kw):
        rows.append((block, TsLstmConfig(num_classes=num_classes, **kw)))

    block = "ConvNet + LSTM"
    for w in (512, 1024, 2048):
        add(block, num_segments=1, pre_bn=False, post_bn=False, pool_kind="none", lstm_widths=(w,))
    block = "Batch Normalization + LSTM"
    for ws in ((512,), (1024,), (2048,), (512, 512), (1024, 512), (512, 512, 512)):
        add(block, num_segments=1, pool_kind="none", lstm_widths=ws)
    block = "Temporal Segment + Max Pooling + Batch Normalization"
    add(block, num_segments=1, pre_bn=False, post_bn=False, lstm_widths=())
    add(block, num_segments=1, pre_bn=False, post_bn=True, lstm_widths=())
    for s in (1, 3, 5):
        add(block, num_segments=s, lstm_widths=())
    block = "Feature integration + Dimension Reduction"
    for s in (3, 5):
        add(block, num_segments=s, pre_fc_width=512, lstm_widths=())
    block = "Temporal Segment + Max + LSTM"
    for s in (3, 5):
        for w in (512, 1024, 2048):
            add(block, num_segments=s, lstm_widths=(w,))
    block = "Temporal Segment + Max + stacked LSTM"
    for s in (3, 5):
        for ws in ((512, 512), (1024, 512), (512, 512, 512)):
            add(block, num_segments=s, lstm_widths=ws)

    entries = [CatalogEntry(_variant_id(c), "TS-LSTM complete", b, c) for b, c in rows]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate TS-LSTM variant ids")
    return entries
