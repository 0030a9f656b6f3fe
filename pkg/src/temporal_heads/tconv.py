"""Temporal-ConvNet heads: Temporal-VGG, Multi-flow Temporal-VGG and Temporal-Inception.

The (D, N) feature matrix enters as a single-filter (1, D, N) map. Each TCL
convolves along time only, normalises, rectifies and halves the time axis.
A multi-flow module runs one TCL per kernel size on the same input and
concatenates the results along the filter axis. After the last module a chain
of 1 x 1 convolutions fuses the filters back to one. The surviving D x T'
values are flattened (feature-major, then time) and classified by two FC layers.

Parameters are created lazily the first time a forward pass meets them, so
:func:`init_params` is a forward pass on zeros with an initialising generator.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .params import ParameterSet, uniform_fan_in
from .tensor import Tensor, as_tensor

ARCHITECTURES = ("vgg", "multiflow_vgg", "inception")


def _as_flow(k) -> tuple[int, ...]:
    return (int(k),) if np.isscalar(k) else tuple(int(v) for v in k)


@dataclass(frozen=True)
class TclConfig:
    """One temporal convolution layer.

    ``kernel_sizes`` has one entry normally; several entries stack convolutions
    inside the layer (each followed by BN and ReLU) before the single downsampling step.
    """

    kernel_sizes: tuple[int, ...] = (5,)
    downsample: str = "pool"
    use_bn: bool = True
    use_relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", _as_flow(self.kernel_sizes))
        if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd and positive, got {self.kernel_sizes}")
        if self.downsample not in ("pool", "stride2"):
            raise ConfigError(f"downsample must be 'pool' or 'stride2', got {self.downsample!r}")


@dataclass(frozen=True)
class TemporalConvConfig:
    architecture: str = "inception"
    flow_kernels: tuple[tuple[int, ...], ...] | None = None
    num_modules: int = 4
    downsample: str = "pool"
    reduction: str = "conv"
    reduction_placement: str = "final"
    fusion_chain: tuple[int, ...] | None = None
    channel_mode: str = "preserve"
    fc_width: int | None = 1024
    use_bn: bool = True
    use_dropout: bool = True
    dropout_rate: float = 0.5
    num_classes: int = 101

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        flows = self.flow_kernels
        if flows is None:
            flows = ((5,),) if self.architecture == "vgg" else ((5,), (7,))
        flows = tuple(_as_flow(f) for f in flows)
        object.__setattr__(self, "flow_kernels", flows)
        for f in flows:
            TclConfig(kernel_sizes=f)  # validates kernel sizes
        if self.architecture == "vgg" and len(flows) != 1:
            raise ConfigError("vgg is single-flow; give exactly one flow kernel")
        if self.architecture != "vgg" and len(flows) < 2:
            raise ConfigError(f"{self.architecture} needs at least 2 flows")
        if self.num_modules < 1:
            raise ConfigError("num_modules must be positive")
        if self.downsample not in ("pool", "stride2"):
            raise ConfigError(f"downsample must be 'pool' or 'stride2', got {self.downsample!r}")
        if self.reduction not in ("conv", "avg", "max"):
            raise ConfigError(f"reduction must be conv, avg or max, got {self.reduction!r}")
        if self.reduction_placement not in ("final", "per_module"):
            raise ConfigError("reduction_placement must be 'final' or 'per_module'")
        if self.reduction_placement == "per_module" and self.architecture != "inception":
            raise ConfigError("per-module reduction only applies to inception")
        chain = self.fusion_chain
        if chain is None:
            chain = (1,) if self.reduction_placement == "per_module" else (4, 2, 1)
        chain = tuple(int(c) for c in chain)
        object.__setattr__(self, "fusion_chain", chain)
        if not chain or chain[-1] != 1 or any(a <= b for a, b in zip(chain, chain[1:])):
            raise ConfigError(f"fusion_chain must be strictly decreasing and end at 1, got {chain}")
        if self.channel_mode not in ("preserve", "single"):
            raise ConfigError("channel_mode must be 'preserve' or 'single'")
        if self.fc_width is not None and self.fc_width < 1:
            raise ConfigError("fc_width must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must satisfy 0 <= p < 1")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")

    def tcl_config(self, flow: int) -> TclConfig:
        return TclConfig(self.flow_kernels[flow], self.downsample, self.use_bn, True)

    @property
    def num_flows(self) -> int:
        return len(self.flow_kernels)


class _Scope:
    """Parameter lookup that creates missing entries when an init RNG is present."""

    def __init__(self, params: ParameterSet, stats: dict | None, mode: str, init_rng=None):
        self.params = params
        self.stats = stats
        self.mode = mode
        self.init_rng = init_rng

    def weight(self, name: str, shape, fan_in: int) -> Tensor:
        if name not in self.params:
            if self.init_rng is None:
                raise ContractError(f"missing parameter {name!r}")
            self.params.add(name, uniform_fan_in(self.init_rng, shape, fan_in))
        t = self.params[name]
        if t.shape != tuple(shape):
            raise DimensionError(f"parameter {name!r} has shape {t.shape}, expected {tuple(shape)}")
        return t

    def bn(self, name: str, rows: Tensor) -> Tensor:
        if f"{name}.gamma" not in self.params:
            if self.init_rng is None:
                raise ContractError(f"missing parameter {name + '.gamma'!r}")
            L.init_bn(self.params, self.stats if self.stats is not None else {}, name, rows.shape[1])
        return L.bn(self.params, self.stats, name, rows, self.mode)


def _bn_maps(scope: _Scope, name: str, h: Tensor) -> Tensor:
    """Batch norm with one statistic per (filter, feature row), pooled over batch and time."""
    b, c, d, t = h.shape
    rows = h.transpose(0, 3, 1, 2).reshape(b * t, c * d)
    rows = scope.bn(name, rows)
    return rows.reshape(b, t, c, d).transpose(0, 2, 3, 1)


def _tcl(h: Tensor, cfg: TclConfig, scope: _Scope, prefix: str, out_channels: int) -> Tensor:
    for j, k in enumerate(cfg.kernel_sizes):
        last = j == len(cfg.kernel_sizes) - 1
        cin = h.shape[1]
        stride = 2 if (last and cfg.downsample == "stride2") else 1
        w = scope.weight(f"{prefix}.conv{j}.w", (out_channels, cin, k), cin * k)
        bias = None if cfg.use_bn else scope.weight(f"{prefix}.conv{j}.b", (out_channels,), cin * k)
        h = L.temporal_conv1d(h, w, stride=stride, bias=bias)
        if cfg.use_bn:
            h = _bn_maps(scope, f"{prefix}.bn{j}", h)
        if cfg.use_relu:
            h = T.relu(h)
    if cfg.downsample == "pool":
        h = L.temporal_max_pool(h, 2)
    return h


def tcl(x, cfg: TclConfig, params: ParameterSet, prefix: str = "tcl", mode: str = "eval",
        stats: dict | None = None, init_rng=None, out_channels: int | None = None) -> Tensor:
    """Apply one TCL to (C, D, T) or (B, C, D, T) input; output has ceil(T/2) frames.

    Without ``out_channels`` the layer preserves the filter count.
    """
    L.check_mode(mode)
    x = as_tensor(x)
    single = x.ndim == 3
    h = x.reshape((1,) + x.shape) if single else x
    scope = _Scope(params, stats, mode, init_rng)
    out = _tcl(h, cfg, scope, prefix, out_channels or h.shape[1])
    return out.reshape(out.shape[1:]) if single else out


def _flow_channels(cfg: TemporalConvConfig, cin: int) -> int:
    return cin if cfg.channel_mode == "preserve" else 1


def multi_flow(x, cfg: TemporalConvConfig, params: ParameterSet, prefix: str = "m0",
               mode: str = "eval", stats: dict | None = None, init_rng=None) -> Tensor:
    """Run one TCL per flow on the same (B, C, D, T) input and concatenate along filters."""
    scope = _Scope(params, stats, L.check_mode(mode), init_rng)
    return _multi_flow(as_tensor(x), cfg, scope, prefix)


def _multi_flow(h: Tensor, cfg: TemporalConvConfig, scope: _Scope, prefix: str) -> Tensor:
    cout = _flow_channels(cfg, h.shape[1])
    outs = [_tcl(h, cfg.tcl_config(j), scope, f"{prefix}.flow{j}", cout) for j in range(cfg.num_flows)]
    extents = {o.shape[-1] for o in outs}
    if len(extents) != 1:
        raise ContractError(f"flows produced unequal temporal extents {sorted(extents)}")
    return T.concat(outs, axis=1)


def conv_fusion(x, chain, params: ParameterSet, prefix: str = "fuse", mode: str = "eval",
                stats: dict | None = None, init_rng=None, use_bn: bool = True) -> Tensor:
    """Chain of 1 x 1 filter-mixing convolutions, BN -> ReLU between stages."""
    chain = tuple(int(c) for c in chain)
    if not chain or chain[-1] != 1 or any(a <= b for a, b in zip(chain, chain[1:])):
        raise ConfigError(f"fusion chain must be strictly decreasing and end at 1, got {chain}")
    scope = _Scope(params, stats, L.check_mode(mode), init_rng)
    return _conv_fusion(as_tensor(x), chain, scope, prefix, use_bn)


def _conv_fusion(h: Tensor, chain, scope: _Scope, prefix: str, use_bn: bool) -> Tensor:
    for s, cout in enumerate(chain):
        cin = h.shape[1]
        w = scope.weight(f"{prefix}.stage{s}.w", (cout, cin), cin)
        b = scope.weight(f"{prefix}.stage{s}.b", (cout,), cin)
        h = L.pointwise_conv(h, w, b)
        if s < len(chain) - 1:
            if use_bn:
                h = _bn_maps(scope, f"{prefix}.stage{s}.bn", h)
            h = T.relu(h)
    return h


def _reduce(h: Tensor, cfg: TemporalConvConfig, scope: _Scope, prefix: str, chain) -> Tensor:
    if cfg.reduction == "avg":
        return h.mean(axis=1, keepdims=True)
    if cfg.reduction == "max":
        return T.reduce_max(h, axis=1, keepdims=True)
    return _conv_fusion(h, chain, scope, prefix, cfg.use_bn)


def _trunk(x: Tensor, cfg: TemporalConvConfig, scope: _Scope, trace: list | None) -> Tensor:
    b, d, n = x.shape
    h = x.reshape(b, 1, d, n)
    if cfg.architecture == "vgg":
        tc = cfg.tcl_config(0)
        for i in range(cfg.num_modules):
            h = _tcl(h, tc, scope, f"m{i}", _flow_channels(cfg, h.shape[1]))
            if trace is not None:
                trace.append((f"m{i}", h.shape[1:]))
    elif cfg.architecture == "inception":
        for i in range(cfg.num_modules):
            h = _multi_flow(h, cfg, scope, f"m{i}")
            if trace is not None:
                trace.append((f"m{i}", h.shape[1:]))
            if cfg.reduction_placement == "per_module":
                h = _reduce(h, cfg, scope, f"m{i}.fuse", cfg.fusion_chain)
    else:  # multiflow_vgg: independent chains, concatenated once at the end
        outs = []
        for j in range(cfg.num_flows):
            hj, tc = h, cfg.tcl_config(j)
            for i in range(cfg.num_modules):
                hj = _tcl(hj, tc, scope, f"flow{j}.m{i}", _flow_channels(cfg, hj.shape[1]))
            outs.append(hj)
        h = T.concat(outs, axis=1)
        if trace is not None:
            trace.append((f"m{cfg.num_modules - 1}", h.shape[1:]))
    if h.shape[1] > 1:
        h = _reduce(h, cfg, scope, "fuse", cfg.fusion_chain)
    if trace is not None:
        trace.append(("fused", h.shape[1:]))
    return h


def _head(h: Tensor, cfg: TemporalConvConfig, scope: _Scope, rng) -> Tensor:
    b = h.shape[0]
    flat = h.reshape(b, -1)
    p = cfg.dropout_rate if cfg.use_dropout else 0.0
    flat = L.dropout(flat, p, scope.mode, rng)
    if cfg.fc_width is not None:
        din = flat.shape[1]
        w = scope.weight("fc.w", (din, cfg.fc_width), din)
        bias = scope.weight("fc.b", (cfg.fc_width,), din)
        flat = L.fully_connected(flat, w, bias)
        if cfg.use_bn:
            flat = scope.bn("fc.bn", flat)
        flat = T.relu(flat)
        flat = L.dropout(flat, p, scope.mode, rng)
    din = flat.shape[1]
    w = scope.weight("classifier.w", (din, cfg.num_classes), din)
    bias = scope.weight("classifier.b", (cfg.num_classes,), din)
    return L.fully_connected(flat, w, bias)


def logits(x, cfg: TemporalConvConfig, params: ParameterSet, mode: str = "eval",
           stats: dict | None = None, rng=None, *, init_rng=None, trace: list | None = None) -> Tensor:
    """Unnormalised class scores for a batch ``x`` of shape (B, D, N)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"expected a (B, D, N) batch, got {x.shape}")
    if x.shape[2] < 1:
        raise ContractError("sequence must have at least one frame")
    scope = _Scope(params, stats, L.check_mode(mode), init_rng)
    return _head(_trunk(x, cfg, scope, trace), cfg, scope, rng)


def init_params(cfg: TemporalConvConfig, dim: int, length: int,
                rng: np.random.Generator) -> tuple[ParameterSet, dict]:
    """Create every weight for inputs of shape (dim, length), in forward order."""
    params, stats = ParameterSet(), {}
    logits(np.zeros((2, dim, length)), cfg, params, "check", stats, None, init_rng=rng)
    return params, stats


def forward(x, cfg: TemporalConvConfig, params: ParameterSet, mode: str = "eval",
            stats: dict | None = None, rng=None) -> np.ndarray:
    """Class distribution for one (D, N) feature matrix or a (B, D, N) batch."""
    arr = x.values if hasattr(x, "values") else x
    arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    probs = L.softmax(logits(arr, cfg, params, mode, stats, rng)).data
    return probs[0] if single else probs


def trace_shapes(cfg: TemporalConvConfig, dim: int, length: int) -> list[tuple[str, tuple[int, ...]]]:
    """(filters, D, T) after every module and after fusion, from a real forward pass."""
    trace: list = []
    params = ParameterSet()
    logits(np.zeros((2, dim, length)), cfg, params, "check", {}, None,
           init_rng=np.random.default_rng(0), trace=trace)
    return trace


# -- catalog -----------------------------------------------------------------
class CatalogEntry(NamedTuple):
    id: str
    table: str
    block: str
    config: TemporalConvConfig


ARCHITECTURE_TABLE = "Temporal-ConvNet architectures"
REDUCTION_TABLE = "Dimension reduction"
KERNEL_TABLE = "Convolution methods"

DESCRIPTOR_COLUMNS = {
    ARCHITECTURE_TABLE: ("Architecture", "BN", "Dropout", "FC"),
    REDUCTION_TABLE: ("Placement", "Method", "Stage 1", "Stage 2", "Stage 3", "Stage 4"),
    KERNEL_TABLE: ("Architecture", "First flow", "Second flow"),
}


def architecture_string(cfg: TemporalConvConfig) -> str:
    """Stacked layers in braces, parallel flows in parentheses, T for one TCL."""
    width = "(" + ",".join("T" * cfg.num_flows) + ")"
    if cfg.architecture == "vgg":
        unit = "T"
    elif cfg.architecture == "inception":
        unit = width
    else:
        chain = "{" + ",".join("T" * cfg.num_modules) + "}"
        return "(" + ",".join([chain] * cfg.num_flows) + ")"
    if cfg.num_modules == 1:
        return unit
    return "{" + ",".join([unit] * cfg.num_modules) + "}"


def _flow_string(ks) -> str:
    return " - ".join(f"Conv{k}, 1" for k in ks)


def describe(cfg: TemporalConvConfig, table: str = ARCHITECTURE_TABLE) -> tuple[str, ...]:
    """Row descriptor aligned with ``DESCRIPTOR_COLUMNS[table]``."""
    if table == ARCHITECTURE_TABLE:
        return (architecture_string(cfg), "BN" if cfg.use_bn else "",
                "Dropout" if cfg.use_dropout else "",
                "" if cfg.fc_width is None else str(cfg.fc_width))
    if table == REDUCTION_TABLE:
        placement = ("each multi-flow module" if cfg.reduction_placement == "per_module"
                     else "after all multi-flow modules")
        method = {"avg": "Average pooling", "max": "Max pooling", "conv": "Conv fusion"}[cfg.reduction]
        stages = [f"Conv1, {c}" for c in cfg.fusion_chain] if cfg.reduction == "conv" else []
        stages += [""] * (4 - len(stages))
        return (placement, method, *stages)
    if table == KERNEL_TABLE:
        arch = "2-stride Conv" if cfg.downsample == "stride2" else "1-stride Conv + Max pooling"
        return (arch, _flow_string(cfg.flow_kernels[0]), _flow_string(cfg.flow_kernels[1]))
    raise ConfigError(f"unknown table {table!r}")


def tconv_catalog(num_classes: int = 101) -> list[CatalogEntry]:
    """Rows of the architecture, dimension-reduction and kernel ablation tables."""
    entries: list[CatalogEntry] = []

    def add(vid, table, block, **kw):
        entries.append(CatalogEntry(vid, table, block, TemporalConvConfig(num_classes=num_classes, **kw)))

    A = ARCHITECTURE_TABLE
    add("1l-vgg", A, "1L", architecture="vgg", num_modules=1)
    add("1l-inception", A, "1L", architecture="inception", num_modules=1, fusion_chain=(1,))
    add("2l-vgg", A, "2L", architecture="vgg", num_modules=2)
    add("2l-inception", A, "2L", architecture="inception", num_modules=2, fusion_chain=(1,))
    for fc in (512, 1024, 2048, 4096):
        add(f"vgg-fc{fc}", A, "Temporal-VGG", architecture="vgg", fc_width=fc)
    for fc in (512, 1024, 2048, 4096):
        add(f"mfvgg-fc{fc}", A, "Multi-flow Temporal-VGG", architecture="multiflow_vgg",
            fusion_chain=(1,), fc_width=fc)
    block = "Temporal-Inception"
    add("inception-fc1024", A, block, use_bn=False, use_dropout=False)
    add("inception-drop-fc1024", A, block, use_bn=False)
    add("inception-bn-fc1024", A, block, use_dropout=False)
    add("inception-bn-drop-nofc", A, block, fc_width=None)
    for fc in (512, 1024, 2048, 4096):
        add(f"inception-bn-drop-fc{fc}", A, block, fc_width=fc)

    R = REDUCTION_TABLE
    block = "Reduce the dimension for each multi-flow module"
    add("fusion-module-avg", R, block, reduction="avg", reduction_placement="per_module")
    add("fusion-module-max", R, block, reduction="max", reduction_placement="per_module")
    add("fusion-module-conv1", R, block, reduction="conv", reduction_placement="per_module",
        fusion_chain=(1,))
    block = "Reduce the dimension after all the multi-flow modules"
    add("fusion-final-avg", R, block, reduction="avg")
    add("fusion-final-max", R, block, reduction="max")
    for chain in ((1,), (2, 1), (4, 1), (8, 1), (4, 2, 1), (8, 4, 1), (8, 2, 1), (8, 4, 2, 1)):
        add("fusion-final-conv" + "-".join(map(str, chain)), R, block, fusion_chain=chain)

    K = KERNEL_TABLE
    block = "1-stride Conv + Max pooling"
    for pair in ((3, 5), (3, 7), (3, 9), (5, 9), (7, 9), (5, 7)):
        add(f"kernels-{pair[0]}-{pair[1]}", K, block, flow_kernels=pair)
    add("kernels-stacked3", K, "stacked Conv3 to replace Conv5 & Conv7",
        flow_kernels=((3, 3), (3, 3, 3)))
    add("kernels-5-7-stride2", K, "Use 2-stride Conv to reduce the temporal dimension",
        flow_kernels=(5, 7), downsample="stride2")

    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate Temporal-ConvNet variant ids")
    return entries


def with_classes(cfg: TemporalConvConfig, num_classes: int) -> TemporalConvConfig:
    return replace(cfg, num_classes=num_classes)
