"""Optimiser, training loop and finite-difference gradient verification."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError, DimensionError, GradCheckError, TrainingError
from .layers import cross_entropy  # noqa: F401  (re-exported: the loss lives with the optimiser API)
from .models import Head, family_of
from .params import ParameterSet
from .tensor import record_branches

FAMILY_DEFAULTS = {
    "tslstm": {"lr": 5e-5, "weight_decay": 0.0},
    "tconv": {"lr": 1e-4, "weight_decay": 1e-1},
    "baseline": {"lr": 1e-3, "weight_decay": 0.0},
}


# -- configuration ---------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 5e-5
    weight_decay: float = 0.0
    batch_size: int = 32
    max_epochs: int = 100
    plateau_patience: int = 5
    lr_decay_factor: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}; only 'adam' is available")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1), got {self.lr_decay_factor}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch norm needs two rows)")
        if self.max_epochs < 0 or self.plateau_patience < 1:
            raise ConfigError("max_epochs must be >= 0 and plateau_patience >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("adam needs 0 <= beta < 1 and eps > 0")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "TrainConfig":
        """Family-specific learning rate and weight decay, then ``overrides``."""
        if family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown family {family!r}")
        return cls(**{**FAMILY_DEFAULTS[family], **overrides})

    @classmethod
    def from_dict(cls, doc: dict, family: str | None = None) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        if family is None:
            return cls(**doc)
        return cls.for_family(family, **doc)

    def to_dict(self) -> dict:
        return asdict(self)


# -- Adam --------------------------------------------------------------------------
@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, lr: float | None = None) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``. Parameters
    without an entry in ``grads`` are treated as having zero gradient.
    """
    lr = cfg.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay:
            update = update + cfg.weight_decay * p.data
        p.data = p.data - lr * update
    return params, state


# -- reports -------------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    eval_accuracy: float
    lr: float


@dataclass
class TrainReport:
    family: str
    seed: int
    epochs: list[EpochRecord]
    checksum: str
    wall_time: float
    params: ParameterSet | None = field(default=None, repr=False, compare=False)
    stats: dict | None = field(default=None, repr=False, compare=False)

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    @property
    def final_eval_accuracy(self) -> float:
        return self.epochs[-1].eval_accuracy if self.epochs else float("nan")

    @property
    def best_eval_accuracy(self) -> float:
        return max((e.eval_accuracy for e in self.epochs), default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "seed": self.seed,
            "checksum": self.checksum,
            "wall_time": self.wall_time,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainReport":
        return cls(doc["family"], doc["seed"], [EpochRecord(**e) for e in doc["epochs"]],
                   doc["checksum"], doc["wall_time"])

    def to_table(self) -> str:
        head = f"{'epoch':>5}  {'loss':>12}  {'train_acc':>9}  {'eval_acc':>8}  {'lr':>9}"
        rows = [head, "-" * len(head)]
        for e in self.epochs:
            rows.append(f"{e.epoch:>5}  {e.loss:>12.6f}  {e.train_accuracy:>9.4f}  "
                        f"{e.eval_accuracy:>8.4f}  {e.lr:>9.2e}")
        rows.append(f"checksum {self.checksum}  wall {self.wall_time:.2f}s")
        return "\n".join(rows)


# -- training loop -------------------------------------------------------------------
def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    """Contiguous batches; a trailing singleton is folded into the previous batch."""
    out = [order[i:i + size] for i in range(0, len(order), size)]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def accuracy(probs: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate(model_cfg, params: ParameterSet, stats: dict, x, y, batch_size: int = 256) -> float:
    """Eval-mode accuracy of a trained head on ``(x, y)``."""
    return accuracy(Head(model_cfg).predict_proba(x, params, stats, batch_size), y)


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent init, shuffle and dropout generators derived from one seed."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def fit(model_cfg, dataset, cfg: TrainConfig, *, params: ParameterSet | None = None,
        stats: dict | None = None, log=None) -> TrainReport:
    """Train ``model_cfg`` on ``dataset.x_train`` and track accuracy on ``x_test``.

    Everything random (initialisation, batch order, dropout masks) is drawn
    from generators seeded by ``cfg.seed``. The learning rate is multiplied by
    ``lr_decay_factor`` whenever the eval accuracy has not improved for
    ``plateau_patience`` consecutive epochs.
    """
    head = Head(model_cfg)
    x, y = np.asarray(dataset.x_train, dtype=np.float64), np.asarray(dataset.y_train)
    if len(x) == 0:
        raise DataError("the train split is empty")
    if len(x) < 2:
        raise DataError("training needs at least two sequences (batch norm)")
    if model_cfg.num_classes != dataset.num_classes:
        raise ConfigError(f"model has {model_cfg.num_classes} classes, dataset {dataset.num_classes}")
    have_eval = len(dataset.x_test) > 0
    init_rng, order_rng, drop_rng = seed_streams(cfg.seed)
    if params is None:
        params, stats = head.init(x.shape[1], x.shape[2], init_rng)
    stats = {} if stats is None else stats

    started = time.perf_counter()
    state = AdamState()
    lr = cfg.lr
    best, stale = -1.0, 0
    records = []
    for epoch in range(1, cfg.max_epochs + 1):
        total, correct = 0.0, 0
        for idx in _batches(order_rng.permutation(len(x)), cfg.batch_size):
            params.zero_grad()
            loss, scores = head.loss(x[idx], y[idx], params, "train", stats, drop_rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss {value} at epoch {epoch}", epoch)
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adam_step(params, grads, state, cfg, lr)
            total += value * len(idx)
            correct += int(np.sum(np.argmax(scores, axis=1) == y[idx]))
        train_acc = correct / len(x)
        eval_acc = evaluate(model_cfg, params, stats, dataset.x_test, dataset.y_test) if have_eval else train_acc
        records.append(EpochRecord(epoch, total / len(x), train_acc, eval_acc, lr))
        if log is not None:
            log(records[-1])
        if eval_acc > best:
            best, stale = eval_acc, 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                lr *= cfg.lr_decay_factor
                stale = 0
    return TrainReport(family_of(model_cfg), cfg.seed, records, params.checksum(),
                       time.perf_counter() - started, params, stats)


# -- gradient check ------------------------------------------------------------------
@dataclass
class GradCheckReport:
    max_error: float
    worst_parameter: str
    errors: dict[str, float]
    entries_checked: int
    kinks_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_error < DEFAULT_TOLERANCE


DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Below this magnitude errors are measured in absolute terms: central
# differences carry ~1e-11 of rounding noise, which would dominate a pure ratio.
ERROR_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ERROR_FLOOR) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def grad_check(model_cfg, sample, *, params: ParameterSet | None = None, h: float = DEFAULT_STEP,
               tol: float = DEFAULT_TOLERANCE, max_entries: int | None = None, seed: int = 0,
               raise_on_failure: bool = True) -> GradCheckReport:
    """Compare backprop against central differences for every parameter tensor.

    ``sample`` is ``(x, y)`` with ``x`` of shape (B, D, N), ``B >= 2``. The
    forward pass runs in ``"check"`` mode: batch statistics, no running-stat
    updates, no dropout. ``max_entries`` caps the number of randomly chosen
    entries probed per tensor; every tensor is always probed. Entries whose
    stencil ``theta +- h`` flips a relu or max decision are skipped and counted.
    """
    x, y = sample
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 3 or len(x) < 2:
        raise ContractError("grad_check needs a (B, D, N) sample with B >= 2")
    head = Head(model_cfg)
    rng = np.random.default_rng(seed)
    if params is None:
        params, _ = head.init(x.shape[1], x.shape[2], rng)

    def probe() -> tuple[float, tuple]:
        with record_branches() as rec:
            value = float(head.loss(x, y, params, "check")[0].data)
        return value, rec.pattern

    params.zero_grad()
    with record_branches() as rec:
        loss, _ = head.loss(x, y, params, "check")
    base_pattern = rec.pattern
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    errors, checked, skipped = {}, 0, 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        order = rng.permutation(flat.size) if max_entries is not None else np.arange(flat.size)
        limit = flat.size if max_entries is None else min(max_entries, flat.size)
        probed, numeric = [], []
        for i in order:
            if len(probed) == limit:
                break
            orig = flat[i]
            flat[i] = orig + h
            up, up_pattern = probe()
            flat[i] = orig - h
            down, down_pattern = probe()
            flat[i] = orig
            if up_pattern != base_pattern or down_pattern != base_pattern:
                # A relu or max switched branch inside the stencil: the loss is
                # not differentiable there and the difference quotient is not an oracle.
                skipped += 1
                continue
            probed.append(i)
            numeric.append((up - down) / (2 * h))
        if not probed:
            raise GradCheckError(f"every probe of {name!r} straddles a kink; use another sample", name, float("nan"))
        errors[name] = float(relative_error(analytic[name].reshape(-1)[probed], np.array(numeric)).max())
        checked += len(probed)
    params.zero_grad()
    worst = max(errors, key=errors.get)
    report = GradCheckReport(errors[worst], worst, errors, checked, skipped)
    if raise_on_failure and report.max_error > tol:
        raise GradCheckError(f"gradient check failed for {worst!r}: relative error "
                             f"{report.max_error:.3e} > {tol:g}", worst, report.max_error)
    return report
