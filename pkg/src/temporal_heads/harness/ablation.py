"""Run a catalog of head variants on one dataset and rank them."""
from __future__ import annotations

import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..errors import ConfigError, ContractError
from ..models import Head, config_to_dict, shrink
from ..train import TrainConfig, fit
from .config import describe_entry

THREADS_ENV = "TEMPORAL_HEADS_THREADS"


@dataclass(frozen=True)
class AblationResult:
    variant_id: str
    family: str
    table: str
    columns: tuple[str, ...]
    descriptor: tuple[str, ...]
    config: dict
    eval_accuracy: float
    param_count: int
    wall_time: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.eval_accuracy <= 1.0:
            raise ContractError(f"accuracy {self.eval_accuracy} outside [0, 1]")
        if self.param_count <= 0:
            raise ContractError("parameter count must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["columns"], d["descriptor"] = list(self.columns), list(self.descriptor)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "AblationResult":
        doc = dict(doc)
        doc["columns"], doc["descriptor"] = tuple(doc["columns"]), tuple(doc["descriptor"])
        return cls(**doc)


def variant_seed(base_seed: int, variant_id: str) -> int:
    """Per-variant seed, independent of which other variants run alongside."""
    ss = np.random.SeedSequence([int(base_seed), zlib.crc32(variant_id.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def worker_limit(jobs: int) -> int:
    """``jobs`` capped by the thread-cap environment variable when it is set."""
    cap = os.environ.get(THREADS_ENV)
    if cap is not None:
        try:
            cap_n = int(cap)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
        if cap_n < 1:
            raise ConfigError(f"{THREADS_ENV} must be positive")
        jobs = min(jobs, cap_n)
    return max(1, jobs)


_DATASET = None


def _install_dataset(dataset) -> None:
    global _DATASET
    _DATASET = dataset


def _run_one(task) -> AblationResult:
    family, entry, model_cfg, train_cfg = task
    seed = train_cfg.seed
    started = time.perf_counter()
    report = fit(model_cfg, _DATASET, train_cfg)
    columns, descriptor = describe_entry(family, entry, model_cfg.num_classes)
    return AblationResult(
        variant_id=entry.id,
        family=family,
        table=entry.table,
        columns=tuple(columns),
        descriptor=tuple(descriptor),
        config=config_to_dict(model_cfg),
        eval_accuracy=float(report.final_eval_accuracy),
        param_count=report.params.count(),
        wall_time=time.perf_counter() - started,
        seed=seed,
    )


def prepare(family: str, entries, num_classes: int, train_cfg: TrainConfig, small: bool) -> list:
    """One task per entry: the variant's config at the dataset's class count."""
    tasks = []
    for entry in entries:
        cfg = replace(entry.config, num_classes=num_classes)
        if small:
            cfg = shrink(cfg)
        tcfg = replace(train_cfg, seed=variant_seed(train_cfg.seed, entry.id))
        tasks.append((family, entry, cfg, tcfg))
    return tasks


def run_ablation(family: str, entries, dataset, train_cfg: TrainConfig, *,
                 jobs: int = 1, small: bool = False) -> list[AblationResult]:
    """Fit every entry; results come back in catalog order whatever the completion order."""
    if not entries:
        raise ConfigError("no variants selected")
    tasks = prepare(family, entries, dataset.num_classes, train_cfg, small)
    workers = min(worker_limit(jobs), len(tasks))
    if workers == 1:
        _install_dataset(dataset)
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(workers, initializer=_install_dataset, initargs=(dataset,)) as pool:
        return list(pool.map(_run_one, tasks))


# -- reporting -------------------------------------------------------------------------
def ranked(results) -> list[AblationResult]:
    """Accuracy descending, ties broken by variant id."""
    return sorted(results, key=lambda r: (-r.eval_accuracy, r.variant_id))


@dataclass(frozen=True)
class AblationReport:
    text: str
    json: str


def _table(rows: list[AblationResult]) -> str:
    header = ("Variant", *rows[0].columns, "Params", "Accuracy")
    body = [(r.variant_id, *r.descriptor, str(r.param_count), f"{100 * r.eval_accuracy:.1f}%")
            for r in rows]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]

    def fmt(line):
        return "  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()

    return "\n".join([fmt(header), fmt(["-" * w for w in widths]), *map(fmt, body)])


def report(results) -> AblationReport:
    """Ranked plain-text table (one block per source table) and its JSON twin."""
    results = list(results)
    if not results:
        raise ContractError("report needs at least one result")
    order = ranked(results)
    tables = list(dict.fromkeys(r.table for r in results))
    blocks = [f"{t}\n{_table([r for r in order if r.table == t])}" for t in tables]
    doc = {"results": [r.to_dict() for r in order]}
    return AblationReport("\n\n".join(blocks), json.dumps(doc, indent=2))


def parse_report(text: str) -> list[AblationResult]:
    return [AblationResult.from_dict(d) for d in json.loads(text)["results"]]


def param_count(model_cfg, dim: int, length: int) -> int:
    params, _ = Head(model_cfg).init(dim, length, np.random.default_rng(0))
    return params.count()
