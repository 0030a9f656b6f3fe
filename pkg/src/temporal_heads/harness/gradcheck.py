"""Finite-difference verification of every catalog variant."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..models import shrink
from ..train import DEFAULT_TOLERANCE, grad_check
from .config import catalog

# Reduced problem size for routine checks.
SMALL_DIM = 8
SMALL_LENGTH = 16
SMALL_CLASSES = 4
SMALL_BATCH = 4
SMALL_ENTRIES = 16


@dataclass(frozen=True)
class GradCheckRow:
    family: str
    variant_id: str
    max_error: float
    worst_parameter: str
    entries: int
    kinks_skipped: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < DEFAULT_TOLERANCE


def check_sample(dim: int, length: int, classes: int, batch: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, dim, length))
    y = np.arange(batch) % classes
    return x, y


def run_gradchecks(families=("tslstm", "tconv"), variant_ids=None, *, small: bool = True,
                   seed: int = 0, max_entries: int | None = SMALL_ENTRIES, dim: int = SMALL_DIM,
                   length: int = SMALL_LENGTH, classes: int = SMALL_CLASSES,
                   batch: int = SMALL_BATCH, progress=None) -> list[GradCheckRow]:
    """Gradient-check every selected variant; never raises on a failing variant."""
    sample = check_sample(dim, length, classes, batch, seed)
    rows = []
    for family in families:
        for entry in catalog(family, classes):
            if variant_ids is not None and entry.id not in variant_ids:
                continue
            cfg = shrink(entry.config) if small else replace(entry.config)
            started = time.perf_counter()
            r = grad_check(cfg, sample, max_entries=max_entries, seed=seed, raise_on_failure=False)
            row = GradCheckRow(family, entry.id, r.max_error, r.worst_parameter,
                               r.entries_checked, r.kinks_skipped, time.perf_counter() - started)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def format_rows(rows) -> str:
    header = f"{'family':<7} {'variant':<28} {'max rel err':>11}  {'worst parameter':<26} {'entries':>7} {'kinks':>5}  status"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.family:<7} {r.variant_id:<28} {r.max_error:>11.3e}  {r.worst_parameter:<26} "
                     f"{r.entries:>7} {r.kinks_skipped:>5}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
