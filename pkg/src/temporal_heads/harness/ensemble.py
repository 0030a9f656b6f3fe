"""Score-level fusion of class distributions."""
from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError


def ensemble_mean(preds) -> np.ndarray:
    """Elementwise mean of equally-shaped class distributions.

    Used for late fusion of stream predictions and for frame averaging in the
    baseline control. The mean of distributions is again a distribution.
    """
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    if not preds:
        raise ContractError("ensemble_mean needs at least one distribution")
    shape = preds[0].shape
    for p in preds[1:]:
        if p.shape != shape:
            raise DimensionError(f"distribution shapes differ: {shape} vs {p.shape}")
    return np.mean(np.stack(preds), axis=0)
