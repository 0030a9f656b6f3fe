"""Checkpoints as ``.npz``: parameters, batch-norm statistics and the model config."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..layers import BatchNormStats
from ..models import config_from_dict, config_to_dict, family_of
from ..params import ParameterSet


def save_checkpoint(path, model_cfg, params: ParameterSet, stats: dict) -> None:
    arrays = {f"param/{k}": t.data for k, t in params.items()}
    for name, s in stats.items():
        arrays[f"stat/{name}/mean"] = s.running_mean
        arrays[f"stat/{name}/var"] = s.running_var
    meta = {"family": family_of(model_cfg), "model": config_to_dict(model_cfg),
            "param_order": list(params)}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(model_cfg, params, stats)``."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            files = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path} is not a checkpoint: {exc}") from None
    if "meta" not in files:
        raise FormatError(f"{path} has no metadata record")
    meta = json.loads(files.pop("meta").tobytes().decode())
    cfg = config_from_dict(meta["family"], meta["model"])
    params = ParameterSet.from_arrays({k: files[f"param/{k}"] for k in meta["param_order"]})
    stats = {}
    for key in files:
        if key.startswith("stat/") and key.endswith("/mean"):
            name = key[len("stat/"):-len("/mean")]
            stats[name] = BatchNormStats(files[key], files[f"stat/{name}/var"])
    return cfg, params, stats
