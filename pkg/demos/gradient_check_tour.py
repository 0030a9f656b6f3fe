"""Finite-difference check of a few hand-picked heads, every tensor in full.

    python3 demos/gradient_check_tour.py
"""
import numpy as np

from temporal_heads.harness.baseline import FrameBaselineConfig
from temporal_heads.tconv import TemporalConvConfig
from temporal_heads.train import grad_check
from temporal_heads.tslstm import TsLstmConfig

HEADS = {
    "frame baseline (FC only)": (FrameBaselineConfig(num_classes=3), 10),
    "TS-LSTM S=3, LSTM-4": (TsLstmConfig(num_segments=3, lstm_widths=(4,), num_classes=3), 10),
    "TS-LSTM S=5, FC-6 + max": (TsLstmConfig(num_segments=5, pre_fc_width=6, lstm_widths=(), num_classes=3), 10),
    "Temporal-Inception, 2 modules": (TemporalConvConfig(num_modules=2, fc_width=8, num_classes=3), 16),
}


def main():
    rng = np.random.default_rng(0)
    for name, (cfg, frames) in HEADS.items():
        x, y = rng.normal(size=(4, 8, frames)), np.array([0, 1, 2, 1])
        rep = grad_check(cfg, (x, y))
        print(f"{name:<32} worst {rep.max_error:.2e} at {rep.worst_parameter:<22} "
              f"{rep.entries_checked} entries, {rep.kinks_skipped} skipped at ReLU/max kinks")


if __name__ == "__main__":
    main()
