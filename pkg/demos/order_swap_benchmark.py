"""Why frame order matters: order-swapped classes versus order-blind heads.

Builds a small order-swap dataset, shows that global pooling cannot tell a
swapped pair apart while segment pooling can, then trains an order-blind
control and a three-segment TS-LSTM head on it.

    python3 demos/order_swap_benchmark.py --epochs 15
"""
import argparse

import numpy as np

from temporal_heads.data import SynthSpec, synthesize
from temporal_heads.harness.baseline import FrameBaselineConfig
from temporal_heads.train import TrainConfig, fit
from temporal_heads.tslstm import TsLstmConfig, partition


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=1e-3, help="shared learning rate (small data, few epochs)")
    args = parser.parse_args()

    spec = SynthSpec(num_classes=4, dim=16, train_per_class=60, test_per_class=20, seed=args.seed)
    clean, _, _ = synthesize(SynthSpec(num_classes=4, dim=16, noise_sigma=0.0,
                                       train_per_class=1, test_per_class=0, seed=args.seed))
    a, b = spec.order_swapped_pairs()[0]
    xa, xb = clean.x_train[a], clean.x_train[b]
    print(f"classes {a} and {b} use prototypes {spec.prototypes_per_class[a]} "
          f"and {spec.prototypes_per_class[b]}")
    print("  global max-pool gap:   ", np.abs(xa.max(axis=1) - xb.max(axis=1)).max())
    print("  global mean-pool gap:  ", np.abs(xa.mean(axis=1) - xb.mean(axis=1)).max())
    seg = [(xa[:, s:e].max(axis=1) - xb[:, s:e].max(axis=1)) for s, e in partition(spec.length, 3)]
    print("  3-segment max-pool gap:", np.abs(np.stack(seg)).max())

    data, _, _ = synthesize(spec)
    heads = {
        "frame-averaging control": (FrameBaselineConfig(num_classes=4), "baseline"),
        "TS-LSTM, S=1, max only": (TsLstmConfig(num_segments=1, lstm_widths=(), num_classes=4), "tslstm"),
        "TS-LSTM, S=3, max + LSTM-32": (TsLstmConfig(num_segments=3, lstm_widths=(32,), num_classes=4), "tslstm"),
    }
    print(f"\ntraining for {args.epochs} epochs on {len(data.y_train)} sequences")
    for name, (cfg, family) in heads.items():
        rep = fit(cfg, data, TrainConfig.for_family(family, lr=args.lr, max_epochs=args.epochs, seed=args.seed))
        print(f"  {name:<30} test accuracy {100 * rep.final_eval_accuracy:5.1f}%")
    print("\norder-blind heads can only guess within a swapped pair, so they hover around 50%;\n"
          "on 80 test sequences that estimate still moves by several points between seeds")


if __name__ == "__main__":
    main()
