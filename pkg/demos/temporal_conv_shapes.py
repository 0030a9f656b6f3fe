"""Shape walk through the Temporal-ConvNet family.

Prints the (filters, D, T) map after every module and after fusion, plus the
parameter count, for the three architectures at a chosen input size.

    python3 demos/temporal_conv_shapes.py --dim 64 --frames 25
"""
import argparse

import numpy as np

from temporal_heads import tconv


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--frames", type=int, default=25)
    parser.add_argument("--classes", type=int, default=8)
    args = parser.parse_args()

    for arch in tconv.ARCHITECTURES:
        kw = {"flow_kernels": ((5,),)} if arch == "vgg" else {}
        if arch == "multiflow_vgg":
            kw["fusion_chain"] = (1,)
        cfg = tconv.TemporalConvConfig(architecture=arch, num_classes=args.classes, **kw)
        params, _ = tconv.init_params(cfg, args.dim, args.frames, np.random.default_rng(0))
        print(f"{arch}  {tconv.architecture_string(cfg)}  ({params.count():,} parameters)")
        for name, shape in tconv.trace_shapes(cfg, args.dim, args.frames):
            print(f"  {name:<6} filters {shape[0]:>2}  D {shape[1]}  T {shape[2]}")
        print()


if __name__ == "__main__":
    main()
