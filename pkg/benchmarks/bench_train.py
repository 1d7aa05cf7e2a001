"""Meta-training throughput across methods and batch sizes.

Run:  python benchmarks/bench_train.py [--iters 200]
"""

import argparse
import time

from metainterp import bilevel as bl
from metainterp import episodes as ep
from metainterp import interpolate as itp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args()

    gen = ep.GenConfig(way=5, shots=1, queries=10, dim=10, train_tasks=5,
                       val_tasks=3, test_tasks=5, spread=1.5, seed=11)
    ds = ep.gen_gaussian_tasks(gen)

    print(f"{'method':<14} {'batch':>5} {'iters/s':>8} {'ops/iter':>9}")
    for method in ("protonet", "protonet-st", "mlti", "meta-interp"):
        for batch in (2, 4):
            cfg = bl.TrainConfig(
                max_iters=args.iters, update_period=max(10, args.iters // 4),
                batch_size=batch, seed=0, encoder_widths=(32, 16),
                interp=itp.InterpConfig(layer=1), set_kind="simple",
                patience=0,
            )
            state = bl.init_state(ds, cfg, method)
            t0 = time.perf_counter()
            bl.meta_train(ds, cfg, method, state=state)
            wall = time.perf_counter() - t0
            print(f"{method:<14} {batch:>5} {args.iters / wall:>8.1f} "
                  f"{state.work // max(1, state.iteration):>9}")


if __name__ == "__main__":
    main()
