"""Benchmark the compiled feedback-delta kernel against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 1024,16384,262144]
"""

import argparse
import time

import numpy as np

from fedkgrec import kernels
from fedkgrec.kernels import _ref
from fedkgrec.seeding import fnv1a64


def bench(fn, values, labels, repeats=5):
    key = fnv1a64(b"layers.0.attn.lora_A")
    best = float("inf")
    for _ in range(repeats):
        work = values.copy()
        start = time.perf_counter()
        fn(work, key, 42, labels, 1e-3)
        best = min(best, time.perf_counter() - start)
    return best, work


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="1024,16384,262144")
    parser.add_argument("--examples", type=int, default=64)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(0)
    labels = (rng.random(args.examples) < 0.5).astype(np.uint8)

    print(f"examples per call: {args.examples}")
    print(f"{'size':>10} {'python (ms)':>12} {'compiled (ms)':>14} {'speedup':>8}  identical")
    for size in sizes:
        values = rng.normal(0, 1, size=size).astype(np.float32)
        t_ref, out_ref = bench(_ref.apply_feedback_deltas, values, labels)
        if kernels._fast is None:
            print(f"{size:>10} {t_ref * 1e3:>12.3f} {'n/a':>14} {'n/a':>8}  n/a (extension not built)")
            continue
        t_fast, out_fast = bench(kernels._fast.apply_feedback_deltas, values, labels)
        same = out_ref.tobytes() == out_fast.tobytes()
        print(
            f"{size:>10} {t_ref * 1e3:>12.3f} {t_fast * 1e3:>14.3f} "
            f"{t_ref / t_fast:>7.1f}x  {same}"
        )
        assert same, "backends diverged"


if __name__ == "__main__":
    main()
