#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Times the conv data-movement kernels (im2col / col2im / maxpool) and a
composed conv forward+backward step at the three signature resolutions the
classifier sees.  Both backends are bit-identical; this only measures speed.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--batch N]
"""

import argparse
import time

import numpy as np

from jobsig.kernels import available_backends


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def conv_step(mod, x, w):
    """One 3x3 conv forward + input/weight gradients via the kernel set."""
    n, c, h, wd = x.shape
    f = w.shape[0]
    cols = mod.im2col3x3(x)
    y = np.matmul(w.reshape(f, c * 9), cols)
    dy = y  # stand-in gradient with the right shape
    dcols = np.matmul(w.reshape(f, c * 9).T, dy)
    mod.col2im3x3(np.ascontiguousarray(dcols), h, wd)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=32)
    args = parser.parse_args()

    backends = available_backends()
    if "c" not in backends:
        print("note: compiled backend not built; showing pure-numpy only")

    rng = np.random.default_rng(0)
    cases = []
    for side, channels, filters in [(32, 3, 32), (64, 3, 32), (128, 3, 32)]:
        x = rng.standard_normal((args.batch, channels, side, side)).astype(np.float32)
        w = rng.standard_normal((filters, channels, 3, 3)).astype(np.float32)
        cases.append((f"{side}x{side}x{channels}", x, w))

    header = f"{'kernel':<26}" + "".join(f"{name:>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for label, x, w in cases:
        n, c, h, wd = x.shape
        cols = backends["py"].im2col3x3(x)
        dcols = np.ascontiguousarray(rng.standard_normal(cols.shape).astype(np.float32))
        pooled, idx = backends["py"].maxpool2x2(x)
        dy = np.ascontiguousarray(rng.standard_normal(pooled.shape).astype(np.float32))

        rows = [
            (f"im2col {label}", lambda m: m.im2col3x3(x)),
            (f"col2im {label}", lambda m: m.col2im3x3(dcols, h, wd)),
            (f"maxpool {label}", lambda m: m.maxpool2x2(x)),
            (f"maxpool_bwd {label}", lambda m: m.maxpool2x2_backward(dy, idx, h, wd)),
            (f"conv fwd+bwd {label}", lambda m: conv_step(m, x, w)),
        ]
        for name, fn in rows:
            times = {bname: timeit(lambda: fn(mod), args.repeat) for bname, mod in backends.items()}
            line = f"{name:<26}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
            if len(times) == 2:
                line += f"{times['py'] / times['c']:>9.2f}x"
            print(line)
        print()


if __name__ == "__main__":
    main()
