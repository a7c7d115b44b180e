"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from m2d import _kernels_py

try:
    from m2d import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    x = rng.normal(size=(128, 16, 125)).astype(np.float32)
    w = rng.normal(size=(8, 13)).astype(np.float32)
    b = np.zeros(8, np.float32)
    g = rng.normal(size=(128, 8, 16, 113)).astype(np.float32)
    eeg = rng.normal(size=(16, 75_000))
    taps = rng.normal(size=501)
    labels = np.repeat(rng.integers(0, 4, 600), 125).astype(np.int8)
    starts = np.arange(0, len(labels) - 125 + 1, 62, dtype=np.int64)
    return {
        "conv_time_forward (128x16x125, 8x13)": lambda m: m.conv_time_forward(x, w, b),
        "conv_time_weight_grad (128x8x16x113)": lambda m: m.conv_time_weight_grad(x, g),
        "fir_filter (16x75000, 501 taps)": lambda m: m.fir_filter(eeg, taps),
        "aggregate_windows (75000 labels, reject)": lambda m: m.aggregate_windows(labels, starts, 125, False),
        "aggregate_windows (75000 labels, majority)": lambda m: m.aggregate_windows(labels, starts, 125, True),
    }


def best_of(fn, module, repeat):
    return min(timeit.repeat(lambda: fn(module), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<44} {'python ms':>10} {'cython ms':>10} {'speed-up':>9}")
    for name, fn in cases(rng).items():
        py = best_of(fn, _kernels_py, args.repeat) * 1e3
        if _kernels is None:
            print(f"{name:<44} {py:>10.2f} {'n/a':>10} {'':>9}")
            continue
        cy = best_of(fn, _kernels, args.repeat) * 1e3
        print(f"{name:<44} {py:>10.2f} {cy:>10.2f} {py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
