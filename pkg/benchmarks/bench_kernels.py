"""Benchmark the compiled convolution kernels against the numpy fallback.

Times each hot kernel at two working sizes: the desk network's first feature
map and the full network's entry resolution.  Run it from the repo root:

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dtype float32]

The package picks a backend once at import (HALALNET_PURE=1 forces the
fallback); this script imports both modules directly so the comparison does
not depend on that choice.
"""

import argparse
import time

import numpy as np

from halalnet._kernels import fallback

try:
    from halalnet._kernels import convops
except ImportError:
    convops = None


def _timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(dtype, rng):
    """(name, args-builder) pairs shared by both backends."""
    cases = []

    def add(name, maker):
        cases.append((name, maker))

    # desk scale: 64x64x3 input, 3x3 stride-2 entry conv (pad 1 -> 66x66)
    # full scale: 299x299x3 input, same conv (pad 1 -> 301x301)
    for tag, (h, w, cin) in (("desk 64x64x3", (66, 66, 3)),
                             ("full 299x299x3", (301, 301, 3))):
        xp = rng.random((8, h, w, cin)).astype(dtype)
        add(f"im2col {tag}", lambda xp=xp: lambda m: m.im2col(xp, 3, 3, 2, 2))

        ho, wo = (h - 3) // 2 + 1, (w - 3) // 2 + 1
        cols = rng.random((8, ho, wo, 3 * 3 * cin)).astype(dtype)
        add(f"col2im_add {tag}",
            lambda cols=cols, h=h, w=w: lambda m: m.col2im_add(cols, h, w, 3, 3, 2, 2))

    # depthwise: the mid-network shape where separable convs dominate
    for tag, (h, w, c) in (("desk 32x32x16", (34, 34, 16)),
                           ("full 74x74x256", (76, 76, 256))):
        xp = rng.random((8, h, w, c)).astype(dtype)
        wd = rng.random((3, 3, c)).astype(dtype)
        add(f"depthwise_forward {tag}",
            lambda xp=xp, wd=wd: lambda m: m.depthwise_forward(xp, wd, 1, 1))
        g = rng.random((8, h - 2, w - 2, c)).astype(dtype)
        add(f"depthwise_grad_input {tag}",
            lambda g=g, wd=wd, h=h, w=w: lambda m: m.depthwise_grad_input(g, wd, h, w, 1, 1))
        add(f"depthwise_grad_weight {tag}",
            lambda xp=xp, g=g: lambda m: m.depthwise_grad_weight(xp, g, 3, 3, 1, 1))

    xp = rng.random((8, 64, 64, 32)).astype(dtype)
    add("maxpool_forward desk 64x64x32",
        lambda xp=xp: lambda m: m.maxpool_forward(xp, 2, 2))
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = parser.parse_args()

    if convops is None:
        print("compiled backend not built; only timing the numpy fallback")
    rng = np.random.default_rng(0)
    dtype = np.dtype(args.dtype)

    header = f"{'kernel':<38} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, maker in _cases(dtype, rng):
        call = maker()
        t_py = _timeit(lambda: call(fallback), args.repeat)
        if convops is None:
            print(f"{name:<38} {t_py * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
            continue
        t_c = _timeit(lambda: call(convops), args.repeat)
        print(f"{name:<38} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms "
              f"{t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
