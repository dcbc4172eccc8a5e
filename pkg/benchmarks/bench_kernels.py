"""Compare the compiled kernels against the pure numpy fallback.

Runs each hot kernel at a few sizes with both implementations, checks they
agree, and prints median wall times plus the speedup. Usage:

    python3 benchmarks/bench_kernels.py [--runs 5] [--out bench_kernels.csv]
"""

import argparse
import statistics
import time

import numpy as np

from streamconf import bench as bn
from streamconf import kernels
from streamconf.numerics import Rng


def timeit(fn, runs):
    fn()  # warmup
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases():
    rng = Rng(0)
    for t in (200, 1500):
        c, k, g = 256, 5, 8
        x = rng.normal((t, c), np.float32)
        kernel = rng.normal((c, c // g, k), np.float32)
        bias = rng.normal((c,), np.float32)
        offsets = rng.uniform((t, g, k), -4, 4).astype(np.float32)
        yield (f"deform_fwd t={t}",
               lambda impl: impl.deform_conv1d_forward(x, kernel, bias, offsets))

    for t in (200, 1500):
        c, k = 256, 31
        x = rng.normal((t, c), np.float32)
        kernel = rng.normal((c, k), np.float32)
        yield (f"depthwise t={t}",
               lambda impl: impl.depthwise_conv1d(x, kernel))

    for n in (10 ** 5, 10 ** 6):
        yield (f"xoshiro n={n}",
               lambda impl: impl.xoshiro_fill(impl.seed_state(1), n))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=5)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    if not kernels.HAVE_COMPILED:
        print("compiled extension not built; nothing to compare")
        return

    from streamconf import _kernels as compiled

    rows = []
    print(f"{'kernel':<22} {'compiled':>12} {'pure numpy':>12} {'speedup':>9}")
    for name, call in cases():
        a = call(compiled)
        b = call(kernels.pure)
        if isinstance(a, np.ndarray) and a.dtype != np.uint64:
            assert np.allclose(a, b, atol=1e-3), f"{name}: implementations disagree"
        else:
            assert np.array_equal(a, b), f"{name}: RNG streams disagree"
        tc = timeit(lambda: call(compiled), args.runs)
        tp = timeit(lambda: call(kernels.pure), args.runs)
        print(f"{name:<22} {tc * 1e3:>10.2f}ms {tp * 1e3:>10.2f}ms {tp / tc:>8.1f}x")
        rows.append({"kernel": name, "compiled_s": tc, "pure_s": tp,
                     "speedup": tp / tc})
    if args.out:
        bn.write_csv(args.out, ["kernel", "compiled_s", "pure_s", "speedup"], rows)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
