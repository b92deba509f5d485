"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 2000] [--dim 8] [--anchors 50] [--repeats 5]

Prints one line per kernel with the best-of-N time of each backend and the
speed-up, after checking that both backends agree.
"""

import argparse
import time

import numpy as np

from gaussflow import _pykernels

try:
    from gaussflow import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(B, D, K, rng):
    x = rng.standard_normal((B, D))
    mu = rng.standard_normal((D, K))
    rho = np.log(0.3 + rng.random((D, K)))
    gF = rng.standard_normal((B, D))
    c = np.ascontiguousarray(np.broadcast_to(rng.standard_normal((B, 1)), (B, D)))
    z = np.clip(rng.standard_normal((B, D)), -4, 4)
    V = rng.standard_normal((1, D, D))
    _, inputs = _pykernels.householder_forward(x, V, store=True)
    return {
        "kernel_forward": lambda k: k.kernel_forward(x, mu, rho, True),
        "kernel_backward": lambda k: k.kernel_backward(x, mu, rho, gF, c),
        "kernel_invert": lambda k: k.kernel_invert(z, mu, rho, 1e-10, 200, 60),
        "householder_forward": lambda k: k.householder_forward(x, V, store=True),
        "householder_backward": lambda k: k.householder_backward(inputs, V, gF),
    }


def _max_diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    diffs = [np.max(np.abs(np.asarray(u, float) - np.asarray(v, float)))
             for u, v in zip(a, b) if u is not None and np.size(u)]
    return max(diffs) if diffs else 0.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=2000)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--anchors", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"B={args.batch} D={args.dim} K={args.anchors} best of {args.repeats}")
    print(f"{'kernel':<22}{'python [ms]':>12}{'cython [ms]':>13}{'speed-up':>10}{'max |diff|':>12}")
    for name, call in cases(args.batch, args.dim, args.anchors, rng).items():
        diff = _max_diff(call(_pykernels), call(_ckernels))
        tp = best_time(lambda: call(_pykernels), args.repeats)
        tc = best_time(lambda: call(_ckernels), args.repeats)
        print(f"{name:<22}{tp * 1e3:>12.2f}{tc * 1e3:>13.2f}{tp / tc:>9.1f}x{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
