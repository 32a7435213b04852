"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 1000000]
"""
import argparse
import timeit

import numpy as np

from impairsim import kernels
from impairsim._accel import HAVE_NUMBA
from impairsim.metrics import gaussian_taps


def cases(n, rng):
    u = rng.random(n)
    send = np.sort(rng.integers(0, n * 1000, n)).astype(np.int64)
    ser = rng.integers(100, 3000, n).astype(np.int64)
    img = rng.random((480, 640))
    taps = gaussian_taps()
    return {
        "ge_chain": (kernels.ge_chain_numpy, kernels.ge_chain_numba, (u, 0.0034, 0.167, False)),
        "rate_queue": (kernels.rate_queue_numpy, kernels.rate_queue_numba, (send, ser // 4, 1000)),
        "rate_queue_overflow": (kernels.rate_queue_numpy, kernels.rate_queue_numba, (send, ser, 16)),
        "filter_valid_640x480": (kernels.filter_valid_numpy, kernels.filter_valid_numba, (img, taps)),
    }


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000, help="stream length for the 1-D kernels")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<22}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}  agree")
    for name, (py, jit, call_args) in cases(args.n, rng).items():
        jit(*call_args)  # compile outside the timed region
        a, b = py(*call_args), jit(*call_args)
        agree = all(np.array_equal(x, y) or np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(
            a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)))
        t_py = best(py, call_args, args.repeat) * 1e3
        t_jit = best(jit, call_args, args.repeat) * 1e3
        print(f"{name:<22}{t_py:>11.2f}{t_jit:>11.2f}{t_py / t_jit:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
