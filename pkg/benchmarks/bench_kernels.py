"""Compare the compiled kernels with the numpy reference on desk-profile shapes.

    python3 benchmarks/bench_kernels.py [--repeat N] [--batch M]

Each kernel is checked for agreement first, then timed with timeit; the
last column is the speedup of the compiled kernel.
"""
import argparse
import sys
import timeit

import numpy as np

from adtreach.numgrad import _pykernels

try:
    from adtreach.numgrad import _ckernels
except ImportError:
    _ckernels = None


def cases(batch, rng):
    # (label, input shape) for each conv/pool stage of the 64px desk profile
    for h, c in ((64, 3), (32, 8), (16, 16), (8, 16)):
        x = rng.normal(size=(batch, h, h, c))
        cols = rng.normal(size=(batch * h * h, 9 * c))
        g = rng.normal(size=(batch, h // 2, h // 2, c))
        _, arg = _pykernels.maxpool2x2_fwd(x)
        yield f"{h}x{h}x{c}", {
            "im2col3x3": (x,),
            "col2im3x3": (cols, batch, h, h, c),
            "maxpool2x2_fwd": (x,),
            "maxpool2x2_bwd": (g, arg),
        }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'shape':<12}{'python ms':>11}{'cython ms':>11}{'speedup':>9}")
    for label, calls in cases(args.batch, rng):
        for name, a in calls.items():
            py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
            if not _same(py(*a), cy(*a)):
                print(f"{name} {label}: backends disagree", file=sys.stderr)
                return 2
            t_py = min(timeit.repeat(lambda: py(*a), number=1, repeat=args.repeat)) * 1e3
            t_cy = min(timeit.repeat(lambda: cy(*a), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<16}{label:<12}{t_py:>11.2f}{t_cy:>11.2f}{t_py / t_cy:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
