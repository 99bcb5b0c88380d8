"""Time the compiled depthwise 3x3 kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow the multi-stage model: batch 8, channels doubling as the grid halves.
"""

import argparse
import timeit

import numpy as np

from auvit.tensor import _pykernels

try:
    from auvit.tensor import _ckernels
except ImportError:
    _ckernels = None

SHAPES = [(8, 64, 28, 28), (8, 128, 14, 14), (8, 256, 7, 7)]


def bench(impl, x, k, g, repeat):
    fwd = min(timeit.repeat(lambda: impl.dwconv3x3_forward(x, k), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: impl.dwconv3x3_backward(g, x, k), number=1, repeat=repeat))
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'shape':>18} {'numpy fwd':>10} {'numpy bwd':>10} {'cython fwd':>11} {'cython bwd':>11} {'speedup':>8}")
    for shape in SHAPES:
        x = rng.standard_normal(shape)
        k = rng.standard_normal((shape[1], 3, 3))
        g = rng.standard_normal(shape)
        py = bench(_pykernels, x, k, g, args.repeat)
        row = f"{str(shape):>18} {py[0] * 1e3:9.2f}ms {py[1] * 1e3:9.2f}ms"
        if _ckernels is not None:
            cy = bench(_ckernels, x, k, g, args.repeat)
            # agreement check so a fast-but-wrong kernel cannot look good
            assert np.allclose(_ckernels.dwconv3x3_forward(x, k), _pykernels.dwconv3x3_forward(x, k), atol=1e-10)
            row += f" {cy[0] * 1e3:10.2f}ms {cy[1] * 1e3:10.2f}ms {sum(py) / sum(cy):7.2f}x"
        print(row)


if __name__ == "__main__":
    main()
