"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 128]

Shapes follow one training batch of the default model. Prints the median
time per call for each backend and the speedup.
"""
import argparse
import statistics
import time

import numpy as np

from abcnn import _kernels_py as py_backend

try:
    from abcnn import _kernels as cy_backend
except ImportError:
    cy_backend = None


def median_time(fn, repeat):
    fn()  # warm up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(batch, rng):
    x1 = rng.standard_normal((batch, 2, 240, 1)).astype(np.float32)
    k1 = rng.standard_normal((2, 2, 1, 4)).astype(np.float32)
    x2 = rng.standard_normal((batch, 2, 120, 4)).astype(np.float32)
    k2 = rng.standard_normal((2, 2, 4, 8)).astype(np.float32)
    gy2 = rng.standard_normal((batch, 2, 120, 8)).astype(np.float32)
    pool_in = rng.standard_normal((batch, 2, 240, 4)).astype(np.float32)
    samples = rng.integers(-2048, 2048, size=650_000 * 2).astype(np.int16)  # one 30-min record
    packed = py_backend.encode_212(samples)
    n = 3_939_641  # default parameter count
    p, g = rng.standard_normal(n).astype(np.float32), rng.standard_normal(n).astype(np.float32)
    m, v = np.zeros_like(p), np.zeros_like(p)

    def pool_pair(K):
        y, idx = K.maxpool_forward(pool_in, 1, 2, 1, 2)
        return K.maxpool_backward(y, idx, 2, 240)

    return {
        "conv1 forward": lambda K: K.conv2d_forward(x1, k1, 1, 1, 0, 0, 2, 240),
        "conv2 forward": lambda K: K.conv2d_forward(x2, k2, 1, 1, 0, 0, 2, 120),
        "conv2 backward": lambda K: K.conv2d_backward(x2, k2, gy2, 1, 1, 0, 0),
        "maxpool fwd+bwd": pool_pair,
        "decode 212": lambda K: K.decode_212(packed, samples.size),
        "encode 212": lambda K: K.encode_212(samples),
        "adam update": lambda K: K.adam_update(p, g, m, v, 5e-4, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=128)
    args = ap.parse_args()
    if cy_backend is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<18}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(args.batch, np.random.default_rng(0)).items():
        t_py = median_time(lambda: fn(py_backend), args.repeat)
        if cy_backend is None:
            print(f"{name:<18}{t_py * 1e3:>10.3f}{'-':>11}{'-':>9}")
            continue
        t_cy = median_time(lambda: fn(cy_backend), args.repeat)
        print(f"{name:<18}{t_py * 1e3:>10.3f}{t_cy * 1e3:>11.3f}{t_py / t_cy:>8.2f}x")


if __name__ == "__main__":
    main()
