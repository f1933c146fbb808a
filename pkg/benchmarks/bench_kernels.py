"""Benchmark the box kernels: numba-compiled loops vs the vectorised numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--sizes 32,1024,65536] [--repeat 20]``.
Both backends are imported side by side regardless of ``OBJVLP_DISABLE_NUMBA``;
the outputs are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from objvlp import _backend, _kernels


def random_boxes(rng, n):
    centers = rng.uniform(0.0, 1.0, size=(n, 3))
    sizes = rng.uniform(0.05, 0.4, size=(n, 3))
    return np.concatenate([centers, sizes], axis=1)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="32,1024,65536")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not _backend.HAS_NUMBA:
        print("numba is not installed; only the numpy backend is available")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<10}{'n':>8}{'numpy (us)':>14}{'numba (us)':>14}{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        boxes = random_boxes(rng, n)
        gts = random_boxes(rng, n)
        # warm up / compile, and check that both paths agree
        ref = _kernels.diou_many_numpy(boxes, gts)
        got = _kernels.diou_many_numba(boxes, gts)
        for a, b in zip(ref, got):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(_kernels.iou_many_numpy(boxes, gts), _kernels.iou_many_numba(boxes, gts),
                                   rtol=1e-12, atol=1e-12)
        for name, f_np, f_nb in (
            ("iou", _kernels.iou_many_numpy, _kernels.iou_many_numba),
            ("diou", _kernels.diou_many_numpy, _kernels.diou_many_numba),
        ):
            t_np = best_time(lambda: f_np(boxes, gts), args.repeat)
            t_nb = best_time(lambda: f_nb(boxes, gts), args.repeat)
            print(f"{name:<10}{n:>8}{1e6 * t_np:>14.1f}{1e6 * t_nb:>14.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
