"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--particles 200] [--repeat 20]

Shapes match one full-information filter step: every particle is glimpsed
at all nine fixations.
"""

import argparse
import time

import numpy as np

from gazetrack import kernels
from gazetrack._accel import NUMBA_AVAILABLE
from gazetrack.appearance import FoveaGeometry


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--particles", type=int, default=200)
    ap.add_argument("--actions", type=int, default=9)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    m = args.particles * args.actions
    frame = rng.random((100, 100))
    cx, cy = rng.uniform(20, 80, m), rng.uniform(20, 80, m)
    scale = np.exp(rng.normal(0, 0.05, m))
    theta = rng.normal(0, 0.05, m)
    dx, dy, starts = FoveaGeometry().sample_table
    feats = rng.random((m, 64))
    tpl = rng.random(64)
    w = rng.random(args.particles)
    w /= w.sum()

    cases = {
        "foveate": lambda nb: kernels.foveate_points(frame, cx, cy, scale, theta, dx, dy, starts, use_numba=nb),
        "bhattacharyya": lambda nb: kernels.bhattacharyya_likelihood(feats, tpl, 0.1, use_numba=nb),
        "systematic": lambda nb: kernels.systematic_indices(w, 0.37, use_numba=nb),
    }
    print(f"{'kernel':15s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        np.testing.assert_allclose(fn(True), fn(False), rtol=1e-12)
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        print(f"{name:15s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
