"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 512] [--repeats 20]
"""

import argparse
import timeit

import numpy as np

from basis_rl.env import stream
from basis_rl.kernels import numba_impl, numpy_impl
from basis_rl.offline_values import BetaGrid


def cases(batch):
    rng = stream(0)
    p = rng.uniform(0.0, 1.0, batch)
    p[rng.random(batch) < 0.1] = 1.0
    r = (rng.random(batch) < p).astype(float)
    grid = BetaGrid.default().values
    v = numpy_impl.soft_values(p, 0.5)
    o = numpy_impl.soft_odds(p, 0.5)
    act = (v > 1e-6) & (v < 1 - 1e-6)
    logits = rng.normal(size=(4 * batch, 4))
    rows = np.sort(rng.choice(4 * batch, batch, replace=False))
    actions = rng.integers(0, 4, (batch, 1))
    adv = rng.normal(size=(batch, 1))
    return {
        "baseline_grid": lambda impl: impl.baseline_grid(p, r, grid, 1e-6, 0),
        "refined_baselines": lambda impl: impl.refined_baselines(v, o, r, act, 0),
        "policy_update": lambda impl: impl.policy_update(logits.copy(), rows, actions, adv, 0.1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    print(f"batch={args.batch}  (best of 5 x {args.repeats} calls)")
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases(args.batch).items():
        fn(numba_impl)  # compile outside the timing
        times = {}
        for label, impl in (("numpy", numpy_impl), ("numba", numba_impl)):
            best = min(timeit.repeat(lambda: fn(impl), number=args.repeats, repeat=5))
            times[label] = 1e3 * best / args.repeats
        print(f"{name:<20}{times['numpy']:>12.3f}{times['numba']:>12.3f}{times['numpy'] / times['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
