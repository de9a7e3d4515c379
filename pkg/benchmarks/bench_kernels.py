"""Time the compiled and numpy pair-loss kernels on training-sized batches.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from cosca import kernels
from cosca.losses import PseudoLabels, pair_indices

SIZES = [(16, 16, 32), (64, 64, 64), (128, 128, 64), (256, 256, 128)]


def make_case(n_s, n_t, d, rng):
    fs = rng.normal(size=(n_s, d))
    ft = rng.normal(size=(n_t, d))
    ys = rng.integers(0, 2, size=n_s)
    pseudo = PseudoLabels(rng.integers(0, 2, size=n_t), np.ones(n_t))
    groups = pair_indices(n_s, n_t, pseudo, ys)
    return fs, ft, groups


def run_case(backend, fs, ft, groups):
    # the cross-domain and within-target groups, as the contrastive loss calls them
    (ia, ib, same_st), (ja, jb, same_tt) = groups
    kernels.pair_loss(fs, ft, ia, ib, same_st, 1.0, backend=backend)
    kernels.pair_loss(ft, ft, ja, jb, same_tt, 1.0, backend=backend)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args()
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)}")
    print(f"{'n_s x n_t x d':>16} {'pairs':>8} " + " ".join(f"{b + ' ms':>12}" for b in backends) + "  speedup")
    for n_s, n_t, d in SIZES:
        fs, ft, groups = make_case(n_s, n_t, d, rng)
        n_pairs = sum(len(g[0]) for g in groups)
        times = {}
        for b in backends:
            run_case(b, fs, ft, groups)
            best = min(timeit.repeat(lambda: run_case(b, fs, ft, groups), number=1, repeat=args.repeat))
            times[b] = best * 1e3
        speed = f"{times['python'] / times['compiled']:.1f}x" if "compiled" in times else "n/a"
        cols = " ".join(f"{times[b]:12.3f}" for b in backends)
        print(f"{f'{n_s}x{n_t}x{d}':>16} {n_pairs:8d} {cols}  {speed}")


if __name__ == "__main__":
    main()
