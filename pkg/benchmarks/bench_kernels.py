"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0] [--pipeline]

Each kernel is run once beforehand so compilation is not counted.  With
``--pipeline`` a short training run on the synthetic treebank is also timed
in two subprocesses, one with ``DTPARSE_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from dtparse import _kernels as K

HERE = Path(__file__).resolve().parent


def split_inputs(rng, scale):
    n, q = int(20_000 * scale), 60
    X = rng.random((n, q)) < 0.5
    y = rng.integers(0, 20, n)
    return X, y, rng.uniform(0.5, 2.0, n), 20


def merge_inputs(rng, scale):
    c = max(4, int(120 * scale))
    p = rng.random((c, c))
    return (p / p.sum(),)


def smooth_inputs(rng, scale):
    E, D, nodes = int(50_000 * scale), 12, 4000
    paths = rng.integers(0, nodes, (E, D))
    cut = rng.integers(1, D + 1, E)
    paths[np.arange(D)[None, :] >= cut[:, None]] = -1
    return paths, rng.random((E, D)), rng.random(nodes), rng.uniform(0.5, 2.0, E), 1e-3


def lattice_inputs(rng, scale):
    n = int(20_000 * scale)
    src = np.concatenate([np.arange(n - 1), rng.integers(0, n - 2, 2 * n)])
    dst = np.concatenate([np.arange(1, n), np.zeros(2 * n, dtype=int)])
    extra = slice(n - 1, None)
    dst[extra] = src[extra] + 1 + rng.integers(0, 5, 2 * n)
    dst = np.minimum(dst, n - 1)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    return n, src, dst, np.log(rng.uniform(0.05, 1.0, len(src))), n - 1


KERNELS = {
    "split_entropies": split_inputs,
    "merge_losses": merge_inputs,
    "smooth_pass": smooth_inputs,
    "lattice_fb": lattice_inputs,
}


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


PIPELINE = """
import sys, time
sys.path.insert(0, {tests!r})
from synthetic import treebank
from dtparse.training import TrainConfig, train_pipeline
t0 = time.perf_counter()
train_pipeline(treebank(60, 1), treebank(20, 2), TrainConfig(reestimate_iterations=3))
print(time.perf_counter() - t0)
"""


def time_pipeline(disable):
    env = dict(os.environ, DTPARSE_DISABLE_NUMBA="1" if disable else "0")
    code = PIPELINE.format(tests=str(HERE.parent / "tests"))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pipeline", action="store_true")
    args = ap.parse_args(argv)

    if not K.HAVE_NUMBA:
        print("numba is not importable; only the numpy path can be timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, make in KERNELS.items():
        inputs = make(rng, args.scale)
        t_np = best_of(getattr(K, f"{name}_numpy"), inputs, args.repeat)
        t_nb = best_of(getattr(K, f"{name}_numba"), inputs, args.repeat)
        print(f"{name:<18}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")

    if args.pipeline:
        # first numba run also pays for loading the on-disk compile cache
        t_np, t_nb = time_pipeline(True), time_pipeline(False)
        print(f"{'train pipeline':<18}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
