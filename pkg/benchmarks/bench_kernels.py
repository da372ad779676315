"""Compare the numba kernels with their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--no-step]

Kernel timings run in-process (both implementations are importable when numba
is installed). The end-to-end training step is timed in two subprocesses, one
with ``WAMO_DISABLE_NUMBA=1``, so the dispatch layer is exercised as a user
would see it.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from wamo import kernels
from wamo._accel import HAS_NUMBA

STEP_SNIPPET = """
import time, numpy as np
from wamo.data import generate_synthetic_corpus, split_corpus
from wamo.model import init_params
from wamo.train import TrainConfig, loss_and_grads, make_batch, normalized_motions
corpus = split_corpus(generate_synthetic_corpus(0, 40, 8, 64, 8))["train"]
cfg = TrainConfig(latent_dim=64)
mcfg = cfg.model_config(64, 8)
params = init_params(mcfg, np.random.default_rng(0))
motions = normalized_motions(corpus, np.float32)
batch = make_batch(motions, corpus.captions, list(range(32)), 16, 0.25, np.random.default_rng(0))
loss_and_grads(params, mcfg, cfg.loss_config(), batch)
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    loss_and_grads(params, mcfg, cfg.loss_config(), batch)
    best = min(best, time.perf_counter() - t)
print(best)
"""


def _best(fn, repeat):
    fn()  # warm-up (and JIT compile)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(rng):
    x = rng.standard_normal((32, 64, 24)).astype(np.float32)
    f = rng.standard_normal(2).astype(np.float32)
    h = rng.standard_normal((32, 64, 256)).astype(np.float32)
    _, th = kernels.gelu_forward(h.copy())
    g = rng.standard_normal(h.shape).astype(np.float32)
    u = kernels.circular_unfold_numpy(x, 9)
    return {
        "step_filter (B=32,T=64,C=24,step=4)": (
            lambda: kernels.step_filter_numpy(x, f, 4), lambda: kernels._step_filter_nb(x, f, 4)),
        "step_filter_grad": (
            lambda: kernels.step_filter_grad_numpy(x, x, 4, 2), lambda: kernels._step_filter_grad_nb(x, x, 4, 2)),
        "circular_unfold (k=9)": (
            lambda: kernels.circular_unfold_numpy(x, 9), lambda: kernels._circular_unfold_nb(x, 9)),
        "circular_fold (k=9)": (
            lambda: kernels.circular_fold_numpy(u), lambda: kernels._circular_fold_nb(u)),
        "gelu_backward (32x64x256)": (
            lambda: kernels.gelu_backward_numpy(g, h, th), lambda: kernels._gelu_backward_nb(g, h, th)),
    }


def step_time(disable, repeat):
    env = dict(os.environ, WAMO_DISABLE_NUMBA="1" if disable else "0", WAMO_THREADS="1")
    code = "from wamo._accel import set_threads; set_threads(1)\n" + STEP_SNIPPET.format(repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-step", action="store_true", help="skip the end-to-end training step timing")
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        sys.exit("numba is unavailable (or disabled); nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (py, nb) in kernel_cases(rng).items():
        a, b = _best(py, args.repeat) * 1e3, _best(nb, args.repeat) * 1e3
        print(f"{name:40s} {a:10.3f} {b:10.3f} {a / b:8.2f}x")
    if not args.no_step:
        reps = max(3, args.repeat // 5)
        a, b = step_time(True, reps), step_time(False, reps)
        print(f"{'train step fwd+bwd (B=32,T=64,D=64)':40s} {a * 1e3:10.1f} {b * 1e3:10.1f} {a / b:8.2f}x")


if __name__ == "__main__":
    main()
