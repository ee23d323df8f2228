"""Compare the compiled kernel, the numpy fallback and BLAS.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 5]

Times a raw matrix product at a few shapes and one desk-scale training step
under each backend, and checks that compiled and fallback agree bitwise.
"""
import argparse
import time

import numpy as np

from gentron.data import gen_synthetic_dataset
from gentron.model import GenTron, GenTronConfig
from gentron.numerics import kernels
from gentron.numerics.rng import Rng
from gentron.schedule import make_linear_schedule
from gentron.trainer import TrainConfig, train_t2i

SHAPES = [(16, 64, 64, 192), (16, 64, 64, 256), (1, 1024, 256, 64)]  # (batch, m, k, n)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def backends():
    return [b for b in kernels.BACKENDS if b != "compiled" or kernels.HAVE_COMPILED]


def bench_matmul(repeat):
    print(f"{'shape (b, m, k, n)':<24}" + "".join(f"{b:>12}" for b in backends()) + "   bitwise")
    for batch, m, k, n in SHAPES:
        r = Rng(0)
        a = r.fork("a").normal((batch, m, k)).astype(np.float32)
        b = r.fork("b").normal((k, n)).astype(np.float32)
        row, outs = f"{str((batch, m, k, n)):<24}", {}
        for name in backends():
            with kernels.use_backend(name):
                outs[name] = kernels.matmul(a, b)
                row += f"{best_of(lambda: kernels.matmul(a, b), repeat) * 1e3:>10.2f}ms"
        same = "compiled" in outs and outs["compiled"].tobytes() == outs["python"].tobytes()
        print(row + f"   {same if 'compiled' in outs else 'n/a'}")


def bench_train_step(steps):
    ds = gen_synthetic_dataset("shapes", 16, 0)
    sched = make_linear_schedule(50)
    cfg = GenTronConfig(depth=2, width=64, mlp_width=256)
    print(f"\ntraining step (batch 16, depth 2, width 64), mean of {steps} steps")
    traces = {}
    for name in backends():
        with kernels.use_backend(name):
            model = GenTron(cfg, seed=0)
            start = time.perf_counter()
            traces[name] = train_t2i(model, ds, sched, TrainConfig(lr=1e-3, steps=steps, seed=0)).losses
            per_step = (time.perf_counter() - start) / steps
        print(f"  {name:<10}{per_step * 1e3:>10.1f} ms/step")
    if "compiled" in traces:
        print(f"  compiled and python loss traces identical: {traces['compiled'] == traces['python']}")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--steps", type=int, default=5)
    args = p.parse_args()
    print(f"compiled extension available: {kernels.HAVE_COMPILED}\n")
    bench_matmul(args.repeat)
    bench_train_step(args.steps)


if __name__ == "__main__":
    main()
