"""Time the numba and numpy kernel backends on training-sized workloads.

    python benchmarks/bench_kernels.py [--repeat 20] [--grid 16] [--batch 32]

Prints one line per (workload, backend) with the median wall time per call
and the numpy/numba ratio.
"""
import argparse
import statistics
import time

import numpy as np

from textvin import kernels, suite
from textvin.corpus import generate_synthetic_corpus
from textvin.engine import GameEnv, Transition
from textvin.learner import loss_and_grads, register_envs
from textvin.qnet import ModelConfig, QNetwork
from textvin.repgen import choose_descriptions, observe


def timed(fn, repeat):
    fn()  # warm-up (also triggers numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def td_batch(grid, batch, seed=0):
    spec = suite.fe_instances(1, seed, rows=grid, cols=grid)[0]
    corp = generate_synthetic_corpus([spec])
    model = QNetwork.create(ModelConfig(rows=grid, cols=grid, seed=seed))
    register_envs(model, [(spec, corp)])
    env = GameEnv(spec, seed)
    rng = np.random.default_rng(seed)
    descs = choose_descriptions(spec.symbols(), corp, seed)
    state = env.reset()
    out = []
    while len(out) < batch:
        a = int(rng.integers(5))
        nxt, r, done = env.step(a)
        out.append(Transition(observe(state, descs), a, r, observe(nxt, descs), done))
        state = env.reset() if done else nxt
    return model, out


def workloads(grid, batch):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, 60, grid, grid))
    w3 = rng.normal(size=(1, 60, 3, 3))
    w4 = rng.normal(size=(16, 60, 4, 4))
    r = rng.normal(size=(batch, grid, grid))
    t_w = rng.normal(size=(5, 2, 3, 3))
    t_b = np.zeros(5)
    _, v_hist, am_hist = kernels.vin_sweeps(r, t_w, t_b, 3)
    gq = rng.normal(size=(batch, 5, grid, grid))
    y4 = kernels.conv2d_forward(x, w4, np.zeros(16), 3, 0)
    model, trans = td_batch(grid, batch)
    targets = rng.normal(size=batch)
    return {
        "conv3x3 s1 fwd": lambda: kernels.conv2d_forward(x, w3, np.zeros(1), 1, 1),
        "conv4x4 s3 fwd": lambda: kernels.conv2d_forward(x, w4, np.zeros(16), 3, 0),
        "conv4x4 s3 bwd": lambda: kernels.conv2d_backward(x, w4, y4, 3, 0),
        "vin k=3 fwd": lambda: kernels.vin_sweeps(r, t_w, t_b, 3),
        "vin k=3 bwd": lambda: kernels.vin_sweeps_backward(r, t_w, v_hist, am_hist, gq),
        "td loss+grad": lambda: loss_and_grads(trans, targets, model),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--grid", type=int, default=16)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    prev = kernels.get_backend()
    results = {}
    try:
        for be in backends:
            kernels.set_backend(be)
            for name, fn in workloads(args.grid, args.batch).items():
                results[name, be] = timed(fn, args.repeat)
    finally:
        kernels.set_backend(prev)
    print(f"grid {args.grid}x{args.grid}, batch {args.batch}, median of {args.repeat}")
    print(f"{'workload':<18}{'numpy ms':>10}{'numba ms':>10}{'ratio':>8}")
    for name in dict.fromkeys(n for n, _ in results):
        t_np = results[name, "numpy"] * 1e3
        t_nb = results.get((name, "numba"), float("nan")) * 1e3
        print(f"{name:<18}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.2f}")


if __name__ == "__main__":
    main()
