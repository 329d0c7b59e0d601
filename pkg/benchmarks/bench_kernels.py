"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--rows 128] [--steps 4096] [--repeat 3]

Prints one line per kernel with the best wall time of each backend and the
speedup. Inputs are shaped like one Monte Carlo work chunk.
"""

import argparse
import time

import numpy as np

from driftmle.expr import compile_program, parse_expr
from driftmle.kernels import get_backend


def best(fn, repeat):
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return min(t)


def cases(rows, steps):
    rng = np.random.default_rng(0)
    u = rng.random(2 * rows * steps)
    z = rng.standard_normal((rows, steps))
    dt = np.full(steps, 1.0 / steps)
    phi = np.exp(-dt)
    scale = np.sqrt(dt)
    b = np.ones(steps)
    sig = np.ones(steps)
    db = z * np.sqrt(dt)
    ops, consts = compile_program(parse_expr("0.5*sin(x)", "x"))
    xs = rng.normal(size=rows * steps)
    w1, w2 = np.ones(steps), dt.copy()

    def run(k):
        x = np.empty((rows, steps + 1))
        k.linear_recursion(phi, scale, z, x)
        return x

    return {
        "box_muller": lambda k: k.box_muller(u, np.empty(rows * steps)),
        "linear_recursion": run,
        "eval_program": lambda k: k.eval_program(ops, consts, xs),
        "em_perturbed": lambda k: k.em_perturbed(1.0, b, sig, dt, db, ops, consts,
                                                 np.empty((rows, steps + 1)), 1e12),
        "mle_sums": lambda k: k.mle_sums(run(k), run(k), w1, w2, np.empty((rows, steps + 1)),
                                         np.empty((rows, steps + 1))),
        "zeta_stats": lambda k: k.zeta_stats(z, 1.0 / steps),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=128)
    p.add_argument("--steps", type=int, default=4096)
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args(argv)
    cy, py = get_backend("cython"), get_backend("python")
    print(f"rows={a.rows} steps={a.steps} (best of {a.repeat})")
    print(f"{'kernel':18s} {'cython [s]':>11s} {'python [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(a.rows, a.steps).items():
        tc = best(lambda: fn(cy), a.repeat)
        tp = best(lambda: fn(py), a.repeat)
        print(f"{name:18s} {tc:11.4f} {tp:11.4f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
