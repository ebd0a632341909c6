"""Compare the compiled and pure-Python integration kernels.

    python benchmarks/bench_kernels.py [--paths 2000] [--steps 200] [--n 3 4 5]

Reports seconds per run and per path-step for each backend, plus the largest
difference between their outputs.
"""
import argparse
import time

import numpy as np

from chaplygin import BallModel, kernels, random_inertia
from chaplygin.sde import _scaled_fields


def run(backend, args):
    return kernels.integrate_nh(*args, True, 1, 100, args[1].shape[1], backend=backend)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--n", type=int, nargs="+", default=[3, 4, 5])
    ap.add_argument("--repeat", type=int, default=3)
    opts = ap.parse_args()

    backends = kernels.available()
    print(f"backends: {', '.join(backends)} (default: {kernels.active()})")
    print(f"{'n':>3} {'backend':>9} {'best s':>9} {'us/path-step':>13} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n in opts.n:
        model = BallModel(n, random_inertia(n, rng))
        h = 1e-3
        gv, gw0 = _scaled_fields(model)
        s0 = np.broadcast_to(np.eye(n), (opts.paths, n, n))
        incr = np.sqrt(h) * rng.standard_normal((opts.paths, opts.steps, model.m + n - 1))
        args = (s0, incr, model.gram, gv, gw0, model.basis.pairs, h)
        timings, outputs = {}, {}
        for b in backends:
            best = np.inf
            for _ in range(opts.repeat):
                t0 = time.perf_counter()
                outputs[b] = run(b, args)
                best = min(best, time.perf_counter() - t0)
            timings[b] = best
        for b in backends:
            per = 1e6 * timings[b] / (opts.paths * opts.steps)
            print(f"{n:>3} {b:>9} {timings[b]:>9.3f} {per:>13.3f} {timings['python'] / timings[b]:>7.2f}x")
        if len(outputs) == 2:
            diff = np.abs(outputs["compiled"][0] - outputs["python"][0]).max()
            print(f"    max |compiled - python| terminal difference: {diff:.2e}")


if __name__ == "__main__":
    main()
