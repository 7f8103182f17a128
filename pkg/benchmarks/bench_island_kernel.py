"""Compare the numba and numpy island solvers.

Two workloads: the bare kernel on synthetic island stacks, and complete
EDML learning runs on the shipped networks with each backend.  Results of
the two backends are checked for agreement before timings are reported.

    python3 benchmarks/bench_island_kernel.py [--repeat 5] [--skip-learning]
"""

import argparse
import time

import numpy as np

from edml import kernels
from edml.bench import make_problem, ExperimentSpec
from edml.learn import LearnerConfig, run
from edml.model import load_network, random_parameterization
from edml.networks import network_path


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def island_stack(islands, examples, k, seed=0):
    rng = np.random.default_rng(seed)
    lam = rng.random((islands, examples, k)) * 3 + 0.01
    lam *= k / lam.sum(axis=-1, keepdims=True)
    theta0 = rng.dirichlet(np.ones(k), size=islands)
    psi = np.full((islands, k), 2.0)
    weights = rng.integers(1, 4, size=examples).astype(float)
    return theta0, lam, weights, psi, weights.sum() * 1.5


def kernel_rows(repeat):
    rows = []
    for islands, examples, k in [(4, 64, 2), (64, 256, 2), (64, 256, 4), (512, 1024, 3)]:
        args = island_stack(islands, examples, k)
        timings = {}
        results = {}
        for backend in ("numba", "numpy"):
            timings[backend], results[backend] = best_of(
                lambda: kernels.solve_islands(*args, 1e-10, 1000, backend=backend), repeat)
        diff = float(np.max(np.abs(results["numba"][0] - results["numpy"][0])))
        rows.append((f"islands={islands} examples={examples} K={k}", timings, diff))
    return rows


def learning_rows(repeat):
    rows = []
    spec = ExperimentSpec(("asia",), 2 ** 10, (0.25,), 1)
    for name, hiding in (("asia", 0.25), ("spect", 0.35)):
        net, truth = load_network(network_path(name))
        problem, data = make_problem(net, truth, name, hiding, 0, spec)
        init = random_parameterization(net, problem.seeds["init"])
        timings, finals = {}, {}
        for backend in ("numba", "numpy"):
            cfg = LearnerConfig(backend=backend, record_params=False, max_iterations=200)
            timings[backend], trace = best_of(lambda: run(net, data, cfg, initial=init), repeat)
            finals[backend] = trace.final_params
        diff = finals["numba"].max_abs_diff(finals["numpy"])
        rows.append((f"EDML on {name}, {int(hiding * 100)}% hidden", timings, diff))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-learning", action="store_true")
    args = ap.parse_args()
    if not kernels.JIT_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    kernels.warmup()
    rows = kernel_rows(args.repeat)
    if not args.skip_learning:
        rows += learning_rows(max(1, args.repeat // 2))
    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'numba [ms]':>11}  {'numpy [ms]':>11}  {'speedup':>8}  max |diff|")
    for label, t, diff in rows:
        print(f"{label:<{width}}  {t['numba'] * 1e3:11.2f}  {t['numpy'] * 1e3:11.2f}  "
              f"{t['numpy'] / t['numba']:7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
