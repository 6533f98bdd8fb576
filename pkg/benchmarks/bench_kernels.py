"""Compare the compiled and numpy kernel backends.

Times the batched Maurer-Cartan frame (the hot kernel) and one full Heun step
of the bundle process for each shipped instance, and checks that both
backends return the same numbers.

    python benchmarks/bench_kernels.py [--points 20000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from kkreduce import kernels
from kkreduce.config import load_instance
from kkreduce.coset_geometry import frame_batch
from kkreduce.sde import SimulationParams, step_stratonovich


def sample_ball(rng, n, dim, radius):
    d = rng.normal(size=(n, dim))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * (radius * rng.random(n) ** (1.0 / dim))[:, None]


def best_time(func, repeat):
    return min(timeit.repeat(func, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--points", type=int, default=20000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    initial = kernels.backend()
    print(f"backends: {', '.join(backends)} (default: {initial})")
    rng = np.random.default_rng(0)
    params = SimulationParams()
    header = f"{'instance':<12}{'kernel':<14}" + "".join(f"{b + ' [ms]':>16}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}{'max |diff|':>14}"
    print(header)
    for name in ("coset_only", "su2_flat", "flat_const", "hopf"):
        inst = load_instance(name)
        model = inst.model
        chart = model.chart
        Y = sample_ball(rng, args.points, chart.coset_dim, chart.radius_cutoff)
        X = rng.uniform(-1, 1, size=(args.points, model.base_dim))
        dWb = rng.normal(size=(args.points, model.base_dim)) * 0.03
        dWf = rng.normal(size=(args.points, model.coset_dim)) * 0.03
        cases = {
            "frame_batch": lambda: frame_batch(chart, Y),
            "heun_step": lambda: step_stratonovich(model, params, X, Y, dWb, dWf, 1e-3),
        }
        for label, func in cases.items():
            times, results = {}, {}
            for b in backends:
                kernels.use_backend(b)
                results[b] = func()
                times[b] = best_time(func, args.repeat)
            row = f"{name:<12}{label:<14}" + "".join(f"{1e3 * times[b]:>16.2f}" for b in backends)
            if len(backends) > 1:
                diff = max(float(np.nanmax(np.abs(a - c), initial=0.0))
                           for a, c in zip(results["python"], results["cython"]))
                row += f"{times['python'] / times['cython']:>10.2f}{diff:>14.2e}"
            print(row)
    kernels.use_backend(initial)


if __name__ == "__main__":
    main()
