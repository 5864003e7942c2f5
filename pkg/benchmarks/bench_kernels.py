"""Throughput comparison of the scenario-sweep kernel backends.

Runs identical scenario batches through the compiled extension and the
pure-NumPy fallback and reports scenarios per second plus the agreement
between the two, first on a small synthetic grid and then on the shipped
118-bus case. Usage:

    python3 benchmarks/bench_kernels.py [--n 400] [--skip-large]
"""

import argparse
import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "tests"))

from gridscreen import RunConfig, load_grid
from gridscreen._kernels import available_backends
from gridscreen.scenarios import nominal_distribution, sampling_stream
from gridscreen.sweep import ScenarioBatchEvaluator
from toys import triangle

ROOT = pathlib.Path(__file__).resolve().parent.parent


def bench(grid, label, cfg, n, backends):
    rng = sampling_stream(cfg.master_seed, 1)
    dist = nominal_distribution(len(grid.branches), rate=cfg.scenario_rate)
    branches, taus = dist.sample_arrays(rng, n)
    print(f"\n{label}: {len(grid.buses)} buses, {len(grid.branches)} branches, "
          f"{n} scenarios, horizon {cfg.horizon}s at dt {cfg.dt}")
    results = {}
    for backend in backends:
        ev = ScenarioBatchEvaluator.from_config(grid, cfg, kernel=backend)
        ev.evaluate(branches[:8], taus[:8])  # warm the operator cache
        t0 = time.perf_counter()
        res = ev.evaluate(branches, taus)
        elapsed = time.perf_counter() - t0
        results[backend] = (res, elapsed)
        print(f"  {backend:>8}: {elapsed:7.3f}s  {n / elapsed:8.1f} scenarios/s")
    if len(results) == 2:
        (res_a, ta), (res_b, tb) = results["python"], results["compiled"]
        same = np.array_equal(res_a.line_seconds, res_b.line_seconds)
        gap = np.nanmax(np.abs(res_a.max_ratio - res_b.max_ratio), initial=0.0)
        print(f"  agreement: overload seconds identical={same}, "
              f"max ratio gap={gap:.2e}, speedup x{ta / tb:.2f}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=400,
                        help="scenarios per measurement (default 400)")
    parser.add_argument("--skip-large", action="store_true",
                        help="skip the 118-bus case")
    args = parser.parse_args(argv)

    backends = available_backends()
    print("available backends:", ", ".join(backends))
    if "compiled" not in backends:
        print("note: compiled extension not built; timing the fallback only")

    bench(
        triangle(limits=(0.8, 0.5, 0.55)),
        "triangle",
        RunConfig(dt=0.01, horizon=8.0, master_seed=11),
        max(args.n * 10, 1000),
        backends,
    )
    if not args.skip_large:
        grid = load_grid(ROOT / "data" / "ieee118.m")
        bench(
            grid,
            "ieee118",
            RunConfig(master_seed=11),
            args.n,
            backends,
        )


if __name__ == "__main__":
    main()
