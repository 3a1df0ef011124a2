"""Timing comparison of the compiled residual kernels vs the numpy fallback.

The hot loop of the whole toolkit is batched sum-of-squares evaluation
over many parameter vectors (ray fans, membership grids, Monte Carlo
trials).  Run with::

    python benchmarks/bench_kernels.py

Selecting the backend is an import-time decision, so the fallback is
measured in a subprocess with EXACTOED_FORCE_NUMPY=1.
"""

import json
import os
import subprocess
import sys
import timeit

import numpy as np

CASES = [
    # (kernel, n_points, n_samples)
    ("bod_sse", 1_000, 4),
    ("bod_sse", 100_000, 4),
    ("so2_sse", 1_000, 2),
    ("so2_sse", 100_000, 2),
    ("grid_volume", 0, 0),
]


def bench_current():
    import exactoed.kernels as kernels
    from exactoed.config import case_defaults, parse_config
    from exactoed.geometry import anchor_ranges_fast, bounding_orthotope, grid_volume

    rng = np.random.default_rng(0)
    results = {"backend": kernels.BACKEND, "timings_ms": {}}

    for kernel, n_points, n_samples in CASES:
        if kernel == "grid_volume":
            # end-to-end: membership grid of the case-1 region at its pitch
            config = parse_config(case_defaults("bod"))
            problem = config.problem("D", 4)
            crspec = problem.crspec(np.array([1.5, 1.5, 20.0, 20.0]))
            box = bounding_orthotope(anchor_ranges_fast(crspec, 256))
            call = lambda: grid_volume(crspec, box, 0.005, problem.settings.cell_budget)
            label = "grid_volume case1 eps=5e-3"
        elif kernel == "bod_sse":
            P = rng.uniform([0.3, 0.1], [10.0, 3.0], size=(n_points, 2))
            u = np.array([2.0, 2.0, 20.0, 20.0])[:n_samples]
            y = kernels.bod_predict(np.array([[2.5, 0.5]]), u)[0]
            w = np.full(n_samples, 100.0)
            call = lambda: kernels.bod_sse(P, u, y, w)
            label = f"bod_sse {n_points}x{n_samples}"
        else:
            P = rng.uniform([0.1, 0.2], [4.0, 8.0], size=(n_points, 2))
            u = np.array([1.7, 10.0])[:n_samples]
            y = kernels.so2_predict(np.array([[0.5, 1.0]]), u, -4.0)[0]
            w = np.full(n_samples, 1.0 / 0.16)
            call = lambda: kernels.so2_sse(P, u, y, w, -4.0)
            label = f"so2_sse {n_points}x{n_samples}"

        n_rep = max(3, int(2_000_000 / max(n_points, 20_000)))
        best = min(timeit.repeat(call, number=n_rep, repeat=3)) / n_rep
        results["timings_ms"][label] = best * 1e3
    return results


def main():
    if os.environ.get("_BENCH_CHILD"):
        print(json.dumps(bench_current()))
        return

    here = bench_current()
    env = dict(os.environ, _BENCH_CHILD="1", EXACTOED_FORCE_NUMPY="1")
    out = subprocess.run([sys.executable, os.path.abspath(__file__)], env=env,
                         capture_output=True, text=True, check=True)
    fallback = json.loads(out.stdout.strip().splitlines()[-1])

    width = max(len(k) for k in here["timings_ms"])
    print(f"{'case':<{width}}  {here['backend']:>10}  {fallback['backend']:>10}  speedup")
    for key, t_here in here["timings_ms"].items():
        t_fb = fallback["timings_ms"][key]
        print(f"{key:<{width}}  {t_here:>8.3f}ms  {t_fb:>8.3f}ms  {t_fb / t_here:>6.2f}x")
    if here["backend"] == fallback["backend"]:
        print("note: compiled backend unavailable; both runs used the numpy fallback")


if __name__ == "__main__":
    main()
