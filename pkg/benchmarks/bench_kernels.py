"""Time the circuit stage kernel and full integrations on each backend.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""
import argparse
import json
import time

import numpy as np

from semidae import kernels
from semidae.circuit import CircuitParams, SourceSpec, build_filter_dae, instability_family, power_family
from semidae.integrate import IntegrationOptions, integrate

CASES = {
    "bounded_damped_sine": (CircuitParams(500, 0.5, 2, 0.2, *power_family(),
                                          SourceSpec("damped_sinusoid", beta=100, alpha=1, omega=5)),
                            np.zeros(3), 50.0),
    "small_r": (CircuitParams(50, 1, 0.001, 1, *power_family((1, 1, 1, 0.01)), SourceSpec("sinusoid", beta=2)),
                np.zeros(3), 10.0),
    "escape_L10": (CircuitParams(10, 0.5, 2, 0.2, *instability_family(), SourceSpec("sinusoid", beta=2)),
                   np.array([2.45, -20.625125, 2.5]), 50.0),
}


def backends():
    out = ["numpy", "python"]
    if kernels.CompiledKernel is not None:
        out.append("compiled")
    return out


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_stage(repeat, calls=2000):
    p, _, _ = CASES["escape_L10"]
    rng = np.random.default_rng(0)
    pts = [(rng.uniform(0, 5), rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 1)) for _ in range(calls)]
    rows = {}
    for b in backends():
        dae = build_filter_dae(p, b)
        rows[b] = best_of(lambda: [dae.stage(t, z, u) for t, z, u in pts], repeat) / calls
    return rows


def bench_integrate(repeat):
    rows = {}
    for name, (p, x0, t_end) in CASES.items():
        opts = IntegrationOptions(t_end=t_end, rel_tol=1e-8, abs_tol=1e-10, h_init=1e-4)
        rows[name] = {}
        for b in backends():
            dae = build_filter_dae(p, b)
            rows[name][b] = best_of(lambda: integrate(dae, 0.0, x0, opts), repeat)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args()

    stage = bench_stage(args.repeat)
    print("stage call (microseconds)")
    for b, s in stage.items():
        print(f"  {b:9s} {s * 1e6:9.2f}   x{stage['numpy'] / s:6.1f} vs numpy")
    runs = bench_integrate(args.repeat)
    print("integration (seconds)")
    for name, row in runs.items():
        cells = "  ".join(f"{b}={s:7.3f}" for b, s in row.items())
        print(f"  {name:20s} {cells}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"stage_seconds": stage, "integrate_seconds": runs}, fh, indent=2)


if __name__ == "__main__":
    main()
