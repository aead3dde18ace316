"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the median wall time of each kernel for both backends and the speedup.
"""
import argparse
import timeit

import numpy as np

from penn import defaults, kernels
from penn.signal import EmgPipeline, FilterSpec, butterworth_design


def _physics_inputs(batch, rng):
    P = defaults.wrist_muscles().as_array()
    g = defaults.wrist_geometry().mtu_coeffs
    j = defaults.wrist_joint().as_array()
    th1 = rng.uniform(-0.5, 0.5, batch)
    th2 = th1 - rng.normal(0, 0.005, batch)
    u = rng.uniform(0, 0.5, (batch, P.shape[0]))
    return th1, th2, u, P, g, j


def cases(rng):
    th1, th2, u, P, g, j = _physics_inputs(2000, rng)
    target = th1 + 0.001
    init = P.ravel()

    def step(mod, want):
        return lambda: mod.physics_step(th1, th2, u, P, -1.0, g, j, 0.01, 0.15, 10.0, want)

    def epoch(mod):
        def run():
            z = np.zeros(init.size + 1)
            m, v = np.zeros_like(z), np.zeros_like(z)
            mod.phase_one_epoch(np.arange(th1.size), th1, th2, u, target, z, init, -5.0, -0.01,
                                0.5, 1.5, m, v, 0, 1e-3, 0.9, 0.999, 1e-8, g, j, 0.01, 0.15, 10.0)
        return run

    sos = butterworth_design(FilterSpec("bandpass", EmgPipeline().band_order, (20.0, 450.0), 2000.0))
    x = rng.normal(size=20000)
    zi = np.zeros((sos.shape[0], 2))
    return {
        "physics_step (B=2000)": lambda mod: step(mod, False),
        "physics_step + jacobian (B=2000)": lambda mod: step(mod, True),
        "phase_one_epoch (2000 samples)": epoch,
        "sosfilt (20000 samples, 4 sections)": lambda mod: (lambda: mod.sosfilt(sos, x, zi)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    mods = {"compiled": kernels.backend_module("compiled"), "python": kernels.backend_module("python")}
    print(f"{'kernel':<38}{'compiled [ms]':>15}{'python [ms]':>15}{'speedup':>10}")
    for name, make in cases(rng).items():
        t = {}
        for label, mod in mods.items():
            fn = make(mod)
            n = 1 if label == "python" and "epoch" in name else 3
            t[label] = 1e3 * np.median(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
        print(f"{name:<38}{t['compiled']:>15.3f}{t['python']:>15.3f}{t['python'] / t['compiled']:>9.1f}x")


if __name__ == "__main__":
    main()
