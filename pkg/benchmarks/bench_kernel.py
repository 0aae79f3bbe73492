"""Timing comparison of the compiled episode kernel vs the pure-Python
fallback on the standard 10 s / 5 kHz episode workload.

Usage: python benchmarks/bench_kernel.py [--repeats N]
"""

import argparse
import time

import numpy as np

from sscirl import _kernel_py, plant

try:
    from sscirl import _kernel
except ImportError:
    _kernel = None


def build_workload(seed=0):
    scn = plant.PlantScenario()
    rng = np.random.default_rng(seed)
    n_total = round(scn.horizon / scn.sim_dt)
    n_steps = n_total - 1
    gains = [scn.kp_stable, scn.kp_unstable, 2.0]
    steps = [n_steps // 3, n_steps // 3, n_steps - 2 * (n_steps // 3)]
    mats = np.array([plant._discretize(scn.omega,
                                       plant.damping_of_gain(scn, kp),
                                       scn.sim_dt) for kp in gains])
    w = rng.normal(0.0, scn.noise_std / np.sqrt(scn.sim_dt), n_steps)
    vnoise = rng.normal(0.0, scn.noise_std, n_total)
    out = np.empty(n_total)
    return (scn.disturbance_amp, 0.0, mats, np.array(steps), w, vnoise,
            scn.p_nom, scn.diverge_threshold, out)


def bench(kernel, args, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = kernel.simulate_segments(*args)
        best = min(best, time.perf_counter() - t0)
    return best, args[-1].copy()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    opts = parser.parse_args()

    args = build_workload()
    n = len(args[-1])
    t_py, out_py = bench(_kernel_py, args, opts.repeats)
    print(f"pure python : {t_py * 1e3:8.2f} ms  ({n / t_py / 1e6:6.2f} Msteps/s)")
    if _kernel is None:
        print("compiled    : not built (pip install -e . to build the extension)")
        return
    t_c, out_c = bench(_kernel, args, opts.repeats)
    print(f"compiled    : {t_c * 1e3:8.2f} ms  ({n / t_c / 1e6:6.2f} Msteps/s)")
    print(f"speedup     : {t_py / t_c:8.1f}x")
    print(f"bit-identical outputs: {np.array_equal(out_py, out_c)}")


if __name__ == "__main__":
    main()
