"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the advection gather, the exponential-convolution recurrence, a full
solver step, and the trajectory sampler on representative problem sizes.
Force one backend for a whole process with PIDECTRL_BACKEND=numpy|numba;
this script imports both implementations directly so a single run prints
the comparison table.

    python benchmarks/bench_kernels.py [--repeat 5] [--ssa-cells 20000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pidectrl.kernels import numba_impl, numpy_impl
from pidectrl.grid import DomainSpec, gaussian_density
from pidectrl.network import GeneParams, GrnParams
from pidectrl.solver import FixedInputPropagator, StepConfig


def timeit(fn, repeat: int) -> float:
    fn()  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeat: int, ssa_cells: int) -> list[tuple[str, float, float]]:
    rows = []
    cases = {
        "resample 300^2": (np.random.default_rng(0).random((300, 300)),
                           np.array([1.005, 1.005])),
        "resample 64^3": (np.random.default_rng(0).random((64, 64, 64)),
                          np.array([1.005, 1.005, 1.005])),
    }
    for name, (v, s) in cases.items():
        t_nb = timeit(lambda: numba_impl.resample_exp_stretch(v, s), repeat)
        t_np = timeit(lambda: numpy_impl.resample_exp_stretch(v, s), repeat)
        ref = numpy_impl.resample_exp_stretch(v, s)
        out = numba_impl.resample_exp_stretch(v, s)
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-14)
        rows.append((name, t_nb, t_np))

    g2 = np.random.default_rng(1).random((300, 300))
    g3 = np.random.default_rng(1).random((64 * 64, 64))
    for name, g in (("exp_conv 300x300", g2), ("exp_conv 4096x64", g3)):
        t_nb = timeit(lambda: numba_impl.exp_conv_last(g, 0.9, 0.05, 0.05), repeat)
        t_np = timeit(lambda: numpy_impl.exp_conv_last(g, 0.9, 0.05, 0.05), repeat)
        assert np.allclose(numba_impl.exp_conv_last(g, 0.9, 0.05, 0.05),
                           numpy_impl.exp_conv_last(g, 0.9, 0.05, 0.05),
                           rtol=1e-12, atol=1e-14)
        rows.append((name, t_nb, t_np))

    # full solver step, both backends via propagators built on each kernel set
    dom = DomainSpec((300.0, 300.0), (300, 300))
    mk = lambda reg: GeneParams(k_m=10.0, k_x=100.0, gamma_m=10.0, gamma_x=1.0,
                                epsilon=0.1, regulator=reg, hill_k=40.0, hill_h=4.0,
                                theta=0.1, mu=2.0)
    params = GrnParams((mk(1), mk(0)))
    prop = FixedInputPropagator(dom, params, StepConfig(dt=0.005), [0.0, 0.0])
    p = gaussian_density(dom, (90.0, 90.0), (20.0, 20.0)).values

    import pidectrl.kernels as K

    def step_with(impl):
        saved = (K.resample_exp_stretch, K.exp_conv_last)
        K.resample_exp_stretch, K.exp_conv_last = impl.resample_exp_stretch, impl.exp_conv_last
        try:
            prop.step_values(p)
        finally:
            K.resample_exp_stretch, K.exp_conv_last = saved

    rows.append(("solver step 300^2",
                 timeit(lambda: step_with(numba_impl), repeat),
                 timeit(lambda: step_with(numpy_impl), repeat)))

    args = dict(
        x0=np.array([0.0]), durations=np.array([5.0]), scalings=np.array([[1.0]]),
        gamma=np.array([1.0]), k_m=np.array([10.0]), burst_size=np.array([10.0]),
        regulator=np.array([-1]), hill_k=np.array([1.0]), hill_h=np.array([1.0]),
        leakage=np.array([0.0]),
    )
    rows.append((f"ssa {ssa_cells} traj",
                 timeit(lambda: numba_impl.ssa_final_states(1, ssa_cells, **args), repeat),
                 timeit(lambda: numpy_impl.ssa_final_states(1, ssa_cells, **args), repeat)))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--ssa-cells", type=int, default=20000)
    args = ap.parse_args()
    rows = bench_kernels(args.repeat, args.ssa_cells)
    print(f"{'kernel':24s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>9s}")
    for name, t_nb, t_np in rows:
        print(f"{name:24s} {t_nb * 1e3:12.3f} {t_np * 1e3:12.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
