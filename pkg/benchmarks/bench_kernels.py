"""Time the numba and numpy backends of the ZF rate kernel and of a full simulate() call.

    python benchmarks/bench_kernels.py [--trials 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from nomalf._kernels import _zf_rates_nb, _zf_rates_np
from nomalf.alloc import joint_optimize
from nomalf.montecarlo import block_rng, draw_block, simulate
from nomalf.system import D1, cluster_config, reference_config


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    sc = cluster_config(reference_config(D1, B=42, P_dbm=30.0))
    power, bits = joint_optimize(sc)
    cfg = sc.config
    h, hhat, g, _ = draw_block(block_rng(0, 0), cfg.M, cfg.N, cfg.K, bits.bits, args.trials, "rvq", "practical")
    kargs = (np.ascontiguousarray(h), np.ascontiguousarray(hhat), np.ascontiguousarray(g),
             np.ascontiguousarray(power.per_user), np.ascontiguousarray(sc.cnr, dtype=float))
    _zf_rates_nb(kargs[0][:8], kargs[1][:8], kargs[2][:8], *kargs[3:])  # compile outside the timing

    t_nb, (r_nb, _) = best_of(lambda: _zf_rates_nb(*kargs), args.repeat)
    t_np, (r_np, _) = best_of(lambda: _zf_rates_np(*kargs), args.repeat)
    print(f"kernel  trials={args.trials}  numba {t_nb * 1e3:8.1f} ms  numpy {t_np * 1e3:8.1f} ms  "
          f"speedup {t_np / t_nb:5.2f}x  max|diff| {np.abs(r_nb - r_np).max():.2e}")

    sims = {}
    for be in ("numba", "numpy"):
        t, res = best_of(lambda: simulate(sc, power, bits, trials=args.trials, seed=1, threads=1, backend=be),
                         args.repeat)
        sims[be] = (t, res.esr)
    print(f"simulate trials={args.trials}  numba {sims['numba'][0]:8.3f} s   numpy {sims['numpy'][0]:8.3f} s   "
          f"ESR {sims['numba'][1]:.6f} vs {sims['numpy'][1]:.6f}")


if __name__ == "__main__":
    main()
