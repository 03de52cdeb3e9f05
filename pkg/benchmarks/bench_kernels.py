"""Compare the compiled and pure-numpy gust kernels.

Usage: python benchmarks/bench_kernels.py [--towers N] [--repeat K]
"""

import argparse
import time

import numpy as np

from cyclofrag._jit import use_jit
from cyclofrag.ingest import interpolate_track, tower_arrays
from cyclofrag.synthetic import make_scenario
from cyclofrag.windfield import Rwpm, WindConfig, gust_field_arrays


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--towers", type=int, default=41_814)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    sc = make_scenario(args.towers, seed=0)
    track = interpolate_track(sc.track, 15)
    lat, lon = tower_arrays(sc.towers)
    print(f"{args.towers} towers x {len(track)} track steps, best of {args.repeat}")
    print(f"{'model':<6}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max rel diff':>14}")
    for model in Rwpm:
        cfg = WindConfig(model, 0.9, 1.58)
        t_np, ref = _best(lambda: gust_field_arrays(track, cfg, lat, lon, jit=False), args.repeat)
        if use_jit():
            gust_field_arrays(track, cfg, lat[:10], lon[:10], jit=True)  # compile
            t_nb, got = _best(lambda: gust_field_arrays(track, cfg, lat, lon, jit=True), args.repeat)
            diff = float(np.max(np.abs(got - ref) / np.maximum(ref, 1e-300)))
            print(f"{model.value:<6}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>9.2f}{diff:>14.2e}")
        else:
            print(f"{model.value:<6}{'-':>10}{t_np:>10.4f}{'-':>9}{'-':>14}")


if __name__ == "__main__":
    main()
