"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also times one full planning decision per backend by re-running itself
with UAVNAV_DISABLE_NUMBA set.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from uavnav import kernels


def best_of(fn, repeat):
    fn()  # compile / warm caches
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), float(np.median(ts))


def kernel_cases(rng):
    x = rng.normal(size=(16, 17, 17, 2))
    k1 = rng.normal(size=(3, 3, 2, 150))
    dout = rng.normal(size=(16, 17, 17, 150))
    rq = rng.normal(size=(16, 17, 17, 4))
    kv = rng.normal(scale=0.2, size=(3, 3, 4))
    _, Vs, idx = kernels.vi_forward_np(rq, kv, 30)
    dQ = rng.normal(size=rq.shape)
    dV = rng.normal(size=rq.shape[:3])
    S = 64 * 64
    ns = rng.integers(0, S, size=(S, 4))
    rew = rng.normal(size=(S, 4))
    cont = np.ones(S)
    return {
        "conv3x3 (16x17x17, 2->150)": (
            lambda: kernels.conv3x3_np(x, k1), lambda: kernels.conv3x3_nb(x, k1)),
        "conv3x3_backward": (
            lambda: kernels.conv3x3_backward_np(x, k1, dout), lambda: kernels.conv3x3_backward_nb(x, k1, dout)),
        "vi_forward (k=30)": (
            lambda: kernels.vi_forward_np(rq, kv, 30), lambda: kernels.vi_forward_nb(rq, kv, 30)),
        "vi_backward (k=30)": (
            lambda: kernels.vi_backward_np(dQ, dV, kv, Vs, idx), lambda: kernels.vi_backward_nb(dQ, dV, kv, Vs, idx)),
        "tabular_vi (4096 states)": (
            lambda: kernels.tabular_vi_np(ns, rew, cont, 0.9, 1e-10, 10_000),
            lambda: kernels.tabular_vi_nb(ns, rew, cont, 0.9, 1e-10, 10_000)),
    }


def decision_latency():
    from uavnav._accel import backend_name
    from uavnav.fixtures import seeded_suite
    from uavnav.harness import timing_probe
    from uavnav.mcgn import McgnConfig, init_params

    cfg = McgnConfig()
    params = init_params(cfg, (17, 17), None, np.random.default_rng(0))
    st = timing_probe("mcgn", seeded_suite(4, (17, 17), 3), (11, 11), params, cfg)
    return {"backend": backend_name(), **st.to_dict()}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--decision-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.decision_only:
        print(json.dumps(decision_latency()))
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':30s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (f_np, f_nb) in kernel_cases(rng).items():
        t_np, _ = best_of(f_np, args.repeat)
        t_nb, _ = best_of(f_nb, args.repeat)
        print(f"{name:30s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}")
    print()
    print("per-decision latency, 17x17 map / 11x11 footprint, default network sizes:")
    for flag in ("0", "1"):
        env = dict(os.environ, UAVNAV_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--decision-only"], env=env, check=True,
                             capture_output=True, text=True).stdout
        d = json.loads(out)
        print(f"  {d['backend']:6s} median {d['median_s'] * 1e3:7.2f} ms   p95 {d['p95_s'] * 1e3:7.2f} ms"
              f"   ({d['count']} decisions)")


if __name__ == "__main__":
    main()
