"""Time the hot kernels under numba and under plain numpy, and check they agree.

Each backend runs in its own interpreter because the switch is read at import:

    python benchmarks/bench_kernels.py            # both backends, side by side
    python benchmarks/bench_kernels.py --repeat 5

The numba column excludes compilation (one warm-up call per kernel first).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def worker(repeat: int) -> dict:
    from gbtpp import _accel, kernels as K
    from gbtpp import model as M
    from gbtpp.core import estimate_adjacency
    from gbtpp.graph_embed import EmbedConfig, train_embeddings
    from gbtpp.hawkes_sim import SimConfig, simulate, synthesize_params
    from gbtpp.numerics import make_rng

    params = synthesize_params(20, 0)
    rng = make_rng(0, 99)
    u = rng.random(200_000)
    results = {"backend": _accel.backend()}

    def thin():
        nodes, times, n, used = K.thin_hawkes(params.mu, params.A, params.beta, 1e5, 5000, u)
        return float(times[:n].sum()) + n

    def sim():
        ds, _ = simulate(params, SimConfig(200, 20, 1000.0, 1))
        return float(sum(c.times.sum() for c in ds.cascades))

    cvals = np.ascontiguousarray(rng.normal(0.0, 1.0, 2000))

    def quad():
        return float(K.expected_gaps_gompertz(cvals, 0.3, 1e-9).sum())

    ds, _ = simulate(params, SimConfig(100, 20, 1000.0, 2))
    emb = train_embeddings(estimate_adjacency(ds), EmbedConfig(d=8, epochs=20), make_rng(1))
    cfg = M.TrainConfig(H=32, D_em=16, epochs=1, time_feature="log_gap", time_scale="auto")

    def grad():
        total = 0.0
        p = M.init_params(ds.V, emb.d, cfg.H, cfg.D_em, make_rng(3))
        p.time_scale = M.resolve_time_scale(ds, cfg)
        for c in ds.cascades:
            loss, g, _ = M.bptt_gradients(p, emb, c, 0, len(c) - 1, cfg)
            total += loss + float(g.flatten().sum())
        return total

    def fit():
        res = M.train(ds, emb, cfg, rng=make_rng(4))
        return float(res.loss_trace[-1])

    for name, fn in [("thin_hawkes 5k events", thin), ("simulate 200 sequences", sim),
                     ("expected gap x2000", quad), ("bptt gradients 100 cascades", grad),
                     ("train 1 epoch 100 cascades", fit)]:
        secs, value = _best_of(fn, repeat)
        results[name] = {"seconds": secs, "value": value}
    return results


def run_backend(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, GBTPP_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                         env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args.repeat)))
        return 0
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    print(f"{'kernel':30s} {fast['backend']:>10s} {slow['backend']:>10s} {'speedup':>8s}  agree")
    ok = True
    for name in fast:
        if name == "backend":
            continue
        a, b = fast[name], slow[name]
        agree = bool(np.isclose(a["value"], b["value"], rtol=1e-9, atol=1e-12))
        ok &= agree
        print(f"{name:30s} {a['seconds']:10.4f} {b['seconds']:10.4f} "
              f"{b['seconds'] / a['seconds']:8.1f}x  {'yes' if agree else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
