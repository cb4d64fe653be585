"""Time the sampler and feature kernels with numba and with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at import
time from ``BSHAPE_DISABLE_NUMBA``.  Usage::

    python benchmarks/bench_kernels.py [--iters 200] [--genes 5] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from bshape import _jit
from bshape.bernstein import batch_features
from bshape.io import SimulationConfig, simulate_dataset
from bshape.model import HierarchicalModel
from bshape.sampler import ChainConfig, run_chains

iters, genes, repeat = map(int, sys.argv[1:4])
ds, _ = simulate_dataset(SimulationConfig(n_genes=genes), np.random.default_rng(0))
model = HierarchicalModel.from_dataset(ds)
cfg = ChainConfig(iters, burn_in=0, thin=1, seed=1, n_chains=1)
run_chains(ChainConfig(2, n_chains=1), model)  # compile outside the timed region
batch_features(np.array([0.1]), np.ones((1, 14)))
t_chain, t_feat = [], []
for _ in range(repeat):
    t0 = time.perf_counter()
    store = run_chains(cfg, model)
    t_chain.append(time.perf_counter() - t0)
    t0 = time.perf_counter()
    batch_features(store.onset[0, :, 0].copy(), store.coeffs[0, :, 0].copy())
    t_feat.append(time.perf_counter() - t0)
json.dump({"numba": _jit.USE_NUMBA, "chain": min(t_chain), "features": min(t_feat)}, sys.stdout)
"""


def run(disable: bool, iters: int, genes: int, repeat: int) -> dict:
    env = dict(os.environ, BSHAPE_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(iters), str(genes), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--genes", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast = run(False, args.iters, args.genes, args.repeat)
    slow = run(True, args.iters, args.genes, args.repeat)
    sweeps = args.iters * args.genes
    print(f"{args.iters} sweeps x {args.genes} genes, order 15, best of {args.repeat}")
    print(f"{'kernel':<10}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for key in ("chain", "features"):
        print(f"{key:<10}{fast[key]:>12.4f}{slow[key]:>12.4f}{slow[key] / fast[key]:>10.1f}")
    print(f"numba throughput: {sweeps / fast['chain']:.0f} gene-sweeps/s")


if __name__ == "__main__":
    main()
