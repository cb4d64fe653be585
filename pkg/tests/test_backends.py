import json
import os
import subprocess
import sys

import numpy as np

from bshape import _jit

SCRIPT = r"""
import json, sys
import numpy as np
from bshape import _jit
from bshape.bernstein import batch_features
from bshape.io import SimulationConfig, simulate_dataset
from bshape.model import HierarchicalModel
from bshape.rng import Xoshiro256
from bshape.sampler import ChainConfig, run_chains

ds, _ = simulate_dataset(SimulationConfig(n_genes=3, n_times=8, replicates=3), np.random.default_rng(0))
model = HierarchicalModel.from_dataset(ds, order=7)
store = run_chains(ChainConfig(40, burn_in=10, thin=2, seed=1, n_chains=2, order=7), model)
rng = Xoshiro256(3)
draws = [rng.random() for _ in range(5)] + [rng.normal() for _ in range(5)]
feats = batch_features(store.onset[0, :, 0].copy(), store.coeffs[0, :, 0].copy())
out = {
    "numba": _jit.USE_NUMBA,
    "onset": store.onset.ravel().tolist(),
    "coeffs": store.coeffs.ravel().tolist(),
    "phi": store.phi.ravel().tolist(),
    "mu": store.background.ravel().tolist(),
    "counts": store.counts.ravel().tolist(),
    "rng": draws,
    "features": feats.ravel().tolist(),
}
json.dump(out, sys.stdout)
"""


def run(disable):
    env = dict(os.environ)
    env["BSHAPE_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def test_flag_parsing():
    assert isinstance(_jit.USE_NUMBA, bool)
    assert _jit.njit(lambda x: x + 1)(1) == 2


def test_jit_and_fallback_are_bit_identical():
    fast, slow = run(False), run(True)
    assert fast.pop("numba") is True
    assert slow.pop("numba") is False
    for key in fast:
        # json round-trips doubles exactly, so equality here is bitwise
        assert np.array_equal(np.array(fast[key]), np.array(slow[key])), key
