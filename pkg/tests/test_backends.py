import os
import subprocess
import sys

import numpy as np
import pytest

from surrogate_kit import _backend, _pycore
from surrogate_kit.isa import BlockGenConfig, random_blocks
from surrogate_kit.rng import np_rng
from surrogate_kit.simulator import default_frozen_mask, flatten_params, sample_params
from surrogate_kit.surrogate import ModelSpec, SurrogateCheckpoint, _param_rows, init_store

kernels = pytest.importorskip("surrogate_kit._kernels")


@pytest.mark.parametrize("fuse", [False, True])
@pytest.mark.parametrize("in_order", [False, True])
def test_simulate_parity(fuse, in_order):
    blocks = random_blocks(300, BlockGenConfig(1, 16, seed=21))
    rng = np_rng(4, "parity")
    for i, b in enumerate(blocks):
        p = sample_params(rng, default_frozen_mask(True))
        mask = tuple(int(m) for m in rng.integers(1, 8, size=12))
        k = 1 + i % 7
        args = (*b.columns, p.latency, mask, p.dispatch_width, p.retire_width, p.rob_size, k, fuse, in_order)
        assert kernels.simulate_block(*args) == _pycore.simulate_block(*args)


@pytest.mark.parametrize("spec", [
    ModelSpec("block_only", 8, (6,), "tanh", 1),
    ModelSpec("block_only", 5, (7, 3), "relu", 2),
    ModelSpec("block_plus_params", 6, (4,), "tanh", 3),
])
def test_forward_parity(spec):
    store = init_store(spec, 2.0)
    rng = np.random.default_rng(0)
    for t in store.values():
        t.data = t.data + rng.normal(scale=0.3, size=t.shape)
    w = SurrogateCheckpoint(spec, store).fast_weights()
    model = kernels.ForwardModel(*w)
    prng = np_rng(8)
    for b in random_blocks(200, BlockGenConfig(1, 16, seed=3)):
        rows = None
        if spec.uses_params:
            rows = _param_rows(b, flatten_params(sample_params(prng, default_frozen_mask(True))))
        ref = _pycore.forward_block(*b.columns, rows, *w)
        assert kernels.forward_block(*b.columns, rows, *w) == pytest.approx(ref, rel=1e-12)
        assert model(*b.columns, rows) == pytest.approx(ref, rel=1e-12)


def test_env_var_forces_fallback():
    out = subprocess.run(
        [sys.executable, "-c", "import surrogate_kit; print(surrogate_kit.BACKEND)"],
        env={**os.environ, "SURROGATE_KIT_PURE": "1"}, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
    if os.environ.get("SURROGATE_KIT_PURE") is None:
        assert _backend.BACKEND == "compiled"
