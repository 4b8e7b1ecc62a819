"""Gradient-check cases shared by the unit and acceptance suites.

Each builder takes a seed and returns ``(model_fn, store, inputs)`` for
:func:`surrogate_kit.nn.finite_difference_check`.
"""

import numpy as np

from surrogate_kit import nn
from surrogate_kit.isa import BlockGenConfig, random_blocks
from surrogate_kit.simulator import PARAM_DIM, param_bounds
from surrogate_kit.surrogate import ModelSpec, encode_block, forward, init_store, slice_indices


def _rng(seed):
    return np.random.default_rng(seed)


def _project(y: nn.Tensor, rng) -> nn.Tensor:
    """Random linear functional of a 2-d tensor, so every output entry matters."""
    r = nn.Tensor(rng.normal(size=(y.shape[1], 1)))
    return nn.mean(nn.affine(y, r, nn.Tensor(np.zeros(1))))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def case_affine(seed):
    rng = _rng(seed)
    store = nn.ParamStore()
    store.add("W", rng.normal(size=(4, 3)))
    store.add("b", rng.normal(size=3))
    x = nn.Tensor(rng.normal(size=(5, 4)), requires_grad=True, name="x")
    p = nn.Tensor(rng.normal(size=(3, 1)))

    def fn(s, inputs):
        y = nn.affine(inputs[0], s["W"], s["b"])
        return nn.mean(nn.affine(y, p, nn.Tensor(np.zeros(1))))

    return fn, store, (x,)


def _unary(op, shape=(5, 3), margin=0.0):
    def build(seed):
        rng = _rng(seed)
        store = nn.ParamStore()
        data = _away_from_zero(rng, shape) if margin else rng.normal(size=shape) * 2
        store.add("x", data)
        p = nn.Tensor(rng.normal(size=(shape[1], 1)))

        def fn(s, inputs):
            return nn.mean(nn.affine(op(s["x"]), p, nn.Tensor(np.zeros(1))))

        return fn, store, ()

    return build


case_relu = _unary(nn.relu, margin=0.1)
case_tanh = _unary(nn.tanh)
case_softplus = _unary(nn.softplus)


def case_concat(seed):
    rng = _rng(seed)
    store = nn.ParamStore()
    store.add("a", rng.normal(size=(4, 2)))
    store.add("b", rng.normal(size=(4, 3)))
    p = nn.Tensor(rng.normal(size=(5, 1)))

    def fn(s, inputs):
        y = nn.concat([s["a"], s["b"]], axis=1)
        return nn.mean(nn.affine(nn.tanh(y), p, nn.Tensor(np.zeros(1))))

    return fn, store, ()


def case_sum_pool(seed):
    rng = _rng(seed)
    store = nn.ParamStore()
    store.add("x", rng.normal(size=(7, 3)))
    seg = np.array([0, 0, 1, 1, 1, 3, 3])
    p = nn.Tensor(rng.normal(size=(3, 1)))
    q = nn.Tensor(rng.normal(size=(3, 1)))

    def fn(s, inputs):
        pooled = nn.tanh(nn.sum_pool(s["x"], seg, 4))
        whole = nn.reshape(nn.sum_pool(s["x"]), (1, 3))
        return nn.mean(nn.concat([nn.affine(pooled, p, nn.Tensor(np.zeros(1))),
                                  nn.affine(nn.tanh(whole), q, nn.Tensor(np.zeros(1)))], axis=0))

    return fn, store, ()


def case_embedding(seed):
    rng = _rng(seed)
    store = nn.ParamStore()
    store.add("table", rng.normal(size=(6, 3)))
    idx = rng.integers(0, 6, size=(9,))
    p = nn.Tensor(rng.normal(size=(3, 1)))

    def fn(s, inputs):
        return nn.mean(nn.affine(nn.tanh(nn.embedding_lookup(s["table"], idx)), p, nn.Tensor(np.zeros(1))))

    return fn, store, ()


def case_mean_reshape(seed):
    rng = _rng(seed)
    store = nn.ParamStore()
    store.add("x", rng.normal(size=(3, 4)))

    def fn(s, inputs):
        return nn.mean(nn.tanh(nn.reshape(s["x"], (2, 6))))

    return fn, store, ()


def case_mape_loss(seed):
    rng = _rng(seed)
    trues = rng.uniform(0.5, 3.0, size=8)
    sign = np.where(rng.random(8) < 0.5, -1.0, 1.0)
    store = nn.ParamStore()
    store.add("pred", trues * (1.0 + sign * rng.uniform(0.1, 0.4, size=8)))

    def fn(s, inputs):
        return nn.mape_loss(s["pred"], trues)

    return fn, store, ()


def _batch(seed, n=6):
    blocks = random_blocks(n, BlockGenConfig(1, 6, seed=seed))
    x = np.concatenate([encode_block(b) for b in blocks])
    seg = np.repeat(np.arange(n), [len(b) for b in blocks])
    return blocks, x, seg


def _small_store(spec):
    store = init_store(spec, 2.0)
    rng = _rng(spec.init_seed)
    for t in store.values():
        t.data = t.data + rng.normal(scale=0.1, size=t.shape)
    return store


def case_encoder_block_only(seed, activation="tanh"):
    spec = ModelSpec("block_only", 6, (5,), activation, init_seed=seed)
    store = _small_store(spec)
    blocks, x, seg = _batch(seed)

    def fn(s, inputs):
        return nn.mean(forward(spec, s, x, seg, len(blocks)))

    return fn, store, ()


def case_encoder_block_plus_params(seed, activation="tanh"):
    """Gradient through the model and with respect to the raw flat parameter vector."""
    spec = ModelSpec("block_plus_params", 6, (5,), activation, init_seed=seed)
    store = _small_store(spec)
    blocks, x, seg = _batch(seed)
    lo, hi = param_bounds()
    rng = _rng(seed + 1)
    flat = nn.Tensor(lo + rng.uniform(0.2, 0.8, size=PARAM_DIM) * (hi - lo), requires_grad=True, name="flat_params")
    scale = nn.Tensor(np.diag(1.0 / (hi - lo)))
    shift = nn.Tensor(-lo / (hi - lo))
    sl = slice_indices(blocks)

    def fn(s, inputs):
        z = nn.reshape(nn.affine(nn.reshape(inputs[0], (1, PARAM_DIM)), scale, shift), (PARAM_DIM,))
        rows = nn.embedding_lookup(z, sl)
        return nn.mean(forward(spec, s, x, seg, len(blocks), rows))

    return fn, store, (flat,)


PRIMITIVE_CASES = {
    "affine": case_affine,
    "relu": case_relu,
    "tanh": case_tanh,
    "softplus": case_softplus,
    "concat": case_concat,
    "sum_pool": case_sum_pool,
    "embedding_lookup": case_embedding,
    "mean_reshape": case_mean_reshape,
    "mape_loss": case_mape_loss,
}

ENCODER_CASES = {
    "block_only": case_encoder_block_only,
    "block_plus_params": case_encoder_block_plus_params,
}


def run_case(builder, seed, tolerance=1e-4):
    fn, store, inputs = builder(seed)
    return nn.finite_difference_check(fn, store, inputs, tolerance=tolerance)
