"""Neural surrogates of the simulator: encoders, model, training, capacity search.

The model embeds each instruction (optionally concatenated with the
parameters that govern it), applies the activation, sums over the block,
runs an MLP and ends in a softplus head so predictions stay positive.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _backend
from . import nn
from .isa import MAX_BLOCK_LEN, N_OPCODES, N_REGS, BasicBlock, DatasetRecord, DatasetSplit
from .rng import np_rng
from .simulator import GLOBAL_INDEX, GLOBAL_NAMES, N_PORTS, PARAM_DIM, lat_index, normalize_params, port_index

BLOCK_FEATURES = N_OPCODES + N_REGS + N_REGS + 1  # 45
PARAM_FEATURES = 1 + N_PORTS + len(GLOBAL_NAMES)  # 7
_DEST0 = N_OPCODES
_SRC0 = N_OPCODES + N_REGS
_POS = BLOCK_FEATURES - 1

ENCODER_KINDS = ("block_only", "block_plus_params")


@dataclass(frozen=True)
class ModelSpec:
    encoder_kind: str = "block_only"
    embed_width: int = 32
    hidden_widths: tuple = (32,)
    activation: str = "tanh"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.activation not in nn.ACTIVATIONS:
            raise ValueError(f"activation must be one of {tuple(nn.ACTIVATIONS)}")
        if self.embed_width < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("widths must be positive")

    @property
    def uses_params(self) -> bool:
        return self.encoder_kind == "block_plus_params"

    @property
    def input_width(self) -> int:
        return BLOCK_FEATURES + (PARAM_FEATURES if self.uses_params else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    loss: str = "mape"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs must be >= 0, batch_size and learning_rate positive")
        if self.loss != "mape":
            raise ValueError("only the mape loss is supported")


# --- encoders -----------------------------------------------------------------

def encode_block(block: BasicBlock) -> np.ndarray:
    """(n, 45): opcode one-hot, dest one-hot, summed source one-hots, position/15."""
    ops, dst, s0, s1 = block.columns
    n = len(ops)
    x = np.zeros((n, BLOCK_FEATURES))
    rows = np.arange(n)
    x[rows, ops] = 1.0
    for i in range(n):
        if dst[i] >= 0:
            x[i, _DEST0 + dst[i]] = 1.0
        x[i, _SRC0 + s0[i]] += 1.0
        if s1[i] >= 0:
            x[i, _SRC0 + s1[i]] += 1.0
    x[:, _POS] = rows / (MAX_BLOCK_LEN - 1)
    return x


def param_slice_index(op: int) -> list:
    """Flat-parameter coordinates that govern one opcode: latency, its 3 port bits, the globals."""
    return [lat_index(op)] + [port_index(op, j) for j in range(N_PORTS)] + [GLOBAL_INDEX[g] for g in GLOBAL_NAMES]


_SLICE_TABLE = np.array([param_slice_index(op) for op in range(N_OPCODES)], dtype=np.int64)


def encode_param_slice(instruction, flat_params) -> np.ndarray:
    """Scaled (to [0, 1] by the parameter bounds) slice of ``flat_params`` for one instruction."""
    v = np.asarray(flat_params, dtype=float)
    if v.shape != (PARAM_DIM,):
        raise ValueError(f"expected flat params of dimension {PARAM_DIM}, got shape {v.shape}")
    return normalize_params(v)[_SLICE_TABLE[int(instruction.opcode)]]


def slice_indices(blocks: Sequence[BasicBlock]) -> np.ndarray:
    """(total_instr, 7) coordinates into the normalized parameter vector."""
    ops = np.concatenate([np.asarray(b.columns[0]) for b in blocks])
    return _SLICE_TABLE[ops]


# --- model --------------------------------------------------------------------

def init_store(spec: ModelSpec, label_mean: float = 1.0) -> nn.ParamStore:
    rng = nn.init_rng(spec.init_seed)
    store = nn.ParamStore()
    widths = [spec.embed_width] + list(spec.hidden_widths)
    store.add("embed.W", nn.glorot(rng, spec.input_width, spec.embed_width))
    store.add("embed.b", np.zeros(spec.embed_width))
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        store.add(f"hidden{i}.W", nn.glorot(rng, a, b))
        store.add(f"hidden{i}.b", np.zeros(b))
    store.add("out.W", nn.glorot(rng, widths[-1], 1))
    # softplus^-1 of the label mean, so training starts at the right scale
    store.add("out.b", np.array([label_mean + math.log(-math.expm1(-label_mean))]))
    return store


def forward(spec: ModelSpec, store: nn.ParamStore, x: np.ndarray, segments: np.ndarray, n_blocks: int,
            params: Optional[nn.Tensor] = None) -> nn.Tensor:
    """Graph forward pass over a batch of blocks flattened to instruction rows.

    ``params`` is an (n_instr, 7) tensor of param slices (block_plus_params only).
    """
    act = nn.ACTIVATIONS[spec.activation]
    feats = nn.Tensor(x)
    if spec.uses_params:
        if params is None:
            raise ValueError("block_plus_params model needs parameter features")
        feats = nn.concat([feats, params], axis=1)
    elif params is not None:
        raise ValueError("block_only model takes no parameter features")
    h = act(nn.affine(feats, store["embed.W"], store["embed.b"]))
    h = nn.sum_pool(h, segments, n_blocks)
    for i in range(len(spec.hidden_widths)):
        h = act(nn.affine(h, store[f"hidden{i}.W"], store[f"hidden{i}.b"]))
    out = nn.softplus(nn.affine(h, store["out.W"], store["out.b"]))
    return nn.reshape(out, (n_blocks,))


@dataclass
class SurrogateCheckpoint:
    spec: ModelSpec
    weights: nn.ParamStore
    train_meta: dict = field(default_factory=dict)

    _fast: tuple = field(default=None, repr=False, compare=False)
    _model: object = field(default=None, repr=False, compare=False)

    def fast_weights(self) -> tuple:
        if self._fast is None:
            w = self.weights
            c = np.ascontiguousarray
            layers = [
                (c(w[f"hidden{i}.W"].data), c(w[f"hidden{i}.b"].data)) for i in range(len(self.spec.hidden_widths))
            ]
            self._fast = (
                c(w["embed.W"].data), c(w["embed.b"].data), layers,
                c(w["out.W"].data), c(w["out.b"].data), 0 if self.spec.activation == "relu" else 1,
            )
        return self._fast

    def save(self, path) -> None:
        meta = dict(self.train_meta)
        nn.save_checkpoint(path, self.spec.to_dict(), self.weights, meta)

    @classmethod
    def load(cls, path) -> "SurrogateCheckpoint":
        spec_d, arrays, meta = nn.load_checkpoint(path)
        spec = ModelSpec.from_dict(spec_d)
        store = init_store(spec)
        store.load(arrays)
        return cls(spec, store, meta)


def _param_rows(block: BasicBlock, flat_params) -> np.ndarray:
    z = normalize_params(np.asarray(flat_params, dtype=float))
    return np.ascontiguousarray(z[_SLICE_TABLE[np.asarray(block.columns[0])]])


def predict(ckpt: SurrogateCheckpoint, block: BasicBlock, flat_params=None) -> float:
    """Single-block prediction (batch size 1) through the active kernel backend."""
    if ckpt.spec.uses_params != (flat_params is not None):
        raise ValueError(
            f"{ckpt.spec.encoder_kind} model "
            + ("needs" if ckpt.spec.uses_params else "takes no") + " simulation parameters"
        )
    rows = None if flat_params is None else _param_rows(block, flat_params)
    if ckpt._model is None:
        ckpt._model = _backend.ForwardModel(*ckpt.fast_weights())
    ops, dst, s0, s1 = block.columns
    return ckpt._model(ops, dst, s0, s1, rows)


class EncodedSet:
    """Records pre-encoded into one instruction matrix for fast batching."""

    def __init__(self, records: Sequence[DatasetRecord], uses_params: bool):
        self.n = len(records)
        blocks = [r.block for r in records]
        self.labels = np.array([r.label for r in records], dtype=np.float64)
        lengths = np.array([len(b) for b in blocks], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        self.lengths = lengths
        self.x = np.concatenate([encode_block(b) for b in blocks]) if blocks else np.zeros((0, BLOCK_FEATURES))
        self.p = None
        if uses_params:
            if any(r.params is None for r in records):
                raise ValueError("block_plus_params training needs records with params")
            z = normalize_params(np.array([r.params for r in records], dtype=float))
            owner = np.repeat(np.arange(self.n), lengths)
            self.p = z[owner[:, None], slice_indices(blocks)]

    def batch(self, idx: np.ndarray):
        lengths = self.lengths[idx]
        rows = np.concatenate([np.arange(s, s + n) for s, n in zip(self.starts[idx], lengths)])
        segments = np.repeat(np.arange(len(idx)), lengths)
        p = None if self.p is None else nn.Tensor(self.p[rows])
        return self.x[rows], segments, p, self.labels[idx]

    def predict_all(self, spec: ModelSpec, store: nn.ParamStore, chunk: int = 4096) -> np.ndarray:
        out = []
        for a in range(0, self.n, chunk):
            idx = np.arange(a, min(a + chunk, self.n))
            x, seg, p, _ = self.batch(idx)
            out.append(forward(spec, _detached(store), x, seg, len(idx), p).data)
        return np.concatenate(out) if out else np.zeros(0)

    def loss(self, spec, store) -> Optional[float]:
        if self.n == 0:
            return None
        return nn.mean_mape(self.predict_all(spec, store), self.labels)


def _detached(store: nn.ParamStore) -> nn.ParamStore:
    out = nn.ParamStore()
    for k, t in store.items():
        out[k] = nn.Tensor(t.data)
    return out


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, test_loss, wall_seconds
    selected_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.epochs[self.selected_epoch]["val_loss"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def select_best_epoch(val_losses: Sequence[float]) -> int:
    """Index of the minimum validation loss; the earliest wins ties."""
    return int(np.argmin(np.asarray(val_losses)))


def train(split: DatasetSplit, spec: ModelSpec, cfg: TrainConfig,
          warm_start: Optional[SurrogateCheckpoint] = None, log: Optional[Callable] = None):
    """Mini-batch Adam on mean MAPE, keeping the best-validation snapshot.

    Epoch 0 in the report is the starting point (fresh or warm-started
    weights), so a zero-epoch budget returns the starting weights.
    """
    if not split.train or not split.validation:
        raise ValueError("training needs nonempty train and validation sets")
    if warm_start is not None and warm_start.spec != spec:
        raise ValueError(f"warm start spec {warm_start.spec} does not match {spec}")
    t0 = time.perf_counter()
    tr = EncodedSet(split.train, spec.uses_params)
    va = EncodedSet(split.validation, spec.uses_params)
    te = EncodedSet(split.test, spec.uses_params)
    if warm_start is not None:
        store = warm_start.weights.copy()
    else:
        store = init_store(spec, float(np.mean(tr.labels)))
    state = nn.AdamState(lr=cfg.learning_rate)
    rng = np_rng(cfg.seed, "shuffle")

    report = TrainReport()

    def record(epoch, train_loss):
        report.epochs.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": va.loss(spec, store),
            "test_loss": te.loss(spec, store),
            "wall_seconds": time.perf_counter() - t0,
        })

    record(0, tr.loss(spec, store))
    best = store.arrays()
    best_val = report.epochs[0]["val_loss"]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(tr.n)
        total = 0.0
        for a in range(0, tr.n, cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            x, seg, p, y = tr.batch(idx)
            store.zero_grad()
            loss = nn.mape_loss(forward(spec, store, x, seg, len(idx), p), y)
            nn.backward(loss)
            nn.adam_step(store, store.grads(), state)
            total += loss.item() * len(idx)
        record(epoch, total / tr.n)
        if report.epochs[-1]["val_loss"] < best_val:
            best_val = report.epochs[-1]["val_loss"]
            best = store.arrays()
        if log is not None:
            log(report.epochs[-1])
    report.selected_epoch = select_best_epoch([e["val_loss"] for e in report.epochs])
    store.load(best)
    store.zero_grad()
    meta = {
        "epochs_run": cfg.epochs,
        "selected_epoch": report.selected_epoch,
        "best_val_loss": report.best_val_loss,
        "wall_seconds": time.perf_counter() - t0,
        "train_seed": cfg.seed,
    }
    return SurrogateCheckpoint(spec, store, meta), report


# --- capacity search ----------------------------------------------------------

class NoQualifyingWidth(RuntimeError):
    pass


def select_capacity(rows: Sequence[dict], threshold: float) -> dict:
    """Fastest row whose best validation MAPE is within ``threshold``."""
    ok = [r for r in rows if r["val_mape"] <= threshold]
    if not ok:
        raise NoQualifyingWidth(
            f"no qualifying width: best validation MAPEs {[round(r['val_mape'], 4) for r in rows]} "
            f"all exceed {threshold}"
        )
    return max(ok, key=lambda r: r["blocks_per_second"])


def spec_for_width(base: ModelSpec, width: int) -> ModelSpec:
    return ModelSpec(base.encoder_kind, width, tuple(width for _ in base.hidden_widths),
                     base.activation, base.init_seed)


def capacity_search(widths: Sequence[int], split: DatasetSplit, base_spec: ModelSpec, cfg: TrainConfig,
                    threshold: float, speed_fn: Callable[[SurrogateCheckpoint], float]):
    """Train one model per width and pick the fastest that meets ``threshold``.

    Returns ``(chosen_spec, chosen_checkpoint, table)``; raises
    :class:`NoQualifyingWidth` when no width qualifies.
    """
    if not widths:
        raise ValueError("need at least one width")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    rows, ckpts = [], {}
    for w in widths:
        spec = spec_for_width(base_spec, w)
        ckpt, rep = train(split, spec, cfg)
        ckpts[w] = ckpt
        rows.append({
            "width": w,
            "val_mape": rep.best_val_loss,
            "selected_epoch": rep.selected_epoch,
            "blocks_per_second": float(speed_fn(ckpt)),
        })
    try:
        chosen = select_capacity(rows, threshold)
    except NoQualifyingWidth as e:
        e.table = rows
        raise
    return spec_for_width(base_spec, chosen["width"]), ckpts[chosen["width"]], rows
