"""The three surrogate workflows and their baselines.

* construct: learn a surrogate of the simulator from simulator-labelled blocks
  (optionally with sampled simulation parameters as extra inputs);
* run_compilation: deploy the surrogate in place of the simulator and compare
  accuracy and speed;
* run_adaptation: fine-tune the surrogate on scarce ground-truth labels and
  compare against training from scratch;
* optimize_params: gradient-descend the simulation parameters through a frozen
  surrogate, then plug them back into the simulator.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .harness import DEFAULT_WARMUP, canonical_json, measure_throughput
from .isa import BlockGenConfig, DatasetRecord, DatasetSplit, random_blocks, split_dataset, subsample_indices, write_dataset
from .rng import derive_seed, np_rng
from .simulator import (
    DEFAULT_ITERATIONS, GROUND_TRUTH, PARAM_DIM, SimParams, default_frozen_mask, default_params,
    denormalize_params, flatten_params, ground_truth, normalize_params, param_bounds, round_and_clamp,
    sample_params, sampling_bounds, throughput, write_params,
)
from .surrogate import (
    EncodedSet, ModelSpec, SurrogateCheckpoint, TrainConfig, capacity_search, forward, predict, slice_indices,
    train,
)

LABEL_SOURCES = ("simulator_default_params", "simulator_sampled_params")
DEFAULT_FRACTIONS = (0.005, 0.02, 0.10, 1.0)


@dataclass
class ConstructionConfig:
    label_source: str = "simulator_default_params"
    n_blocks: int = 2000
    param_samples_per_block: int = 1
    run_seed: int = 0
    min_len: int = 1
    max_len: int = 8
    split_fractions: tuple = (0.8, 0.1, 0.1)
    iterations: int = DEFAULT_ITERATIONS
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    capacity_widths: Optional[tuple] = None
    threshold: float = 0.10
    sample_globals: bool = True  # also vary dispatch/retire width and ROB size when sampling

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise ValueError(f"label_source must be one of {LABEL_SOURCES}")
        sampled = self.label_source == "simulator_sampled_params"
        if sampled != self.model.uses_params:
            raise ValueError("sampled-parameter labels go with a block_plus_params encoder and vice versa")
        if self.param_samples_per_block < 1 or self.n_blocks < 3:
            raise ValueError("need n_blocks >= 3 and param_samples_per_block >= 1")


def sampled_construction(**overrides) -> ConstructionConfig:
    """Defaults for the parameter-conditioned surrogate used by optimize_params."""
    base = dict(
        label_source="simulator_sampled_params",
        param_samples_per_block=4,
        model=ModelSpec(encoder_kind="block_plus_params"),
        train=TrainConfig(epochs=100),
    )
    base.update(overrides)
    return ConstructionConfig(**base)


@dataclass
class AdaptationConfig:
    fractions: tuple = DEFAULT_FRACTIONS
    seeds_per_fraction: int = 3
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100))

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if list(self.fractions) != sorted(self.fractions):
            raise ValueError("fractions must be sorted ascending")
        if self.seeds_per_fraction < 1:
            raise ValueError("seeds_per_fraction must be >= 1")


@dataclass
class OptimizationConfig:
    steps: int = 500
    learning_rate: float = 0.01
    free_globals: bool = True
    budget: int = 200  # random-search simulator evaluations of the full train set
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.budget < 1:
            raise ValueError("steps must be >= 0 and budget >= 1")

    @property
    def frozen_mask(self) -> np.ndarray:
        return default_frozen_mask(self.free_globals)


def _cfg_dict(cfg) -> dict:
    d = asdict(cfg)
    for k, v in list(d.items()):
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


# --- data ---------------------------------------------------------------------

def generate_blocks(cfg: ConstructionConfig) -> list:
    gen = BlockGenConfig(cfg.min_len, cfg.max_len, seed=derive_seed(cfg.run_seed, "blocks"))
    return random_blocks(cfg.n_blocks, gen)


def label_records(blocks, cfg: ConstructionConfig) -> list:
    if cfg.label_source == "simulator_default_params":
        p = default_params()
        return [DatasetRecord(b, throughput(b, p, cfg.iterations)) for b in blocks]
    rng = np_rng(cfg.run_seed, "param-samples")
    frozen = default_frozen_mask(cfg.sample_globals)
    box = sampling_bounds()
    out = []
    for b in blocks:
        for _ in range(cfg.param_samples_per_block):
            p = sample_params(rng, frozen, box)
            out.append(DatasetRecord(b, throughput(b, p, cfg.iterations), tuple(int(v) for v in flatten_params(p))))
    return out


def ground_truth_split(blocks, run_seed: int, fractions=(0.8, 0.1, 0.1)) -> DatasetSplit:
    records = [DatasetRecord(b, ground_truth(b)) for b in blocks]
    return split_dataset(records, fractions, derive_seed(run_seed, "split"))


def simulator_split(blocks, run_seed: int, fractions=(0.8, 0.1, 0.1), iterations=DEFAULT_ITERATIONS) -> DatasetSplit:
    p = default_params()
    records = [DatasetRecord(b, throughput(b, p, iterations)) for b in blocks]
    return split_dataset(records, fractions, derive_seed(run_seed, "split"))


# --- construction -------------------------------------------------------------

def construct(cfg: ConstructionConfig, out_dir=None, speed_blocks=None, log=None):
    """Train s1* on simulator labels. Returns ``(checkpoint, report, split)``."""
    blocks = generate_blocks(cfg)
    if cfg.label_source == "simulator_default_params":
        # split blocks first so every sampled record of a block lands in one part
        split = split_dataset(label_records(blocks, cfg), cfg.split_fractions, derive_seed(cfg.run_seed, "split"))
    else:
        bsplit = split_dataset(blocks, cfg.split_fractions, derive_seed(cfg.run_seed, "split"))
        split = DatasetSplit(
            label_records(bsplit.train, replace(cfg, run_seed=derive_seed(cfg.run_seed, "train-params"))),
            label_records(bsplit.validation, replace(cfg, run_seed=derive_seed(cfg.run_seed, "val-params"))),
            label_records(bsplit.test, replace(cfg, run_seed=derive_seed(cfg.run_seed, "test-params"))),
            bsplit.split_seed,
            bsplit.indices,
        )
    spec = replace(cfg.model, init_seed=derive_seed(cfg.run_seed, "init"))
    tcfg = replace(cfg.train, seed=derive_seed(cfg.run_seed, "train"))
    table = None
    if cfg.capacity_widths:
        bench = list(speed_blocks or [r.block for r in split.test])

        def speed(ck):
            return measure_throughput(lambda b: predict(ck, b), bench, warmup_count=min(DEFAULT_WARMUP, len(bench) // 2)).blocks_per_second

        spec, ckpt, table = capacity_search(cfg.capacity_widths, split, spec, tcfg, cfg.threshold, speed)
        report_train = None
    else:
        ckpt, report_train = train(split, spec, tcfg, log=log)
    report = {
        "pattern": "construction",
        "config": _cfg_dict(cfg),
        "seeds": {"run_seed": cfg.run_seed, "init_seed": spec.init_seed, "train_seed": tcfg.seed,
                  "split_seed": split.split_seed},
        "model": spec.to_dict(),
        "n_records": {"train": len(split.train), "validation": len(split.validation), "test": len(split.test)},
        "metrics": {
            "best_val_mape": ckpt.train_meta["best_val_loss"],
            "selected_epoch": ckpt.train_meta["selected_epoch"],
            "train_wall_seconds": ckpt.train_meta["wall_seconds"],
        },
    }
    if table is not None:
        report["capacity_table"] = table
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt.save(out / "surrogate.ckpt")
        for name in ("train", "validation", "test"):
            write_dataset(getattr(split, name), out / f"{name}.jsonl")
        if report_train is not None:
            (out / "train_report.jsonl").write_text(report_train.to_jsonl())
        report["artifacts"] = {"checkpoint": str(out / "surrogate.ckpt"), "datasets": str(out)}
        write_report(report, out / "report.json")
    return ckpt, report, split


def write_report(report: dict, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(canonical_json(report) + "\n")
    tmp.replace(path)


# --- compilation --------------------------------------------------------------

def run_compilation(ckpt: SurrogateCheckpoint, eval_blocks: Sequence, iterations: int = DEFAULT_ITERATIONS,
                    warmup: int = DEFAULT_WARMUP, surrogate_fn=None) -> dict:
    """Accuracy of s1* against simulator and ground truth, and speed of both at batch size 1."""
    if ckpt is not None and ckpt.spec.uses_params:
        raise ValueError("surrogate compilation needs a block_only checkpoint")
    eval_blocks = list(eval_blocks)
    p = default_params()
    sim_fn = (lambda b: throughput(b, p, iterations))
    sur_fn = surrogate_fn or (lambda b: predict(ckpt, b))
    sim = np.array([sim_fn(b) for b in eval_blocks])
    gt = np.array([ground_truth(b) for b in eval_blocks])
    sur = np.array([sur_fn(b) for b in eval_blocks])
    warm = min(warmup, len(eval_blocks) // 2)
    sim_speed = measure_throughput(sim_fn, eval_blocks, warm)
    sur_speed = measure_throughput(sur_fn, eval_blocks, warm)
    return {
        "pattern": "compilation",
        "n_blocks": len(eval_blocks),
        "iterations": iterations,
        "metrics": {
            "surrogate_mape_vs_simulator": nn.mean_mape(sur, sim),
            "surrogate_mape_vs_ground_truth": nn.mean_mape(sur, gt),
            "simulator_mape_vs_ground_truth": nn.mean_mape(sim, gt),
            "surrogate_blocks_per_second": sur_speed.blocks_per_second,
            "simulator_blocks_per_second": sim_speed.blocks_per_second,
            "speedup": speedup(sur_speed.blocks_per_second, sim_speed.blocks_per_second),
        },
        "timing": {"batch_size": 1, "warmup_blocks": warm, "timed_blocks": sim_speed.blocks_evaluated},
    }


def speedup(surrogate_bps: float, simulator_bps: float) -> float:
    return surrogate_bps / simulator_bps


# --- adaptation ---------------------------------------------------------------

def run_adaptation(ckpt: SurrogateCheckpoint, gt_split: DatasetSplit, cfg: AdaptationConfig, run_seed: int = 0,
                   sim_test_labels=None, log=None) -> dict:
    """Fine-tune s1* vs. train from scratch on growing slices of ground-truth data."""
    if ckpt.spec.uses_params:
        raise ValueError("surrogate adaptation needs a block_only checkpoint")
    if sim_test_labels is None:
        p = default_params()
        sim_test_labels = [throughput(r.block, p) for r in gt_split.test]
    gt_test = [r.label for r in gt_split.test]
    sim_mape = nn.mean_mape(sim_test_labels, gt_test)
    rows = []
    for fraction in cfg.fractions:
        for s in range(cfg.seeds_per_fraction):
            seed = derive_seed(run_seed, f"adapt:{fraction!r}:{s}")
            idx = subsample_indices(len(gt_split.train), fraction, seed)
            sub = DatasetSplit([gt_split.train[i] for i in idx], gt_split.validation, gt_split.test, gt_split.split_seed)
            tcfg = replace(cfg.train, seed=derive_seed(seed, "train"))
            adapted, arep = train(sub, ckpt.spec, tcfg, warm_start=ckpt)
            scratch_spec = replace(ckpt.spec, init_seed=derive_seed(seed, "scratch-init"))
            scratch, srep = train(sub, scratch_spec, tcfg)
            row = {
                "fraction": fraction,
                "seed_index": s,
                "n_train": len(idx),
                "adapted_test_mape": arep.epochs[arep.selected_epoch]["test_loss"],
                "adapted_selected_epoch": arep.selected_epoch,
                "scratch_test_mape": srep.epochs[srep.selected_epoch]["test_loss"],
                "scratch_selected_epoch": srep.selected_epoch,
            }
            rows.append(row)
            if log is not None:
                log(row)
    curve = []
    for fraction in cfg.fractions:
        sel = [r for r in rows if r["fraction"] == fraction]
        curve.append({
            "fraction": fraction,
            "n_train": sel[0]["n_train"],
            "median_adapted_test_mape": float(np.median([r["adapted_test_mape"] for r in sel])),
            "median_scratch_test_mape": float(np.median([r["scratch_test_mape"] for r in sel])),
        })
    return {
        "pattern": "adaptation",
        "config": _cfg_dict(cfg),
        "seeds": {"run_seed": run_seed},
        "metrics": {"simulator_test_mape_vs_ground_truth": sim_mape, "curve": curve},
        "runs": rows,
    }


# --- optimization -------------------------------------------------------------

def _sim_mape(params: SimParams, records) -> float:
    return nn.mean_mape([throughput(r.block, params) for r in records], [r.label for r in records])


def optimize_params(ckpt: SurrogateCheckpoint, train_records: Sequence[DatasetRecord],
                    test_records: Sequence[DatasetRecord], cfg: OptimizationConfig, out_dir=None, log=None):
    """Minimize surrogate-predicted MAPE against ground truth over the normalized parameter vector.

    Surrogate weights stay frozen. Returns ``(params, report)``.
    """
    if not ckpt.spec.uses_params:
        raise ValueError("parameter optimization needs a block_plus_params checkpoint")
    t0 = time.perf_counter()
    frozen = cfg.frozen_mask
    free = ~frozen
    start = default_params()
    # stay inside the region the surrogate was trained on
    box_lo, box_hi = (normalize_params(b) for b in sampling_bounds())
    z = nn.Tensor(normalize_params(flatten_params(start)), requires_grad=True, name="params")
    data = EncodedSet([DatasetRecord(r.block, r.label) for r in train_records], uses_params=False)
    all_idx = np.arange(data.n)
    x, seg, _, y = data.batch(all_idx)
    sl = slice_indices([r.block for r in train_records])
    weights = nn.ParamStore()
    for k, t in ckpt.weights.items():
        weights[k] = nn.Tensor(t.data)
    state = nn.AdamState(lr=cfg.learning_rate)
    trace = []

    def surrogate_loss():
        rows = nn.embedding_lookup(z, sl)
        return nn.mape_loss(forward(ckpt.spec, weights, x, seg, data.n, rows), y)

    for step in range(cfg.steps):
        z.grad = None
        loss = surrogate_loss()
        nn.backward(loss)
        g = np.where(free, z.grad, 0.0)
        nn.adam_step({"params": z.data}, {"params": g}, state)
        np.clip(z.data, box_lo, box_hi, out=z.data)
        if step % 50 == 0 or step == cfg.steps - 1:
            trace.append({"step": step, "surrogate_train_mape": loss.item()})
            if log is not None:
                log(trace[-1])
    final_surrogate = surrogate_loss().item()
    optimized = round_and_clamp(denormalize_params(z.data), param_bounds(), frozen)
    opt_seconds = time.perf_counter() - t0
    report = {
        "pattern": "optimization",
        "config": _cfg_dict(cfg),
        "seeds": {"seed": cfg.seed},
        "metrics": {
            "initial_train_mape": _sim_mape(start, train_records),
            "initial_test_mape": _sim_mape(start, test_records),
            "final_train_mape": _sim_mape(optimized, train_records),
            "final_test_mape": _sim_mape(optimized, test_records),
            "surrogate_final_train_mape": final_surrogate,
            "optimization_wall_seconds": opt_seconds,
        },
        "trace": trace,
        "params": flatten_params(optimized).astype(int).tolist(),
    }
    m = report["metrics"]
    m["relative_test_improvement"] = 1.0 - m["final_test_mape"] / m["initial_test_mape"]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_params(optimized, out / "optimized.params")
        report["artifacts"] = {"params": str(out / "optimized.params")}
    return optimized, report


def random_search_baseline(train_records: Sequence[DatasetRecord], test_records: Sequence[DatasetRecord],
                           budget: int = 200, seed: int = 0, free_globals: bool = True, bounds=None):
    """Best of ``budget`` uniformly sampled parameter vectors by full-train-set simulator MAPE.

    Samples within :func:`param_bounds` unless ``bounds`` is given.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    t0 = time.perf_counter()
    rng = np_rng(seed, "random-search")
    frozen = default_frozen_mask(free_globals)
    best, best_mape, history = None, math.inf, []
    for _ in range(budget):
        cand = sample_params(rng, frozen, bounds)
        m = _sim_mape(cand, train_records)
        history.append(m)
        if m < best_mape:
            best, best_mape = cand, m
    report = {
        "pattern": "random_search",
        "seeds": {"seed": seed},
        "config": {"budget": budget, "free_globals": free_globals,
                   "bounds": "full" if bounds is None else "custom"},
        "metrics": {
            "best_train_mape": best_mape,
            "test_mape": _sim_mape(best, test_records),
            "search_wall_seconds": time.perf_counter() - t0,
        },
        "candidate_train_mapes": history,
        "params": flatten_params(best).astype(int).tolist(),
    }
    return best, report
