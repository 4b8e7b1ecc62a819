"""Speed and accuracy measurement.

Speed follows a batch-size-1, single-thread protocol: a warmup prefix is
evaluated untimed, then the remaining blocks are evaluated one at a time
under a monotonic clock.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import mean_mape

DEFAULT_WARMUP = 100
WALL_CLOCK_MARKERS = ("seconds", "per_second", "speedup", "wall")


@dataclass
class SpeedReport:
    blocks_evaluated: int
    wall_seconds: float
    blocks_per_second: float
    batch_size: int = 1
    warmup_blocks: int = 0


@dataclass
class EvalReport:
    n: int
    mean_mape: float
    deciles: list  # 0th, 10th, ..., 100th percentile of per-item error

    def to_dict(self) -> dict:
        return asdict(self)


def measure_throughput(predictor: Callable, blocks: Sequence, warmup_count: int = DEFAULT_WARMUP) -> SpeedReport:
    if not blocks:
        raise ValueError("measure_throughput needs at least one block")
    warmup_count = max(0, warmup_count)
    timed = blocks[warmup_count:]
    if not timed:
        raise ValueError(f"no blocks left to time after {warmup_count} warmup blocks")
    for b in blocks[:warmup_count]:
        predictor(b)
    start = time.perf_counter()
    for b in timed:
        predictor(b)
    elapsed = time.perf_counter() - start
    return SpeedReport(len(timed), elapsed, len(timed) / elapsed if elapsed > 0 else float("inf"),
                       batch_size=1, warmup_blocks=min(warmup_count, len(blocks)))


def evaluate_mape(predictor: Callable, records: Sequence) -> EvalReport:
    """Mean MAPE of ``predictor(record.block)`` against ``record.label``."""
    if not records:
        raise ValueError("evaluate_mape needs at least one record")
    preds = np.array([predictor(r.block) for r in records], dtype=float)
    trues = np.array([r.label for r in records], dtype=float)
    errs = np.abs(preds - trues) / trues
    return EvalReport(len(records), mean_mape(preds, trues), [float(q) for q in np.quantile(errs, np.linspace(0, 1, 11))])


def mask_wall_clock(obj):
    """Copy of a report with every timing-derived field replaced by None."""
    if isinstance(obj, dict):
        return {
            k: (None if any(m in str(k) for m in WALL_CLOCK_MARKERS) else mask_wall_clock(v))
            for k, v in obj.items()
        }
    if isinstance(obj, (list, tuple)):
        return [mask_wall_clock(v) for v in obj]
    return copy.copy(obj)


def canonical_json(report) -> str:
    return json.dumps(report, sort_keys=True, indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def reproducibility_check(run_fn: Callable, seed: int) -> bool:
    """Run twice with the same seed; pass iff masked serialized reports are byte-identical."""
    first = canonical_json(mask_wall_clock(json.loads(canonical_json(run_fn(seed)))))
    second = canonical_json(mask_wall_clock(json.loads(canonical_json(run_fn(seed)))))
    return first == second
