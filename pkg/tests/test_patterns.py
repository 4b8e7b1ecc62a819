import json

import numpy as np
import pytest

from surrogate_kit.harness import canonical_json, mask_wall_clock
from surrogate_kit.isa import read_dataset
from surrogate_kit.patterns import (
    AdaptationConfig, ConstructionConfig, OptimizationConfig, construct, generate_blocks, ground_truth_split,
    optimize_params, random_search_baseline, run_adaptation, run_compilation, sampled_construction, speedup,
)
from surrogate_kit.simulator import (
    GLOBAL_INDEX, default_params, flatten_params, read_params, sampling_bounds, throughput, unflatten_params,
)
from surrogate_kit.surrogate import ModelSpec, SurrogateCheckpoint, TrainConfig

SMALL = dict(n_blocks=120, train=TrainConfig(epochs=3))


@pytest.fixture(scope="module")
def small_default():
    return construct(ConstructionConfig(**SMALL))


@pytest.fixture(scope="module")
def small_sampled():
    return construct(sampled_construction(n_blocks=120, param_samples_per_block=2, train=TrainConfig(epochs=3)))


def test_config_validation():
    with pytest.raises(ValueError):
        ConstructionConfig(label_source="hardware")
    with pytest.raises(ValueError):
        ConstructionConfig(label_source="simulator_sampled_params")
    with pytest.raises(ValueError):
        ConstructionConfig(n_blocks=2)
    with pytest.raises(ValueError):
        AdaptationConfig(fractions=(0.5, 0.1))
    with pytest.raises(ValueError):
        AdaptationConfig(fractions=(0.0,))
    with pytest.raises(ValueError):
        OptimizationConfig(budget=0)
    assert OptimizationConfig().frozen_mask[GLOBAL_INDEX["rob_size"]] == False  # noqa: E712
    assert OptimizationConfig(free_globals=False).frozen_mask[GLOBAL_INDEX["rob_size"]]


def test_construct_writes_artifacts(tmp_path):
    ckpt, report, split = construct(ConstructionConfig(**SMALL), tmp_path)
    for name in ("surrogate.ckpt", "train.jsonl", "validation.jsonl", "test.jsonl", "train_report.jsonl", "report.json"):
        assert (tmp_path / name).exists()
    assert read_dataset(tmp_path / "test.jsonl") == split.test
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["n_blocks"] == 120 and rep["n_records"]["train"] == 96
    assert SurrogateCheckpoint.load(tmp_path / "surrogate.ckpt").spec == ckpt.spec


def test_default_labels_are_simulator_labels(small_default):
    _, _, split = small_default
    p = default_params()
    assert all(r.label == throughput(r.block, p) for r in split.test)


def test_sampled_split_keeps_blocks_together(small_sampled):
    _, _, split = small_sampled
    blocks = [{r.block for r in part} for part in (split.train, split.validation, split.test)]
    assert not (blocks[0] & blocks[1]) and not (blocks[0] & blocks[2]) and not (blocks[1] & blocks[2])
    lo, hi = sampling_bounds()
    for r in split.train:
        v = np.array(r.params)
        assert np.all((v >= lo) & (v <= hi))
        assert r.label == throughput(r.block, unflatten_params(v))
    assert len(split.train) == 2 * 96


def test_construct_is_reproducible():
    a = construct(ConstructionConfig(**SMALL))[1]
    b = construct(ConstructionConfig(**SMALL))[1]
    assert canonical_json(mask_wall_clock(a)) == canonical_json(mask_wall_clock(b))


def test_run_compilation(small_default, small_blocks):
    ckpt, _, _ = small_default
    r = run_compilation(ckpt, small_blocks, warmup=20)
    m = r["metrics"]
    assert r["n_blocks"] == len(small_blocks) and r["timing"]["timed_blocks"] == len(small_blocks) - 20
    assert m["speedup"] == pytest.approx(m["surrogate_blocks_per_second"] / m["simulator_blocks_per_second"])
    p = default_params()
    exact = run_compilation(None, small_blocks, warmup=20, surrogate_fn=lambda b: throughput(b, p))
    assert exact["metrics"]["surrogate_mape_vs_simulator"] == 0.0


def test_compilation_needs_block_only(small_sampled, small_blocks):
    with pytest.raises(ValueError):
        run_compilation(small_sampled[0], small_blocks)


def test_speedup_fixture():
    assert abs(speedup(2820, 1742) - 2820 / 1742) < 1e-12


def test_run_adaptation_small(small_default):
    ckpt, _, _ = small_default
    gt = ground_truth_split(generate_blocks(ConstructionConfig(**SMALL)), 0)
    cfg = AdaptationConfig(fractions=(0.1, 1.0), seeds_per_fraction=2, train=TrainConfig(epochs=2))
    rep = run_adaptation(ckpt, gt, cfg, run_seed=0)
    assert len(rep["runs"]) == 4
    assert [c["n_train"] for c in rep["metrics"]["curve"]] == [10, 96]
    assert rep["metrics"]["simulator_test_mape_vs_ground_truth"] > 0
    again = run_adaptation(ckpt, gt, cfg, run_seed=0)
    assert canonical_json(rep) == canonical_json(again)


def test_optimize_params_small(small_sampled, tmp_path):
    ckpt, _, _ = small_sampled
    gt = ground_truth_split(generate_blocks(ConstructionConfig(**SMALL)), 0)
    params, rep = optimize_params(ckpt, gt.train, gt.test, OptimizationConfig(steps=20), tmp_path)
    assert read_params(tmp_path / "optimized.params") == params
    assert rep["params"] == flatten_params(params).astype(int).tolist()
    assert params.port_mask == default_params().port_mask
    m = rep["metrics"]
    assert m["relative_test_improvement"] == pytest.approx(1 - m["final_test_mape"] / m["initial_test_mape"])
    lo, hi = sampling_bounds()
    v = flatten_params(params)
    assert np.all((v >= lo) & (v <= hi))


def test_optimize_params_latencies_only_keeps_globals(small_sampled):
    ckpt, _, _ = small_sampled
    gt = ground_truth_split(generate_blocks(ConstructionConfig(**SMALL)), 0)
    params, _ = optimize_params(ckpt, gt.train, gt.test, OptimizationConfig(steps=10, free_globals=False))
    d = default_params()
    assert (params.dispatch_width, params.retire_width, params.rob_size) == (d.dispatch_width, d.retire_width, d.rob_size)


def test_optimize_params_needs_param_model(small_default):
    gt = ground_truth_split(generate_blocks(ConstructionConfig(**SMALL)), 0)
    with pytest.raises(ValueError):
        optimize_params(small_default[0], gt.train, gt.test, OptimizationConfig(steps=1))


def test_random_search_baseline():
    gt = ground_truth_split(generate_blocks(ConstructionConfig(**SMALL)), 0)
    best, rep = random_search_baseline(gt.train, gt.test, budget=5, seed=1)
    assert len(rep["candidate_train_mapes"]) == 5
    assert rep["metrics"]["best_train_mape"] == min(rep["candidate_train_mapes"])
    assert random_search_baseline(gt.train, gt.test, budget=5, seed=1)[0] == best
    with pytest.raises(ValueError):
        random_search_baseline(gt.train, gt.test, budget=0)


def test_model_spec_mismatch_rejected():
    with pytest.raises(ValueError):
        ConstructionConfig(model=ModelSpec("block_plus_params"))
