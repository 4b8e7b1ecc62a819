import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surrogate_kit.isa import BlockGenConfig, Opcode, block, ins, parse_block, random_blocks
from surrogate_kit.rng import np_rng
from surrogate_kit.simulator import (
    GLOBAL_INDEX, GROUND_TRUTH, PARAM_DIM, SimParams, default_frozen_mask, default_params, denormalize_params,
    flatten_params, ground_truth, ground_truth_cycles, normalize_params, param_bounds, port_index, read_params,
    round_and_clamp, sample_params, sampling_bounds, simulate, simulate_cycles, throughput, unflatten_params,
    write_params,
)

D = default_params()


def test_single_add_trace():
    p = D.replace(port_mask=(1,) + D.port_mask[1:], rob_size=16)
    total, label = simulate(block(ins("ADD", 1, 2, 3)), p, 1)
    assert (total, label) == (3, 3.0)


def test_self_dependent_mul():
    _, label = simulate(block(ins("MUL", 1, 1, 1)), D.with_latency(Opcode.MUL, 4), 100)
    assert 4.0 <= label <= 4.2


def test_k_monotone_example(small_blocks):
    for b in small_blocks[:50]:
        assert simulate_cycles(b, D, 200) > simulate_cycles(b, D, 100)


def test_iterations_must_be_positive():
    with pytest.raises(ValueError):
        simulate_cycles(block(ins("ADD", 1, 2, 3)), D, 0)


def test_default_params_are_stable_and_in_bounds():
    assert default_params() == default_params()
    lo, hi = param_bounds()
    v = flatten_params(D)
    assert np.all(v >= lo) and np.all(v <= hi)


def test_hidden_params_differ_on_at_least_four_latencies():
    diff = sum(a != b for a, b in zip(D.latency, GROUND_TRUTH.hidden_params.latency))
    assert diff >= 4


def test_ground_truth_without_mov_is_plain_simulation():
    b = parse_block("ADD R1, R2, R3; MUL R4, R1, R1; LOAD R5, R4")
    assert ground_truth_cycles(b) == simulate_cycles(b, GROUND_TRUTH.hidden_params, 100)


def test_fusion_saves_cycles():
    b = parse_block("MOV R1, R2; ADD R3, R1, R1")
    fused = ground_truth_cycles(b)
    plain = simulate_cycles(b, GROUND_TRUTH.hidden_params, 100)
    assert fused < plain
    assert ground_truth(b) == fused / 100


def test_fusion_needs_a_reader_of_the_mov_dest():
    b = parse_block("MOV R1, R2; ADD R3, R4, R5")
    assert ground_truth_cycles(b) == simulate_cycles(b, GROUND_TRUTH.hidden_params, 100)


def test_ground_truth_positive(small_blocks):
    for b in small_blocks:
        g = ground_truth(b)
        assert g > 0 and math.isfinite(g)


def test_simparams_validation():
    with pytest.raises(ValueError):
        D.replace(latency=(0,) + D.latency[1:])
    with pytest.raises(ValueError):
        D.replace(port_mask=(0,) + D.port_mask[1:])
    with pytest.raises(ValueError):
        D.replace(dispatch_width=9)
    with pytest.raises(ValueError):
        D.replace(dispatch_width=8, rob_size=4)


def test_flatten_layout():
    v = flatten_params(D)
    assert v.shape == (PARAM_DIM,)
    assert v[Opcode.DIV] == 10
    assert v[port_index(Opcode.MUL, 1)] == 1 and v[port_index(Opcode.MUL, 0)] == 0
    assert v[GLOBAL_INDEX["rob_size"]] == 32
    assert set(np.unique(v[12:48])) <= {0.0, 1.0}


def test_unflatten_roundtrip_and_errors():
    assert unflatten_params(flatten_params(D)) == D
    with pytest.raises(ValueError):
        unflatten_params(np.zeros(50))
    with pytest.raises(ValueError):
        unflatten_params(flatten_params(D) + 0.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_flatten_roundtrip_random(seed):
    p = sample_params(np_rng(seed), default_frozen_mask(True))
    assert unflatten_params(flatten_params(p)) == p


def test_round_and_clamp_rules():
    assert round_and_clamp(flatten_params(D)) == D
    v = flatten_params(D)
    v[Opcode.MUL] = 3.6
    v[Opcode.DIV] = 40.0
    v[Opcode.LOAD] = 2.5  # ties to even
    out = round_and_clamp(v)
    assert out.latency[Opcode.MUL] == 4
    assert out.latency[Opcode.DIV] == 32
    assert out.latency[Opcode.LOAD] == 2


def test_round_and_clamp_frozen_coordinates():
    v = flatten_params(D)
    v[port_index(Opcode.ADD, 0)] = 0.0
    v[GLOBAL_INDEX["dispatch_width"]] = 7
    out = round_and_clamp(v)
    assert out.port_mask == D.port_mask
    assert out.dispatch_width == D.dispatch_width
    out = round_and_clamp(v, frozen_mask=default_frozen_mask(True))
    assert out.dispatch_width == 7 and out.port_mask == D.port_mask


def test_round_and_clamp_keeps_rob_at_least_dispatch():
    v = flatten_params(D)
    v[GLOBAL_INDEX["dispatch_width"]] = 8
    v[GLOBAL_INDEX["rob_size"]] = 2
    out = round_and_clamp(v, frozen_mask=default_frozen_mask(True))
    assert out.rob_size >= out.dispatch_width


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=PARAM_DIM, max_size=PARAM_DIM), st.booleans())
def test_round_and_clamp_always_valid(values, free):
    out = round_and_clamp(np.array(values), frozen_mask=default_frozen_mask(free))
    assert isinstance(out, SimParams)


def test_normalize_roundtrip():
    v = flatten_params(D)
    z = normalize_params(v)
    assert np.all((z >= 0) & (z <= 1))
    np.testing.assert_allclose(denormalize_params(z), v)


def test_sampling_box_inside_bounds():
    lo, hi = param_bounds()
    slo, shi = sampling_bounds()
    assert np.all(slo >= lo) and np.all(shi <= hi) and np.all(slo <= shi)
    v = flatten_params(D)
    assert np.all((v >= slo) & (v <= shi))


def test_sample_params_respects_box_and_frozen():
    rng = np_rng(1)
    slo, shi = sampling_bounds()
    for _ in range(200):
        p = sample_params(rng, default_frozen_mask(True), (slo, shi))
        v = flatten_params(p)
        assert np.all((v >= slo) & (v <= shi))
        assert p.port_mask == D.port_mask
    p = sample_params(rng)
    assert (p.dispatch_width, p.retire_width, p.rob_size) == (4, 4, 32)


def test_params_file_roundtrip(tmp_path):
    path = tmp_path / "x.params"
    p = D.replace(dispatch_width=2, rob_size=9).with_latency(Opcode.SHL, 5)
    write_params(p, path)
    assert read_params(path) == p
    assert path.read_text().startswith("# ")
    (tmp_path / "bad.params").write_text("{")
    with pytest.raises(ValueError):
        read_params(tmp_path / "bad.params")
    (tmp_path / "short.params").write_text('{"latency": {}}')
    with pytest.raises(ValueError):
        read_params(tmp_path / "short.params")


def _lower_bound(b, p, k):
    n = len(b) * k
    ports = [0] * 3
    for i in b:
        m = p.port_mask[i.opcode]
        if m in (1, 2, 4):
            ports[m.bit_length() - 1] += k
    return max(math.ceil(n / p.dispatch_width), math.ceil(n / p.retire_width), max(ports))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 12))
def test_lower_bounds_hold(seed, k):
    b = random_blocks(1, BlockGenConfig(1, 16, seed=seed))[0]
    p = sample_params(np_rng(seed, "p"), default_frozen_mask(True))
    assert simulate_cycles(b, p, k) >= _lower_bound(b, p, k)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 10), st.sampled_from(list(Opcode)))
def test_in_order_issue_is_latency_monotone(seed, k, op):
    b = random_blocks(1, BlockGenConfig(1, 8, seed=seed))[0]
    p = sample_params(np_rng(seed, "p"), default_frozen_mask(True))
    if p.latency[op] == 32:
        return
    slower = p.with_latency(op, p.latency[op] + 1)
    assert simulate_cycles(b, slower, k, in_order=True) >= simulate_cycles(b, p, k, in_order=True)


def test_out_of_order_latency_anomaly():
    # a slower SUB frees port 0 for a chain on the critical path
    b = parse_block("AND R6, R1, R5; LOAD R8, R3; ADD R13, R0, R14; ADD R14, R14, R3; SUB R14, R8, R12")
    p = D.replace(port_mask=(7, 7, 2, 1, 7, 7, 7, 5, 7, 4, 4, 3))
    fast = simulate_cycles(b, p, 29)
    slow = simulate_cycles(b, p.with_latency(Opcode.SUB, p.latency[Opcode.SUB] + 1), 29)
    assert slow < fast
    assert simulate_cycles(b, p.with_latency(Opcode.SUB, 2), 29, in_order=True) >= simulate_cycles(
        b, p, 29, in_order=True
    )


def test_throughput_matches_simulate(small_blocks):
    b = small_blocks[3]
    assert throughput(b, D) == simulate(b, D)[1]
