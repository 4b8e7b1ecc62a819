"""Compiled vs pure-Python kernels: simulator and batch-size-1 surrogate forward.

    python benchmarks/bench_backends.py [--count 300] [--iterations 100]
"""

import argparse
import json
import time

from surrogate_kit import _pycore
from surrogate_kit.isa import BlockGenConfig, random_blocks
from surrogate_kit.simulator import default_params
from surrogate_kit.surrogate import ModelSpec, SurrogateCheckpoint, init_store

try:
    from surrogate_kit import _kernels
except ImportError:  # extension not built
    _kernels = None


def per_block_us(fn, blocks, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for b in blocks:
            fn(b)
        best = min(best, time.perf_counter() - t0)
    return best / len(blocks) * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=300)
    ap.add_argument("--iterations", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--width", type=int, default=32)
    args = ap.parse_args()

    blocks = random_blocks(args.count, BlockGenConfig(1, 8, seed=1))
    p = default_params()
    sim_args = (p.latency, p.port_mask, p.dispatch_width, p.retire_width, p.rob_size, args.iterations)
    spec = ModelSpec(embed_width=args.width, hidden_widths=(args.width,))
    w = SurrogateCheckpoint(spec, init_store(spec, 2.0)).fast_weights()

    rows = {}
    rows["simulate/python"] = per_block_us(lambda b: _pycore.simulate_block(*b.columns, *sim_args), blocks, args.repeat)
    rows["forward/python"] = per_block_us(lambda b: _pycore.forward_block(*b.columns, None, *w), blocks, args.repeat)
    if _kernels is not None:
        model = _kernels.ForwardModel(*w)
        rows["simulate/compiled"] = per_block_us(lambda b: _kernels.simulate_block(*b.columns, *sim_args), blocks,
                                                 args.repeat)
        rows["forward/compiled"] = per_block_us(lambda b: model(*b.columns), blocks, args.repeat)

    print(f"{'kernel':<20} {'us/block':>10}")
    for k, v in rows.items():
        print(f"{k:<20} {v:>10.2f}")
    if _kernels is not None:
        for kind in ("simulate", "forward"):
            print(f"{kind} compiled speedup: {rows[kind + '/python'] / rows[kind + '/compiled']:.1f}x")
        print(f"surrogate vs simulator (compiled): {rows['simulate/compiled'] / rows['forward/compiled']:.2f}x")
    else:
        print("compiled extension not available; build it with `python setup.py build_ext --inplace`")
    print(json.dumps({k: round(v, 3) for k, v in rows.items()}, sort_keys=True))


if __name__ == "__main__":
    main()
