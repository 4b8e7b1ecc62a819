"""``surrogate-kit`` command line.

Exit codes: 0 success, 1 validation error (bad flag, config, input file or
no qualifying width), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import BACKEND, nn
from .harness import DEFAULT_WARMUP, canonical_json, measure_throughput
from .isa import BlockGenConfig, DatasetRecord, parse_block, random_blocks, read_dataset, serialize_block, write_dataset
from .patterns import (
    AdaptationConfig, ConstructionConfig, OptimizationConfig, construct, generate_blocks, ground_truth_split,
    optimize_params, random_search_baseline, run_adaptation, run_compilation, sampled_construction, write_report,
)
from .rng import derive_seed, np_rng
from .simulator import (
    DEFAULT_ITERATIONS, default_frozen_mask, default_params, flatten_params, ground_truth, read_params,
    sample_params, sampling_bounds, throughput, write_params,
)
from .surrogate import NoQualifyingWidth, SurrogateCheckpoint, predict

CONFIG_KEYS = ("run_seed", "iterations", "widths", "threshold", "construction", "adaptation", "optimization")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


@dataclass
class RunConfig:
    run_seed: int = 0
    iterations: int = DEFAULT_ITERATIONS
    widths: Optional[tuple] = None
    threshold: float = 0.10
    construction: ConstructionConfig = field(default_factory=ConstructionConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    optimization: OptimizationConfig = field(default_factory=OptimizationConfig)

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise UsageError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.iterations < 1:
            raise UsageError("iterations must be >= 1")

    def to_dict(self) -> dict:
        return json.loads(canonical_json(asdict(self)))


# --- config -------------------------------------------------------------------

def load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed config {p}: {e.msg} at line {e.lineno}") from None
    if not isinstance(d, dict):
        raise UsageError(f"config {p} must hold a JSON object")
    unknown = sorted(set(d) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys {unknown}; allowed: {list(CONFIG_KEYS)}")
    return d


def _apply(obj, section: dict, where: str):
    names = {f.name for f in fields(obj)}
    bad = sorted(set(section) - names)
    if bad:
        raise UsageError(f"unknown keys {bad} in config section {where!r}")
    return replace(obj, **section)


def _construction(section: dict, sampled: bool) -> ConstructionConfig:
    section = dict(section)
    if section.get("label_source") == "simulator_sampled_params":
        sampled = True
    base = sampled_construction() if sampled else ConstructionConfig()
    train = _apply(base.train, section.pop("train", {}), "construction.train")
    model = _apply(base.model, section.pop("model", {}), "construction.model")
    for k in ("split_fractions", "capacity_widths"):
        if isinstance(section.get(k), list):
            section[k] = tuple(section[k])
    return _apply(base, {**section, "train": train, "model": model}, "construction")


def resolve_config(args) -> RunConfig:
    """Built-in defaults, then the --config file, then flags."""
    d = load_config_file(getattr(args, "config", None))
    sampled = getattr(args, "label_source", None) == "sampled"
    cons = _construction(d.get("construction", {}), sampled)
    adapt_d = dict(d.get("adaptation", {}))
    adapt_base = AdaptationConfig()
    adapt_train = _apply(adapt_base.train, adapt_d.pop("train", {}), "adaptation.train")
    adapt = _apply(adapt_base, {**adapt_d, "train": adapt_train}, "adaptation")
    opt = _apply(OptimizationConfig(), d.get("optimization", {}), "optimization")
    run_seed = d.get("run_seed", cons.run_seed)
    iterations = d.get("iterations", DEFAULT_ITERATIONS)
    widths = d.get("widths")
    threshold = d.get("threshold", 0.10)

    a = vars(args)
    if a.get("seed") is not None:
        run_seed = a["seed"]
    if a.get("iterations") is not None:
        iterations = a["iterations"]
    if a.get("widths") is not None:
        widths = a["widths"]
    if a.get("threshold") is not None:
        threshold = a["threshold"]
    cons = replace(cons, run_seed=run_seed, iterations=iterations)
    if a.get("count") is not None and a.get("command") in ("train", "capacity-search", "adapt", "optimize-params"):
        cons = replace(cons, n_blocks=a["count"])
    if a.get("epochs") is not None:
        if a.get("command") == "adapt":
            adapt = replace(adapt, train=replace(adapt.train, epochs=a["epochs"]))
        else:
            cons = replace(cons, train=replace(cons.train, epochs=a["epochs"]))
    if a.get("fraction") is not None:
        adapt = replace(adapt, fractions=tuple(a["fraction"]))
    if a.get("seeds_per_fraction") is not None:
        adapt = replace(adapt, seeds_per_fraction=a["seeds_per_fraction"])
    if a.get("steps") is not None:
        opt = replace(opt, steps=a["steps"])
    if a.get("lr") is not None:
        opt = replace(opt, learning_rate=a["lr"])
    if a.get("budget") is not None:
        opt = replace(opt, budget=a["budget"])
    if a.get("latencies_only"):
        opt = replace(opt, free_globals=False)
    opt = replace(opt, seed=run_seed)
    if widths is not None:
        widths = tuple(int(w) for w in widths)
        cons = replace(cons, capacity_widths=widths, threshold=threshold)
    return RunConfig(run_seed, iterations, widths, threshold, cons, adapt, opt)


def _int_list(text: str) -> list:
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or any(w < 1 for w in out):
        raise argparse.ArgumentTypeError("widths must be positive integers")
    return out


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --- helpers ------------------------------------------------------------------

def _out_dir(args, default: str) -> Path:
    out = Path(args.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint(path) -> SurrogateCheckpoint:
    if path is None:
        raise UsageError("--checkpoint is required (produce one with `surrogate-kit train`)")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint {p} not found; run `surrogate-kit train --out-dir ...` first")
    return SurrogateCheckpoint.load(p)


def read_blocks(path) -> list:
    """Blocks from a gen-data file or a labelled dataset (labels ignored)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"blocks file {p} not found")
    out = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(parse_block(json.loads(line)["block"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise UsageError(f"{p}:{lineno}: not a block record ({e})") from None
    return out


def _finish(report: dict, out: Optional[Path]) -> int:
    if out is not None:
        write_report(report, out / "report.json")
    print(canonical_json(report))
    return 0


def _eval_blocks(cfg: RunConfig, count: int) -> list:
    c = cfg.construction
    gen = BlockGenConfig(c.min_len, c.max_len, seed=derive_seed(cfg.run_seed, "eval-blocks"))
    return random_blocks(count, gen)


# --- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    c = cfg.construction
    gen = BlockGenConfig(args.min_len or c.min_len, args.max_len or c.max_len, seed=derive_seed(cfg.run_seed, "blocks"))
    count = args.count if args.count is not None else c.n_blocks
    blocks = random_blocks(count, gen)
    out = Path(args.out) if args.out else _out_dir(args, "runs/gen-data") / "blocks.jsonl"
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text("".join(json.dumps({"block": serialize_block(b)}) + "\n" for b in blocks))
    tmp.replace(out)
    print(canonical_json({"command": "gen-data", "config": {"seed": cfg.run_seed, "count": count,
                                                           "min_len": gen.min_len, "max_len": gen.max_len},
                          "output": str(out)}))
    return 0


def cmd_label(args) -> int:
    cfg = resolve_config(args)
    blocks = read_blocks(args.blocks)
    if args.source == "ground-truth":
        records = [DatasetRecord(b, ground_truth(b)) for b in blocks]
    elif args.source == "simulator":
        p = read_params(args.params) if args.params else default_params()
        records = [DatasetRecord(b, throughput(b, p, cfg.iterations)) for b in blocks]
    else:
        rng = np_rng(cfg.run_seed, "label-samples")
        frozen, box = default_frozen_mask(True), sampling_bounds()
        records = []
        for b in blocks:
            for _ in range(args.samples_per_block):
                p = sample_params(rng, frozen, box)
                records.append(DatasetRecord(b, throughput(b, p, cfg.iterations),
                                             tuple(int(v) for v in flatten_params(p))))
    out = Path(args.out) if args.out else _out_dir(args, "runs/label") / "dataset.jsonl"
    write_dataset(records, out)
    print(canonical_json({"command": "label", "config": {"source": args.source, "seed": cfg.run_seed,
                                                        "iterations": cfg.iterations, "params": args.params},
                          "n_records": len(records), "output": str(out)}))
    return 0


def _log_epoch(e):
    print(f"epoch {e['epoch']:4d}  train {e['train_loss']:.4f}  val {e['val_loss']:.4f}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "runs/train")
    cons = replace(cfg.construction, capacity_widths=None)
    _, report, _ = construct(cons, out, log=_log_epoch if args.verbose else None)
    report["effective_config"] = cfg.to_dict()
    return _finish(report, out)


def cmd_capacity_search(args) -> int:
    cfg = resolve_config(args)
    if not cfg.widths:
        raise UsageError("capacity-search needs --widths (e.g. --widths 64,32,16)")
    out = _out_dir(args, "runs/capacity-search")
    try:
        _, report, _ = construct(cfg.construction, out)
    except NoQualifyingWidth as e:
        for row in getattr(e, "table", []):
            print(f"width {row['width']:5d}  val_mape {row['val_mape']:.4f}", file=sys.stderr)
        raise
    report["effective_config"] = cfg.to_dict()
    report["chosen_width"] = report["model"]["embed_width"]
    return _finish(report, out)


def cmd_compile_eval(args) -> int:
    cfg = resolve_config(args)
    ckpt = _load_checkpoint(args.checkpoint)
    out = _out_dir(args, "runs/compile-eval")
    blocks = _eval_blocks(cfg, args.count)
    report = run_compilation(ckpt, blocks, cfg.iterations, args.warmup)
    report["effective_config"] = {**cfg.to_dict(), "count": args.count, "warmup": args.warmup,
                                  "checkpoint": str(args.checkpoint), "backend": BACKEND}
    return _finish(report, out)


def cmd_adapt(args) -> int:
    cfg = resolve_config(args)
    ckpt = _load_checkpoint(args.checkpoint)
    out = _out_dir(args, "runs/adapt")
    blocks = generate_blocks(cfg.construction)
    gt = ground_truth_split(blocks, cfg.run_seed, cfg.construction.split_fractions)
    log = (lambda r: print(canonical_json(r).replace("\n", " "), file=sys.stderr)) if args.verbose else None
    report = run_adaptation(ckpt, gt, cfg.adaptation, cfg.run_seed, log=log)
    report["effective_config"] = {**cfg.to_dict(), "checkpoint": str(args.checkpoint)}
    return _finish(report, out)


def cmd_optimize_params(args) -> int:
    cfg = resolve_config(args)
    ckpt = _load_checkpoint(args.checkpoint)
    out = _out_dir(args, "runs/optimize-params")
    blocks = generate_blocks(cfg.construction)
    gt = ground_truth_split(blocks, cfg.run_seed, cfg.construction.split_fractions)
    _, report = optimize_params(ckpt, gt.train, gt.test, cfg.optimization, out)
    if not args.no_baseline:
        best, rs = random_search_baseline(gt.train, gt.test, cfg.optimization.budget, cfg.run_seed,
                                          cfg.optimization.free_globals)
        write_params(best, out / "random_search.params")
        report["random_search"] = rs["metrics"]
        report["random_search"]["params"] = rs["params"]
    report["effective_config"] = {**cfg.to_dict(), "checkpoint": str(args.checkpoint)}
    return _finish(report, out)


def cmd_eval_params(args) -> int:
    cfg = resolve_config(args)
    if args.params in (None, "default"):
        p, src = default_params(), "default"
    else:
        if not Path(args.params).exists():
            raise FileNotFoundError(f"params file {args.params} not found")
        p, src = read_params(args.params), str(args.params)
    if args.data is None:
        raise UsageError("--data is required (a labelled dataset from `surrogate-kit label`)")
    records = read_dataset(args.data)
    if not records:
        raise UsageError(f"dataset {args.data} is empty")
    preds = [throughput(r.block, p, cfg.iterations) for r in records]
    report = {
        "command": "eval-params",
        "effective_config": {"params": src, "data": str(args.data), "iterations": cfg.iterations},
        "n": len(records),
        "metrics": {"mape": nn.mean_mape(preds, [r.label for r in records])},
    }
    return _finish(report, Path(args.out_dir) if args.out_dir else None)


def _time_process(argv: list) -> float:
    t0 = time.perf_counter()
    subprocess.run(argv, check=True, stdout=subprocess.DEVNULL)
    return time.perf_counter() - t0


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "runs/bench")
    blocks = _eval_blocks(cfg, args.count)
    p = default_params()
    ckpt = _load_checkpoint(args.checkpoint) if args.checkpoint else None
    report = {"command": "bench", "mode": args.mode, "backend": BACKEND,
              "effective_config": {**cfg.to_dict(), "count": args.count, "warmup": args.warmup,
                                   "checkpoint": args.checkpoint}}
    if args.mode == "in-process":
        sim = measure_throughput(lambda b: throughput(b, p, cfg.iterations), blocks, args.warmup)
        report["simulator"] = asdict(sim)
        if ckpt is not None:
            sur = measure_throughput(lambda b: predict(ckpt, b), blocks, args.warmup)
            report["surrogate"] = asdict(sur)
            report["speedup"] = sur.blocks_per_second / sim.blocks_per_second
    else:
        # whole-process timing: invocation to exit, including interpreter start-up
        path = out / "bench_blocks.jsonl"
        path.write_text("".join(json.dumps({"block": serialize_block(b)}) + "\n" for b in blocks))
        base = [sys.executable, "-m", "surrogate_kit.cli", "run-blocks", "--blocks", str(path),
                "--iterations", str(cfg.iterations)]
        sim_s = _time_process(base + ["--what", "simulator"])
        report["simulator"] = {"wall_seconds": sim_s, "blocks_per_second": len(blocks) / sim_s}
        if ckpt is not None:
            sur_s = _time_process(base + ["--what", "surrogate", "--checkpoint", str(args.checkpoint)])
            report["surrogate"] = {"wall_seconds": sur_s, "blocks_per_second": len(blocks) / sur_s}
            report["speedup"] = sim_s / sur_s
    return _finish(report, out)


def cmd_run_blocks(args) -> int:
    blocks = read_blocks(args.blocks)
    if args.what == "simulator":
        p = default_params()
        preds = [throughput(b, p, args.iterations) for b in blocks]
    else:
        ckpt = _load_checkpoint(args.checkpoint)
        preds = [predict(ckpt, b) for b in blocks]
    for v in preds:
        sys.stdout.write(f"{v:.6f}\n")
    return 0


def cmd_report(args) -> int:
    rendered, plotted = [], False
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"report {p} not found")
        if p.suffix == ".jsonl":
            rows = [json.loads(line) for line in p.read_text().splitlines() if line.strip()]
            rendered.append(render_train_table(rows))
            series = {"train": [(r["epoch"], r["train_loss"]) for r in rows],
                      "validation": [(r["epoch"], r["val_loss"]) for r in rows]}
            xlabel, logx = "epoch", False
        else:
            rep = json.loads(p.read_text())
            rendered.append(render_table(rep))
            series, xlabel, logx = _report_series(rep)
        if args.svg and series and not plotted:
            plotted = True
            Path(args.svg).write_text(svg_line_plot(series, xlabel=xlabel, ylabel="MAPE", logx=logx))
    print("\n\n".join(rendered))
    return 0


# --- rendering ----------------------------------------------------------------

def _flat(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flat(v, key + ".")
        elif not isinstance(v, list):
            yield key, v


def render_table(report: dict) -> str:
    title = report.get("pattern") or report.get("command") or "report"
    lines = [f"== {title} =="]
    metrics = report.get("metrics", {})
    curve = metrics.get("curve") if isinstance(metrics, dict) else None
    items = [(k, v) for k, v in _flat(metrics)]
    for key in ("simulator", "surrogate", "random_search"):
        if isinstance(report.get(key), dict):
            items += list(_flat(report[key], key + "."))
    if "speedup" in report:
        items.append(("speedup", report["speedup"]))
    width = max((len(k) for k, _ in items), default=0)
    for k, v in items:
        lines.append(f"{k:<{width}}  {v:.4f}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    if curve:
        lines.append("")
        lines.append(f"{'fraction':>9}  {'n_train':>7}  {'adapted':>8}  {'scratch':>8}")
        for r in curve:
            lines.append(f"{r['fraction']:>9.3f}  {r['n_train']:>7d}  {r['median_adapted_test_mape']:>8.4f}  "
                         f"{r['median_scratch_test_mape']:>8.4f}")
    if "capacity_table" in report:
        lines.append("")
        lines.append(f"{'width':>6}  {'val_mape':>8}  {'blocks/s':>10}")
        for r in report["capacity_table"]:
            lines.append(f"{r['width']:>6d}  {r['val_mape']:>8.4f}  {r['blocks_per_second']:>10.0f}")
    return "\n".join(lines)


def render_train_table(rows: list) -> str:
    lines = ["== training ==", f"{'epoch':>6}  {'train':>8}  {'val':>8}  {'test':>8}"]
    for r in rows:
        lines.append(f"{r['epoch']:>6d}  {r['train_loss']:>8.4f}  {r['val_loss']:>8.4f}  {r['test_loss']:>8.4f}")
    return "\n".join(lines)


def _report_series(rep: dict):
    curve = rep.get("metrics", {}).get("curve")
    if not curve:
        return {}, "", False
    series = {
        "adapted": [(r["fraction"], r["median_adapted_test_mape"]) for r in curve],
        "scratch": [(r["fraction"], r["median_scratch_test_mape"]) for r in curve],
    }
    sim = rep["metrics"].get("simulator_test_mape_vs_ground_truth")
    if sim is not None:
        series["simulator"] = [(curve[0]["fraction"], sim), (curve[-1]["fraction"], sim)]
    return series, "fraction of ground-truth training data", True


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def svg_line_plot(series: dict, xlabel: str = "", ylabel: str = "", logx: bool = False,
                  width: int = 560, height: int = 360) -> str:
    """Minimal standalone SVG line chart, one polyline per series."""
    pad_l, pad_r, pad_t, pad_b = 60, 110, 20, 45
    tx = (lambda x: np.log10(x)) if logx else (lambda x: x)
    xs = [tx(x) for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = 0.0, max(ys) * 1.05 or 1.0
    x1 = x1 if x1 > x0 else x0 + 1

    def px(x):
        return pad_l + (tx(x) - x0) / (x1 - x0) * (width - pad_l - pad_r)

    def py(y):
        return height - pad_b - (y - y0) / (y1 - y0) * (height - pad_t - pad_b)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" y2="{height - pad_b}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
    ]
    for i in range(5):
        y = y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{pad_l - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.3g}</text>')
    for x in sorted({x for pts in series.values() for x, _ in pts}):
        parts.append(f'<text x="{px(x):.1f}" y="{height - pad_b + 14}" text-anchor="middle">{x:g}</text>')
    parts.append(f'<text x="{(pad_l + width - pad_r) / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="14" y="{(pad_t + height - pad_b) / 2}" transform="rotate(-90 14 '
                 f'{(pad_t + height - pad_b) / 2})" text-anchor="middle">{ylabel}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = pad_t + 16 * i + 8
        parts.append(f'<line x1="{width - pad_r + 10}" y1="{ly}" x2="{width - pad_r + 30}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad_r + 35}" y="{ly + 4}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out-dir", help="directory for every output of the command")
    common.add_argument("--iterations", type=int, help=f"block iterations K (default {DEFAULT_ITERATIONS})")

    parser = _Parser(prog="surrogate-kit", description="Train, deploy and tune neural surrogates of a CPU simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate random basic blocks")
    p.add_argument("--count", type=int)
    p.add_argument("--min-len", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out", help="output JSONL path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label", parents=[common], help="label blocks with the simulator or ground truth")
    p.add_argument("--blocks", required=True)
    p.add_argument("--source", choices=("simulator", "ground-truth", "sampled"), default="simulator")
    p.add_argument("--params", help="params file for --source simulator (default parameters otherwise)")
    p.add_argument("--samples-per-block", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_label)

    for name, func, helptext in (("train", cmd_train, "train a surrogate of the simulator"),
                                 ("capacity-search", cmd_capacity_search, "pick the fastest width under a threshold")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--label-source", choices=("default", "sampled"),
                       help="'sampled' trains a parameter-conditioned surrogate for optimize-params")
        p.add_argument("--count", type=int, help="number of blocks")
        p.add_argument("--epochs", type=int)
        p.add_argument("--widths", type=_int_list, help="comma-separated widths, e.g. 64,32,16")
        p.add_argument("--threshold", type=float, help="validation MAPE threshold (default 0.10)")
        p.add_argument("--verbose", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("compile-eval", parents=[common], help="accuracy and speed of the surrogate vs the simulator")
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.set_defaults(func=cmd_compile_eval)

    p = sub.add_parser("adapt", parents=[common], help="fine-tune on ground truth vs train from scratch")
    p.add_argument("--checkpoint")
    p.add_argument("--fraction", type=_float_list, help="comma-separated fractions of the ground-truth train set")
    p.add_argument("--seeds-per-fraction", type=int)
    p.add_argument("--count", type=int, help="number of blocks")
    p.add_argument("--epochs", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("optimize-params", parents=[common], help="tune simulator parameters through the surrogate")
    p.add_argument("--checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--budget", type=int, help="random-search evaluations (default 200)")
    p.add_argument("--count", type=int, help="number of blocks")
    p.add_argument("--latencies-only", action="store_true", help="keep dispatch/retire width and ROB size fixed")
    p.add_argument("--no-baseline", action="store_true", help="skip the random-search baseline")
    p.set_defaults(func=cmd_optimize_params)

    p = sub.add_parser("eval-params", parents=[common], help="simulator MAPE of a params file on a labelled dataset")
    p.add_argument("--params", help="params file, or 'default'")
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval_params)

    p = sub.add_parser("bench", parents=[common], help="batch-size-1 throughput of simulator and surrogate")
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--mode", choices=("in-process", "process"), default="in-process")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run-blocks", help="evaluate a blocks file and print one prediction per line")
    p.add_argument("--blocks", required=True)
    p.add_argument("--what", choices=("simulator", "surrogate"), default="simulator")
    p.add_argument("--checkpoint")
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    p.set_defaults(func=cmd_run_blocks)

    p = sub.add_parser("report", help="render report files as tables (and optionally an SVG plot)")
    p.add_argument("reports", nargs="+", help="report.json or train_report.jsonl files")
    p.add_argument("--svg", help="write a line plot here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # --help, or a usage error reported by _Parser
        return e.code if isinstance(e.code, int) else 0
    try:
        return args.func(args)
    except NoQualifyingWidth as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e.strerror + ': ' + str(e.filename) if e.filename else e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
