"""Toy instruction set, basic blocks, block sampling and dataset files.

Block text grammar: instructions separated by ``;``, each written as
``OPC [Rd,] Rs1 [, Rs2]``, e.g. ``ADD R1, R2, R3; STORE R1, R4``.
"""

from __future__ import annotations

import enum
import json
import math
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .rng import SplitMix64, np_rng

N_REGS = 16
MAX_BLOCK_LEN = 16


class Opcode(enum.IntEnum):
    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3
    AND = 4
    OR = 5
    XOR = 6
    SHL = 7
    MOV = 8
    LOAD = 9
    STORE = 10
    CMP = 11

    @property
    def arity(self) -> int:
        return 1 if self in (Opcode.MOV, Opcode.LOAD) else 2

    @property
    def has_dest(self) -> bool:
        return self not in (Opcode.STORE, Opcode.CMP)

    @property
    def is_arithmetic(self) -> bool:
        return self <= Opcode.SHL or self is Opcode.CMP


N_OPCODES = len(Opcode)


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DatasetSchemaError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    dest: Optional[int]
    srcs: tuple

    def __post_init__(self):
        op = Opcode(self.opcode)
        object.__setattr__(self, "opcode", op)
        object.__setattr__(self, "srcs", tuple(int(s) for s in self.srcs))
        if (self.dest is not None) != op.has_dest:
            raise ValueError(f"{op.name}: destination must be {'present' if op.has_dest else 'absent'}")
        if len(self.srcs) != op.arity:
            raise ValueError(f"{op.name} takes {op.arity} source(s), got {len(self.srcs)}")
        regs = self.srcs + ((self.dest,) if self.dest is not None else ())
        if any(not 0 <= r < N_REGS for r in regs):
            raise ValueError(f"register index out of range in {regs}")

    def __str__(self) -> str:
        regs = ([self.dest] if self.dest is not None else []) + list(self.srcs)
        return self.opcode.name + " " + ", ".join(f"R{r}" for r in regs)


@dataclass(frozen=True)
class BasicBlock:
    instructions: tuple

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if not 1 <= len(self.instructions) <= MAX_BLOCK_LEN:
            raise ValueError(f"block length must be in 1..{MAX_BLOCK_LEN}, got {len(self.instructions)}")

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    @cached_property
    def columns(self) -> tuple:
        """(opcodes, dests, src0s, src1s) as int lists; missing operands are -1."""
        ops, dst, s0, s1 = [], [], [], []
        for ins in self.instructions:
            ops.append(int(ins.opcode))
            dst.append(-1 if ins.dest is None else ins.dest)
            s0.append(ins.srcs[0])
            s1.append(ins.srcs[1] if len(ins.srcs) > 1 else -1)
        return ops, dst, s0, s1

    def __str__(self) -> str:
        return serialize_block(self)


def ins(op: str, *regs: int) -> Instruction:
    """Shorthand constructor: ``ins("ADD", 1, 2, 3)`` is ADD R1 <- R2, R3."""
    opcode = Opcode[op]
    if opcode.has_dest:
        return Instruction(opcode, regs[0], tuple(regs[1:]))
    return Instruction(opcode, None, tuple(regs))


def block(*instructions: Instruction) -> BasicBlock:
    return BasicBlock(tuple(instructions))


@dataclass(frozen=True)
class BlockGenConfig:
    min_len: int = 1
    max_len: int = 8
    opcode_weights: tuple = (3.0, 2.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.5, 2.5)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len <= MAX_BLOCK_LEN:
            raise ValueError("need 1 <= min_len <= max_len <= 16")
        if len(self.opcode_weights) != N_OPCODES:
            raise ValueError(f"need {N_OPCODES} opcode weights")
        if any(w < 0 for w in self.opcode_weights) or not any(w > 0 for w in self.opcode_weights):
            raise ValueError("opcode weights must be nonnegative with at least one positive")


def random_block(rng: SplitMix64, cfg: BlockGenConfig) -> BasicBlock:
    n = rng.randint(cfg.min_len, cfg.max_len)
    out = []
    for _ in range(n):
        op = Opcode(rng.choice_weighted(cfg.opcode_weights))
        dest = rng.randbelow(N_REGS) if op.has_dest else None
        srcs = tuple(rng.randbelow(N_REGS) for _ in range(op.arity))
        out.append(Instruction(op, dest, srcs))
    return BasicBlock(tuple(out))


def random_blocks(count: int, cfg: BlockGenConfig) -> list:
    rng = SplitMix64(cfg.seed)
    return [random_block(rng, cfg) for _ in range(count)]


def serialize_block(b: BasicBlock) -> str:
    return "; ".join(str(i) for i in b.instructions)


_TOKEN = re.compile(r"\s*([A-Za-z]+)\s*")
_REG = re.compile(r"\s*[Rr](\d+)\s*")


def parse_block(text: str) -> BasicBlock:
    raw = text.encode()
    instructions = []
    pos = 0
    for chunk in text.split(";"):
        start = pos
        pos += len(chunk.encode()) + 1
        m = _TOKEN.match(chunk)
        if not m:
            raise ParseError("expected opcode", start)
        name = m.group(1).upper()
        if name not in Opcode.__members__:
            raise ParseError(f"unknown opcode {m.group(1)!r}", start + len(chunk[: m.start(1)].encode()))
        op = Opcode[name]
        regs = []
        rest = chunk[m.end():]
        offset = start + len(chunk[: m.end()].encode())
        if rest.strip():
            for part in rest.split(","):
                rm = _REG.fullmatch(part)
                if not rm:
                    raise ParseError(f"bad register operand {part.strip()!r}", offset)
                regs.append(int(rm.group(1)))
                offset += len(part.encode()) + 1
        want = op.arity + int(op.has_dest)
        if len(regs) != want:
            raise ParseError(f"{op.name} expects {want} operands, got {len(regs)}", start)
        try:
            instructions.append(ins(op.name, *regs))
        except ValueError as e:
            raise ParseError(str(e), start) from None
    if not raw.strip():
        raise ParseError("empty block", 0)
    try:
        return BasicBlock(tuple(instructions))
    except ValueError as e:
        raise ParseError(str(e), 0) from None


@dataclass(frozen=True)
class DatasetRecord:
    block: BasicBlock
    label: float
    params: Optional[tuple] = None

    def __post_init__(self):
        if not self.label > 0 or not math.isfinite(self.label):
            raise ValueError(f"label must be positive and finite, got {self.label}")
        if self.params is not None:
            object.__setattr__(self, "params", tuple(int(v) for v in self.params))

    def to_json(self) -> str:
        obj = {
            "block": serialize_block(self.block),
            "params": list(self.params) if self.params is not None else None,
            "label": self.label,
        }
        return json.dumps(obj, sort_keys=True)


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    split_seed: int = 0
    indices: dict = field(default_factory=dict)


def write_dataset(records: Iterable[DatasetRecord], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r.to_json() + "\n")
    os.replace(tmp, path)


def read_dataset(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetSchemaError(f"invalid JSON ({e.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise DatasetSchemaError("record must be an object", lineno)
            for key in ("block", "label"):
                if key not in obj:
                    raise DatasetSchemaError(f"missing field {key!r}", lineno)
            try:
                out.append(DatasetRecord(parse_block(obj["block"]), float(obj["label"]), obj.get("params")))
            except (ValueError, TypeError) as e:
                raise DatasetSchemaError(str(e), lineno) from None
    return out


def split_dataset(records: Sequence, fractions=(0.8, 0.1, 0.1), split_seed: int = 0) -> DatasetSplit:
    if len(fractions) != 3:
        raise ValueError("expected three fractions (train, validation, test)")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    n = len(records)
    sizes = [int(math.floor(f * n + 1e-9)) for f in fractions]
    sizes[0] += n - sum(sizes)
    if any(s == 0 for s in sizes):
        raise ValueError(f"{n} records cannot fill {len(fractions)} nonempty splits {tuple(sizes)}")
    perm = np_rng(split_seed, "split").permutation(n)
    parts, start = [], 0
    for s in sizes:
        parts.append([int(i) for i in perm[start:start + s]])
        start += s
    return DatasetSplit(
        train=[records[i] for i in parts[0]],
        validation=[records[i] for i in parts[1]],
        test=[records[i] for i in parts[2]],
        split_seed=split_seed,
        indices={"train": parts[0], "validation": parts[1], "test": parts[2]},
    )


def subsample_indices(n: int, fraction: float, seed: int) -> list:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    k = max(1, math.ceil(fraction * n - 1e-9))
    if k >= n:
        return list(range(n))
    return sorted(int(i) for i in np_rng(seed, "subsample").permutation(n)[:k])


def subsample_fraction(records: Sequence, fraction: float, seed: int) -> list:
    return [records[i] for i in subsample_indices(len(records), fraction, seed)]
