"""Pure-Python kernels. Semantics must match ``_kernels.pyx`` exactly."""

import math

import numpy as np

MOV = 8
STORE = 10


def _is_arith(op):
    return op <= 7 or op == 11


def build_stream(ops, dst, s0, s1, latency, port_mask, iterations, fuse):
    """Unroll a block into per-dynamic-instruction columns, fusing MOV pairs if asked."""
    n = len(ops)
    total = n * iterations
    lat, pm, a, b, d0, d1 = [], [], [], [], [], []
    j = 0
    while j < total:
        i = j % n
        op = ops[i]
        if fuse and op == MOV and j + 1 < total:
            k = (j + 1) % n
            nop = ops[k]
            mdest = dst[i]
            if _is_arith(nop) and (s0[k] == mdest or s1[k] == mdest):
                msrc = s0[i]
                lat.append(latency[nop])
                pm.append(port_mask[nop])
                a.append(msrc if s0[k] == mdest else s0[k])
                b.append(msrc if s1[k] == mdest else s1[k])
                d0.append(dst[k])
                d1.append(mdest if mdest != dst[k] else -1)
                j += 2
                continue
        lat.append(latency[op])
        pm.append(port_mask[op])
        a.append(s0[i])
        b.append(s1[i])
        d0.append(dst[i])
        d1.append(-1)
        j += 1
    return lat, pm, a, b, d0, d1


def simulate_block(ops, dst, s0, s1, latency, port_mask, dispatch_width, retire_width,
                   rob_size, iterations, fuse=False, in_order=False):
    """Cycle count for ``iterations`` back-to-back copies of the block.

    With ``in_order`` the issue scan stops at the first buffered instruction
    that cannot issue; otherwise younger ready instructions may bypass it.
    """
    lat, pm, src_a, src_b, d0, d1 = build_stream(ops, dst, s0, s1, latency, port_mask, iterations, fuse)
    total = len(lat)
    last_writer = [-1] * 16
    prod_a = [-1] * total
    prod_b = [-1] * total
    dispatched_at = [0] * total
    completion = [-1] * total  # -1 means not yet issued
    head = 0  # oldest un-retired
    tail = 0  # next to dispatch
    t = 0
    while True:
        # retire
        r = 0
        while r < retire_width and head < tail:
            c = completion[head]
            if c < 0 or c > t:
                break
            head += 1
            r += 1
        if head == total:
            return t + 1
        # issue
        used = 0
        for idx in range(head, tail):
            if completion[idx] >= 0:
                continue
            p = prod_a[idx]
            q = prod_b[idx]
            free = pm[idx] & ~used
            if (dispatched_at[idx] >= t or not free
                    or (p >= 0 and (completion[p] < 0 or completion[p] > t))
                    or (q >= 0 and (completion[q] < 0 or completion[q] > t))):
                if in_order:
                    break
                continue
            used |= free & -free
            completion[idx] = t + lat[idx]
            if used == 7:
                # all ports taken; nothing else can issue this cycle
                break
        # dispatch
        k = 0
        while k < dispatch_width and tail < total and tail - head < rob_size:
            s = src_a[tail]
            prod_a[tail] = last_writer[s] if s >= 0 else -1
            s = src_b[tail]
            prod_b[tail] = last_writer[s] if s >= 0 else -1
            if d0[tail] >= 0:
                last_writer[d0[tail]] = tail
            if d1[tail] >= 0:
                last_writer[d1[tail]] = tail
            dispatched_at[tail] = t
            tail += 1
            k += 1
        t += 1


def forward_block(ops, dst, s0, s1, param_rows, embed_w, embed_b, layers, out_w, out_b, act):
    """Batch-1 surrogate forward pass using row gathers for the one-hot embedding.

    ``param_rows`` is None or an (n, 7) array of per-instruction param slices;
    ``layers`` is a list of (W, b); ``act`` is 0 for relu, 1 for tanh.
    """
    n = len(ops)
    ops = np.asarray(ops)
    dst = np.asarray(dst)
    s0 = np.asarray(s0)
    s1 = np.asarray(s1)
    pos = np.arange(n) / 15.0
    h = embed_b + embed_w[ops] + embed_w[28 + s0] + np.outer(pos, embed_w[44])
    h += np.where((dst >= 0)[:, None], embed_w[12 + np.maximum(dst, 0)], 0.0)
    h += np.where((s1 >= 0)[:, None], embed_w[28 + np.maximum(s1, 0)], 0.0)
    if param_rows is not None:
        h += param_rows @ embed_w[45:]
    x = (np.maximum(h, 0.0) if act == 0 else np.tanh(h)).sum(axis=0)
    for W, b in layers:
        x = x @ W + b
        x = np.maximum(x, 0.0) if act == 0 else np.tanh(x)
    z = float(x @ out_w[:, 0] + out_b[0])
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


class ForwardModel:
    """Callable wrapper around :func:`forward_block` with fixed weights."""

    def __init__(self, embed_w, embed_b, layers, out_w, out_b, act):
        self.weights = (embed_w, embed_b, layers, out_w, out_b, act)

    def __call__(self, ops, dst, s0, s1, param_rows=None):
        return forward_block(ops, dst, s0, s1, param_rows, *self.weights)
