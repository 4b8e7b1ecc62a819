# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Semantics must match ``_pycore.py`` exactly."""

from libc.math cimport exp, log1p, tanh, fabs
from libc.stdlib cimport malloc, free

import numpy as np

cdef int MOV = 8


cdef inline bint _is_arith(int op) nogil:
    return op <= 7 or op == 11


def simulate_block(ops, dst, s0, s1, latency, port_mask, int dispatch_width,
                   int retire_width, int rob_size, int iterations, bint fuse=False,
                   bint in_order=False):
    cdef int n = len(ops)
    cdef long total_max = <long>n * iterations
    cdef int i, k, nop, mdest, msrc, op, s, free_ports
    cdef long j, total, idx, head, tail, t, c, r, kk, pa, pb
    cdef int bop[16]
    cdef int bdst[16]
    cdef int bs0[16]
    cdef int bs1[16]
    cdef int lat_t[12]
    cdef int pm_t[12]
    cdef int last_writer[16]
    cdef int used
    if n < 1 or n > 16:
        raise ValueError("block length must be in 1..16")
    for i in range(n):
        bop[i] = ops[i]
        bdst[i] = dst[i]
        bs0[i] = s0[i]
        bs1[i] = s1[i]
    for i in range(12):
        lat_t[i] = latency[i]
        pm_t[i] = port_mask[i]
    for i in range(16):
        last_writer[i] = -1

    cdef int* lat = <int*>malloc(total_max * sizeof(int))
    cdef int* pm = <int*>malloc(total_max * sizeof(int))
    cdef int* sa = <int*>malloc(total_max * sizeof(int))
    cdef int* sb = <int*>malloc(total_max * sizeof(int))
    cdef int* d0 = <int*>malloc(total_max * sizeof(int))
    cdef int* d1 = <int*>malloc(total_max * sizeof(int))
    cdef long* prod_a = <long*>malloc(total_max * sizeof(long))
    cdef long* prod_b = <long*>malloc(total_max * sizeof(long))
    cdef long* disp = <long*>malloc(total_max * sizeof(long))
    cdef long* comp = <long*>malloc(total_max * sizeof(long))
    if not (lat and pm and sa and sb and d0 and d1 and prod_a and prod_b and disp and comp):
        free(lat); free(pm); free(sa); free(sb); free(d0); free(d1)
        free(prod_a); free(prod_b); free(disp); free(comp)
        raise MemoryError()

    try:
        with nogil:
            total = 0
            j = 0
            while j < total_max:
                i = j % n
                op = bop[i]
                if fuse and op == MOV and j + 1 < total_max:
                    k = (j + 1) % n
                    nop = bop[k]
                    mdest = bdst[i]
                    if _is_arith(nop) and (bs0[k] == mdest or bs1[k] == mdest):
                        msrc = bs0[i]
                        lat[total] = lat_t[nop]
                        pm[total] = pm_t[nop]
                        sa[total] = msrc if bs0[k] == mdest else bs0[k]
                        sb[total] = msrc if bs1[k] == mdest else bs1[k]
                        d0[total] = bdst[k]
                        d1[total] = mdest if mdest != bdst[k] else -1
                        total += 1
                        j += 2
                        continue
                lat[total] = lat_t[op]
                pm[total] = pm_t[op]
                sa[total] = bs0[i]
                sb[total] = bs1[i]
                d0[total] = bdst[i]
                d1[total] = -1
                total += 1
                j += 1

            for idx in range(total):
                comp[idx] = -1
            head = 0
            tail = 0
            t = 0
            while True:
                r = 0
                while r < retire_width and head < tail:
                    c = comp[head]
                    if c < 0 or c > t:
                        break
                    head += 1
                    r += 1
                if head == total:
                    break
                used = 0
                for idx in range(head, tail):
                    if comp[idx] >= 0:
                        continue
                    pa = prod_a[idx]
                    pb = prod_b[idx]
                    free_ports = pm[idx] & ~used
                    if (disp[idx] >= t or free_ports == 0
                            or (pa >= 0 and (comp[pa] < 0 or comp[pa] > t))
                            or (pb >= 0 and (comp[pb] < 0 or comp[pb] > t))):
                        if in_order:
                            break
                        continue
                    used = used | (free_ports & -free_ports)
                    comp[idx] = t + lat[idx]
                    if used == 7:
                        break
                kk = 0
                while kk < dispatch_width and tail < total and tail - head < rob_size:
                    s = sa[tail]
                    prod_a[tail] = last_writer[s] if s >= 0 else -1
                    s = sb[tail]
                    prod_b[tail] = last_writer[s] if s >= 0 else -1
                    if d0[tail] >= 0:
                        last_writer[d0[tail]] = tail
                    if d1[tail] >= 0:
                        last_writer[d1[tail]] = tail
                    disp[tail] = t
                    tail += 1
                    kk += 1
                t += 1
        return t + 1
    finally:
        free(lat); free(pm); free(sa); free(sb); free(d0); free(d1)
        free(prod_a); free(prod_b); free(disp); free(comp)


cdef inline double _act(double x, int act) nogil:
    if act == 0:
        return x if x > 0.0 else 0.0
    return tanh(x)


def forward_block(ops, dst, s0, s1, param_rows, double[:, ::1] embed_w,
                  double[::1] embed_b, layers, double[:, ::1] out_w,
                  double[::1] out_b, int act):
    cdef int n = len(ops)
    cdef int width = embed_w.shape[1]
    cdef int i, q, a, c
    cdef int op, d, r0, r1
    cdef double pos, h, z
    cdef double[:, ::1] prow
    cdef bint has_params = param_rows is not None
    cdef int n_param = embed_w.shape[0] - 45
    if has_params:
        prow = param_rows
    cdef double[::1] pooled = np.zeros(width)
    for i in range(n):
        op = ops[i]
        d = dst[i]
        r0 = s0[i]
        r1 = s1[i]
        pos = i / 15.0
        for q in range(width):
            h = embed_b[q] + embed_w[op, q] + embed_w[28 + r0, q] + embed_w[44, q] * pos
            if d >= 0:
                h += embed_w[12 + d, q]
            if r1 >= 0:
                h += embed_w[28 + r1, q]
            if has_params:
                for a in range(n_param):
                    h += prow[i, a] * embed_w[45 + a, q]
            pooled[q] += _act(h, act)
    cdef double[::1] x = pooled
    cdef double[::1] y
    cdef double[:, ::1] W
    cdef double[::1] b
    for layer in layers:
        W = layer[0]
        b = layer[1]
        y = np.empty(W.shape[1])
        for c in range(W.shape[1]):
            h = b[c]
            for a in range(W.shape[0]):
                h += x[a] * W[a, c]
            y[c] = _act(h, act)
        x = y
    z = out_b[0]
    for a in range(x.shape[0]):
        z += x[a] * out_w[a, 0]
    return (z if z > 0.0 else 0.0) + log1p(exp(-fabs(z)))


cdef class ForwardModel:
    """``forward_block`` with the weights unpacked once and scratch buffers reused."""

    cdef double[:, ::1] ew
    cdef double[::1] eb
    cdef double[::1] lw
    cdef double[::1] lb
    cdef double[::1] ow
    cdef double ob
    cdef int[::1] dims
    cdef int nl, act, n_param
    cdef double[::1] buf_a
    cdef double[::1] buf_b

    def __init__(self, embed_w, embed_b, layers, out_w, out_b, int act):
        self.ew = np.ascontiguousarray(embed_w, dtype=np.float64)
        self.eb = np.ascontiguousarray(embed_b, dtype=np.float64)
        self.nl = len(layers)
        dims = [self.ew.shape[1]] + [int(np.shape(W)[1]) for W, _ in layers]
        self.dims = np.array(dims, dtype=np.intc)
        self.lw = np.concatenate([np.ravel(W) for W, _ in layers] + [np.zeros(0)]).astype(np.float64)
        self.lb = np.concatenate([np.ravel(b) for _, b in layers] + [np.zeros(0)]).astype(np.float64)
        self.ow = np.ascontiguousarray(np.ravel(out_w), dtype=np.float64)
        self.ob = float(np.ravel(out_b)[0])
        self.act = act
        self.n_param = self.ew.shape[0] - 45
        self.buf_a = np.zeros(max(dims))
        self.buf_b = np.zeros(max(dims))

    def __call__(self, ops, dst, s0, s1, param_rows=None):
        cdef int n = len(ops)
        cdef int width = self.ew.shape[1]
        cdef int i, q, a, c, l, fan_in, fan_out
        cdef long woff = 0, boff = 0
        cdef int op, d, r0, r1
        cdef double pos, h, z
        cdef double[:, ::1] prow
        cdef bint has_params = param_rows is not None
        cdef double[::1] x = self.buf_a
        cdef double[::1] y = self.buf_b
        cdef double[::1] tmp
        if has_params:
            prow = param_rows
        for q in range(width):
            x[q] = 0.0
        for i in range(n):
            op = ops[i]
            d = dst[i]
            r0 = s0[i]
            r1 = s1[i]
            pos = i / 15.0
            for q in range(width):
                h = self.eb[q] + self.ew[op, q] + self.ew[28 + r0, q] + self.ew[44, q] * pos
                if d >= 0:
                    h += self.ew[12 + d, q]
                if r1 >= 0:
                    h += self.ew[28 + r1, q]
                if has_params:
                    for a in range(self.n_param):
                        h += prow[i, a] * self.ew[45 + a, q]
                x[q] += _act(h, self.act)
        for l in range(self.nl):
            fan_in = self.dims[l]
            fan_out = self.dims[l + 1]
            for c in range(fan_out):
                h = self.lb[boff + c]
                for a in range(fan_in):
                    h += x[a] * self.lw[woff + a * fan_out + c]
                y[c] = _act(h, self.act)
            woff += fan_in * fan_out
            boff += fan_out
            tmp = x
            x = y
            y = tmp
        z = self.ob
        for a in range(self.dims[self.nl]):
            z += x[a] * self.ow[a]
        return (z if z > 0.0 else 0.0) + log1p(exp(-fabs(z)))
