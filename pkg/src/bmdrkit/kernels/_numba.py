"""Numba-compiled versions of the hot kernels.

Semantics match :mod:`bmdrkit.kernels._numpy`; floating-point summation
order may differ in the last bits.
"""

import numpy as np
from numba import njit

TANH_CLIP = 1.0 - 1e-12
TINY = 1e-300


@njit(cache=True)
def _kbest_one(y, R, amps, sizes, K, P_final, out_idx, out_metric,
               xs, idx, metric, new_xs, new_idx, cand):
    L = y.shape[0]
    metric[0] = 0.0
    for j in range(L):
        xs[0, j] = 0.0
        idx[0, j] = 0
    P = 1
    for lev in range(L - 1, -1, -1):
        A = sizes[lev]
        rll = R[lev, lev]
        n_c = 0
        for p in range(P):
            interf = 0.0
            for j in range(lev + 1, L):
                interf += R[lev, j] * xs[p, j]
            base = y[lev] - interf
            for a in range(A):
                r = base - rll * amps[lev, a]
                cand[n_c] = metric[p] + r * r
                n_c += 1
        keep = min(K, n_c)
        order = np.argsort(cand[:n_c], kind="mergesort")
        for q in range(keep):
            c = order[q]
            p = c // A
            a = c - p * A
            for j in range(L):
                new_xs[q, j] = xs[p, j]
                new_idx[q, j] = idx[p, j]
            new_xs[q, lev] = amps[lev, a]
            new_idx[q, lev] = a
        for q in range(keep):
            metric[q] = cand[order[q]]
            for j in range(L):
                xs[q, j] = new_xs[q, j]
                idx[q, j] = new_idx[q, j]
        P = keep
    for q in range(P_final):
        out_metric[q] = metric[q]
        for j in range(L):
            out_idx[q, j] = idx[q, j]


@njit(cache=True)
def _kbest_batch(ybar, R, amps, sizes, K, P_final):
    B, L = ybar.shape
    out_idx = np.zeros((B, P_final, L), dtype=np.int64)
    out_metric = np.zeros((B, P_final))
    W = min(K, P_final)
    xs = np.zeros((W, L))
    idx = np.zeros((W, L), dtype=np.int64)
    metric = np.zeros(W)
    new_xs = np.zeros((W, L))
    new_idx = np.zeros((W, L), dtype=np.int64)
    cand = np.empty(W * amps.shape[1])
    for b in range(B):
        _kbest_one(ybar[b], R, amps, sizes, K, P_final, out_idx[b], out_metric[b],
                   xs, idx, metric, new_xs, new_idx, cand)
    return out_idx, out_metric


def kbest_search(ybar, R, amps, sizes, K):
    total = 1
    for s in sizes:
        total = min(total * int(s), 1 << 62)
    P_final = int(min(K, total))
    return _kbest_batch(
        np.ascontiguousarray(ybar, dtype=np.float64),
        np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(amps, dtype=np.float64),
        np.ascontiguousarray(sizes, dtype=np.int64),
        int(K),
        P_final,
    )


@njit(cache=True)
def _bp(llr, check_ptr, edge_var, var_ptr, var_edges, max_iters):
    n = llr.shape[0]
    n_checks = check_ptr.shape[0] - 1
    E = edge_var.shape[0]
    c2v = np.zeros(E)
    v2c = np.zeros(E)
    absf = np.zeros(E)
    suffix = np.zeros(E)
    negf = np.zeros(E, dtype=np.int64)
    bits = np.zeros(n, dtype=np.int8)
    for v in range(n):
        bits[v] = 1 if llr[v] > 0 else 0
    for it in range(1, max_iters + 1):
        for v in range(n):
            tot = llr[v]
            for k in range(var_ptr[v], var_ptr[v + 1]):
                tot += c2v[var_edges[k]]
            for k in range(var_ptr[v], var_ptr[v + 1]):
                e = var_edges[k]
                v2c[e] = tot - c2v[e]
        for c in range(n_checks):
            lo, hi = check_ptr[c], check_ptr[c + 1]
            n_neg = 0
            for e in range(lo, hi):
                t = np.tanh(0.5 * v2c[e])
                if t < 0:
                    n_neg += 1
                    negf[e] = 1
                else:
                    negf[e] = 0
                absf[e] = max(abs(t), TINY)
            # exclusive products from prefix and suffix sweeps, no log/exp
            acc = 1.0
            for e in range(hi - 1, lo - 1, -1):
                suffix[e] = acc
                acc *= absf[e]
            deg = hi - lo
            acc = 1.0
            for e in range(lo, hi):
                mag = min(acc * suffix[e], TANH_CLIP)
                acc *= absf[e]
                if (deg - 1 - (n_neg - negf[e])) % 2 == 0:
                    mag = -mag
                c2v[e] = 2.0 * np.arctanh(mag)
        for v in range(n):
            tot = llr[v]
            for k in range(var_ptr[v], var_ptr[v + 1]):
                tot += c2v[var_edges[k]]
            bits[v] = 1 if tot > 0 else 0
        ok = True
        for c in range(n_checks):
            par = 0
            for e in range(check_ptr[c], check_ptr[c + 1]):
                par ^= bits[edge_var[e]]
            if par != 0:
                ok = False
                break
        if ok:
            return bits, True, it
    return bits, False, max_iters


def bp_decode(llr, check_ptr, edge_var, var_ptr, var_edges, max_iters):
    bits, ok, it = _bp(
        np.ascontiguousarray(llr, dtype=np.float64),
        check_ptr, edge_var, var_ptr, var_edges, int(max_iters),
    )
    return bits, bool(ok), int(it)
