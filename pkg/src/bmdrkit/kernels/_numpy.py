"""Pure-numpy reference implementations of the hot kernels."""

import numpy as np

TANH_CLIP = 1.0 - 1e-12
TINY = 1e-300


def kbest_search(ybar, R, amps, sizes, K):
    """Breadth-first K-best search on ``ybar = R x + n`` for a batch.

    Levels are visited from ``L-1`` down to ``0``. Children of survivor ``p``
    with alphabet index ``a`` get candidate number ``p * A_l + a``; the ``K``
    smallest accumulated distances are kept, ties resolved by candidate
    number.

    Returns ``(paths, metrics)`` with ``paths`` of shape ``(B, P, L)``
    holding alphabet indices and ``metrics`` of shape ``(B, P)`` sorted
    ascending, ``P = min(K, prod(sizes))``.
    """
    B, L = ybar.shape
    P = 1
    xs = np.zeros((B, 1, L))
    idx = np.zeros((B, 1, L), dtype=np.int64)
    metric = np.zeros((B, 1))
    for lev in range(L - 1, -1, -1):
        A = int(sizes[lev])
        alph = amps[lev, :A]
        if lev + 1 < L:
            interf = xs[:, :, lev + 1:] @ R[lev, lev + 1:]
        else:
            interf = np.zeros((B, P))
        resid = (ybar[:, lev, None] - interf)[:, :, None] - R[lev, lev] * alph[None, None, :]
        cand = (metric[:, :, None] + resid * resid).reshape(B, P * A)
        keep = min(K, P * A)
        order = np.argsort(cand, axis=1, kind="stable")[:, :keep]
        parent = order // A
        sym = order % A
        xs = np.take_along_axis(xs, parent[:, :, None], axis=1)
        idx = np.take_along_axis(idx, parent[:, :, None], axis=1)
        xs[:, :, lev] = alph[sym]
        idx[:, :, lev] = sym
        metric = np.take_along_axis(cand, order, axis=1)
        P = keep
    return idx, metric


def bp_decode(llr, check_ptr, edge_var, var_ptr, var_edges, max_iters):
    """Flooding sum-product decoding; returns ``(bits, converged, iters)``.

    Edges are stored check-major: edges ``check_ptr[c]:check_ptr[c+1]``
    belong to check ``c`` and ``edge_var[e]`` is the variable of edge ``e``.
    ``var_edges[var_ptr[v]:var_ptr[v+1]]`` lists the edges of variable ``v``.
    LLR sign convention: positive favours bit 1.
    """
    n = llr.shape[0]
    n_checks = check_ptr.shape[0] - 1
    E = edge_var.shape[0]
    c2v = np.zeros(E)
    deg_c = np.diff(check_ptr)
    check_of_edge = np.repeat(np.arange(n_checks), deg_c)
    starts = check_ptr[:-1]
    bits = (llr > 0).astype(np.int8)
    for it in range(1, max_iters + 1):
        total = llr + np.bincount(edge_var, weights=c2v, minlength=n)
        v2c = total[edge_var] - c2v
        t = np.tanh(0.5 * v2c)
        neg = t < 0
        logabs = np.log(np.maximum(np.abs(t), TINY))
        sum_log = np.add.reduceat(logabs, starts)
        n_neg = np.add.reduceat(neg.astype(np.int64), starts)
        ex_log = sum_log[check_of_edge] - logabs
        ex_neg = n_neg[check_of_edge] - neg
        mag = np.minimum(np.exp(ex_log), TANH_CLIP)
        # positive (bit 1) iff an odd number of the other edges lean to 1
        ex_pos = deg_c[check_of_edge] - 1 - ex_neg
        prod = np.where(ex_pos % 2 == 1, mag, -mag)
        c2v = 2.0 * np.arctanh(prod)
        post = llr + np.bincount(edge_var, weights=c2v, minlength=n)
        bits = (post > 0).astype(np.int8)
        synd = np.add.reduceat(bits[edge_var].astype(np.int64), starts) % 2
        if not synd.any():
            return bits, True, it
    return bits, False, max_iters
