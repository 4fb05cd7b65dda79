"""LDPC codes in alist form, GF(2) encoding, interleaving, BP decoding and
codeword-error-rate simulation over a fixed channel set.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.stats import binomtest

from . import kernels
from .bmdr import bmdr_set
from .errors import BudgetMismatch, EncodingSingular, InconsistentAdjacency, LengthMismatch, ParseError, ShapeMismatch

BP_MAX_ITERS = 50
BUILTIN_CODES = {"ldpc648": "ldpc_648_432.alist", "hamming74": "hamming_7_4.alist"}


def gf2_row_reduce(A, pivot_order=None):
    """Reduced row echelon form of a 0/1 matrix over GF(2).

    Columns are tried as pivots in ``pivot_order`` (default left to right).
    Returns ``(R, pivots)`` with the zero rows removed.
    """
    R = np.array(A, dtype=np.uint8) & 1
    rows, cols = R.shape
    order = range(cols) if pivot_order is None else pivot_order
    pivots = []
    r = 0
    for c in order:
        if r == rows:
            break
        hits = np.flatnonzero(R[r:, c]) + r
        if hits.size == 0:
            continue
        p = hits[0]
        if p != r:
            R[[r, p]] = R[[p, r]]
        others = np.flatnonzero(R[:, c])
        others = others[others != r]
        R[others] ^= R[r]
        pivots.append(c)
        r += 1
    return R[:r], pivots


def gf2_rank(A):
    return len(gf2_row_reduce(A)[1])


@dataclass(eq=False)
class ParityCheckMatrix:
    """Sparse parity-check matrix; ``rows[j]`` lists the variables in check ``j``."""

    n: int
    rows: tuple

    def __post_init__(self):
        self.rows = tuple(np.asarray(sorted(set(int(v) for v in r)), dtype=np.int64) for r in self.rows)
        for r in self.rows:
            if r.size and (r[0] < 0 or r[-1] >= self.n):
                raise InconsistentAdjacency("variable index out of range")
        cols = [[] for _ in range(self.n)]
        for j, r in enumerate(self.rows):
            for v in r:
                cols[v].append(j)
        self.cols = tuple(np.asarray(c, dtype=np.int64) for c in cols)
        # check-major edge layout shared with the decoding kernels
        deg = np.array([r.size for r in self.rows], dtype=np.int64)
        self.check_ptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
        self.edge_var = (np.concatenate(self.rows) if self.rows else np.zeros(0)).astype(np.int64)
        order = np.argsort(self.edge_var, kind="stable")
        self.var_edges = order.astype(np.int64)
        self.var_ptr = np.concatenate([[0], np.cumsum(np.bincount(self.edge_var, minlength=self.n))]).astype(np.int64)

    @property
    def n_checks(self):
        return len(self.rows)

    @functools.cached_property
    def dense(self):
        H = np.zeros((self.n_checks, self.n), dtype=np.uint8)
        for j, r in enumerate(self.rows):
            H[j, r] = 1
        return H

    @functools.cached_property
    def rank(self):
        return gf2_rank(self.dense)

    @property
    def k(self):
        return self.n - self.rank

    @classmethod
    def from_dense(cls, H):
        H = np.asarray(H)
        return cls(H.shape[1], tuple(np.flatnonzero(row) for row in H))

    def syndrome(self, c):
        c = np.asarray(c, dtype=np.int64)
        return np.add.reduceat(c[..., self.edge_var], self.check_ptr[:-1], axis=-1) % 2

    @functools.cached_property
    def _encoder(self):
        # prefer pivots at the right so codewords read [message | parity]
        R, pivots = gf2_row_reduce(self.dense, pivot_order=range(self.n - 1, -1, -1))
        info = np.setdiff1d(np.arange(self.n), pivots)
        if info.size == 0:
            raise EncodingSingular("code has no information positions")
        return np.asarray(pivots), info, R[:, info].astype(np.int64)


def _ints(line, lineno):
    try:
        return [int(t) for t in line.split()]
    except ValueError as exc:
        raise ParseError(f"line {lineno}: {exc}") from None


def parse_alist(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4:
        raise ParseError("alist needs at least four header lines")
    head = _ints(lines[0], 1)
    if len(head) != 2:
        raise ParseError("line 1: expected 'n m'")
    n, m = head
    col_w = _ints(lines[2], 3)
    row_w = _ints(lines[3], 4)
    if len(col_w) != n or len(row_w) != m:
        raise ParseError("weight lines do not match n and m")
    if len(lines) < 4 + n + m:
        raise ParseError(f"expected {n + m} adjacency lines, found {len(lines) - 4}")
    cols = []
    for v in range(n):
        idx = [i for i in _ints(lines[4 + v], 5 + v) if i != 0]
        if len(idx) != col_w[v]:
            raise InconsistentAdjacency(f"column {v + 1}: weight {col_w[v]} but {len(idx)} entries")
        cols.append(sorted(i - 1 for i in idx))
    rows = []
    for j in range(m):
        idx = [i for i in _ints(lines[4 + n + j], 5 + n + j) if i != 0]
        if len(idx) != row_w[j]:
            raise InconsistentAdjacency(f"row {j + 1}: weight {row_w[j]} but {len(idx)} entries")
        rows.append(sorted(i - 1 for i in idx))
    if any(i < 0 or i >= m for c in cols for i in c) or any(i < 0 or i >= n for r in rows for i in r):
        raise InconsistentAdjacency("index out of range")
    from_rows = {(j, v) for j, r in enumerate(rows) for v in r}
    from_cols = {(j, v) for v, c in enumerate(cols) for j in c}
    if from_rows != from_cols:
        raise InconsistentAdjacency("row and column adjacency lists disagree")
    return ParityCheckMatrix(n, tuple(rows))


def load_alist(path):
    with open(path) as fh:
        return parse_alist(fh.read())


def format_alist(H):
    cw = [c.size for c in H.cols]
    rw = [r.size for r in H.rows]
    mc, mr = max(cw, default=0), max(rw, default=0)
    out = [f"{H.n} {H.n_checks}", f"{mc} {mr}", " ".join(map(str, cw)), " ".join(map(str, rw))]
    for c in H.cols:
        out.append(" ".join(str(j + 1) for j in c) + " 0" * (mc - c.size))
    for r in H.rows:
        out.append(" ".join(str(v + 1) for v in r) + " 0" * (mr - r.size))
    return "\n".join(s.strip() for s in out) + "\n"


def save_alist(H, path):
    with open(path, "w") as fh:
        fh.write(format_alist(H))


def builtin_code(name):
    """Bundled codes: ``"ldpc648"`` (rate 2/3) and ``"hamming74"``."""
    try:
        fname = BUILTIN_CODES[name]
    except KeyError:
        raise ValueError(f"unknown code {name!r}; choose from {sorted(BUILTIN_CODES)}") from None
    return parse_alist(resources.files("bmdrkit").joinpath("data", fname).read_text())


def make_ira_code(n, k, rng, col_weight=3):
    """Irregular repeat-accumulate LDPC code with a dual-diagonal parity part.

    Information columns get ``col_weight`` ones in distinct checks chosen to
    balance check degrees and avoid length-4 cycles; the parity part is
    lower bidiagonal, so the matrix has full rank ``n - k``.
    """
    m = n - k
    rows = [set() for _ in range(m)]
    for v in range(k):
        for _attempt in range(1000):
            load = np.array([len(r) for r in rows], dtype=float)
            weights = np.exp(-(load - load.min()))
            picks = rng.generator.choice(m, size=col_weight, replace=False, p=weights / weights.sum())
            if all(len(rows[a] & rows[b]) == 0 for i, a in enumerate(picks) for b in picks[i + 1:]):
                break
        for j in picks:
            rows[j].add(v)
    for j in range(m):
        rows[j].add(k + j)
        if j > 0:
            rows[j].add(k + j - 1)
    return ParityCheckMatrix(n, tuple(sorted(r) for r in rows))


def encode(H, message):
    """Systematic encoding; the result satisfies ``H c = 0`` over GF(2)."""
    pivots, info, P = H._encoder
    message = np.asarray(message, dtype=np.int64)
    if message.shape[-1] != info.size:
        raise LengthMismatch(f"message length {message.shape[-1]}, code dimension {info.size}")
    c = np.zeros(message.shape[:-1] + (H.n,), dtype=np.int8)
    c[..., info] = message
    c[..., pivots] = (message @ P.T) % 2
    return c


def extract_message(H, codeword):
    _, info, _ = H._encoder
    return np.asarray(codeword)[..., info]


class Interleaver:
    """Seeded uniform random permutation of ``n`` positions."""

    def __init__(self, n, seed=None, perm=None):
        if perm is None:
            from .numerics import RngStream

            perm = RngStream(0 if seed is None else seed).substream("interleaver", n).permutation(n)
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("interleaver must be a permutation of range(n)")
        self.n, self.seed, self.perm = n, seed, perm
        self.inverse = np.argsort(perm)

    def interleave(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise LengthMismatch(f"expected length {self.n}, got {x.shape[-1]}")
        return x[..., self.perm]

    def deinterleave(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise LengthMismatch(f"expected length {self.n}, got {x.shape[-1]}")
        return x[..., self.inverse]


def bp_decode(H, llrs, max_iters=BP_MAX_ITERS):
    """Sum-product decoding; positive LLRs favour bit 1. Returns ``(bits, converged, iters)``."""
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (H.n,):
        raise LengthMismatch(f"expected {H.n} LLRs, got shape {llrs.shape}")
    return kernels.bp_decode(llrs, H.check_ptr, H.edge_var, H.var_ptr, H.var_edges, max_iters)


def wilson_interval(errors, trials, level=0.95):
    ci = binomtest(int(errors), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class CerResult:
    rho_db: np.ndarray
    errors: np.ndarray
    n_codewords: int
    bmdr: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    detector: str = ""

    @property
    def cer(self):
        return self.errors / self.n_codewords

    def to_csv(self, path, user=0, comment=None):
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["rho_db", "cer", "ci_low", "ci_high", "bmdr_mean"])
            for r in range(len(self.rho_db)):
                w.writerow([repr(float(self.rho_db[r])), repr(float(self.cer[r, user])),
                            repr(float(self.ci_low[r, user])), repr(float(self.ci_high[r, user])),
                            repr(float(self.bmdr[r, user]))])


def re_channel_schedule(n_channels, n_res):
    """Channel index of each resource element: the set cycled in sequence order."""
    return np.arange(n_res) % n_channels


def cer_simulate(channels, code, interleaver, detector, system, rho_db_grid, n_codewords, rng,
                 n_samp_bmdr=200, max_iters=BP_MAX_ITERS):
    """Codeword error rate of every user versus a common transmit power.

    Every user sends an independent codeword per trial; its interleaved bits
    fill consecutive resource elements, which walk through ``channels`` in
    order (wrapping around). Each trial uses fresh messages and noise. The
    paired BMDR is the multiplicity-weighted set average over the same
    resource-element schedule.
    """
    channels = list(channels)
    if not channels:
        raise ShapeMismatch("channel set is empty")
    bits_per_re = np.array([u.n_t * u.m for u in system.users])
    if np.any(bits_per_re != bits_per_re[0]) or code.n % bits_per_re[0]:
        raise BudgetMismatch(f"codeword length {code.n} must split evenly into {bits_per_re.tolist()} bits per RE")
    if interleaver.n != code.n:
        raise LengthMismatch("interleaver and code lengths differ")
    n_res = code.n // int(bits_per_re[0])
    sched = re_channel_schedule(len(channels), n_res)
    mult = np.bincount(sched, minlength=len(channels))
    U, n = system.n_users, code.n
    grid = np.asarray(rho_db_grid, dtype=float)
    errors = np.zeros((len(grid), U), dtype=np.int64)
    bmdr = np.zeros((len(grid), U))
    for g, rdb in enumerate(grid):
        rho = np.full(U, 10.0 ** (rdb / 10.0))
        sub = rng.substream("cer", g)
        msg = sub.substream("messages").bits((n_codewords, U, code.k))
        cw = encode(code, msg)
        tx = interleaver.interleave(cw).reshape(n_codewords, U, n_res, -1)
        # (codeword, RE, flat bits in user-major order)
        re_bits = tx.transpose(0, 2, 1, 3).reshape(n_codewords, n_res, system.total_bits)
        llr = np.zeros(re_bits.shape)
        noise_rng = sub.substream("noise")
        amp = system.power_amplitudes(rho)
        for c_idx in range(len(channels)):
            res = np.flatnonzero(sched == c_idx)
            if res.size == 0:
                continue
            b = re_bits[:, res].reshape(-1, system.total_bits)
            S = system.symbols_from_bits(b)
            Heff = channels[c_idx].H * amp[None, :]
            Y = S @ Heff.T + noise_rng.substream(c_idx).complex_normal((b.shape[0], system.n_r))
            llr[:, res] = detector.llr_batch(Y, Heff, system, bits=b).reshape(n_codewords, res.size, -1)
        rx = llr.reshape(n_codewords, n_res, U, -1).transpose(0, 2, 1, 3).reshape(n_codewords, U, n)
        rx = interleaver.deinterleave(rx)
        for t in range(n_codewords):
            for i in range(U):
                bits, _, _ = bp_decode(code, rx[t, i], max_iters)
                errors[g, i] += int(np.any(bits != cw[t, i]))
        est = bmdr_set(channels, rho, detector, system, n_samp_bmdr, sub.substream("bmdr"))
        for i in range(U):
            bmdr[g, i] = float(np.sum(est[i].per_channel * mult) / mult.sum())
    lo = np.zeros(errors.shape)
    hi = np.zeros(errors.shape)
    for idx in np.ndindex(errors.shape):
        lo[idx], hi[idx] = wilson_interval(errors[idx], n_codewords)
    return CerResult(grid, errors, n_codewords, bmdr, lo, hi, getattr(detector, "name", str(detector)))
