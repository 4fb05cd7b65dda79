"""Soft-output MU-MIMO detectors behind a single contract.

Every detector maps received vectors ``Y`` of shape ``(B, n_r)`` and the
power-scaled composite channel ``H`` (``n_r x N``, i.e. ``H_i`` already
multiplied by ``sqrt(rho_i / n_t_i)``) to flat LLRs of shape
``(B, total_bits)`` laid out as (user, antenna, bit). LLRs follow
``ln q(b=1) / q(b=0)`` and are clipped to ``+-LLR_CLIP``.
"""

from __future__ import annotations

import re
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import RankDeficient, TooLarge
from .modem import awgn_llr
from .numerics import qr_decompose, real_embed_matrix

LLR_CLIP = 20.0
ML_MAX_BITS = 16

__all__ = [
    "LLR_CLIP",
    "Detector",
    "LmmseDetector",
    "MlDetector",
    "KBestDetector",
    "make_detector",
    "post_eq_sinr",
    "lmmse_llr",
    "ml_llr",
    "kbest_llr",
    "maxlog_from_candidates",
]


def _as_batch(y, n_r=None):
    y = np.asarray(y, dtype=complex)
    # an (n_r, 1) column is one vector; with n_r = 1 a (B, 1) array is a batch
    if y.ndim == 2 and y.shape[1] == 1 and n_r != 1:
        return y[:, 0][None, :], True
    if y.ndim == 1:
        return y[None, :], True
    return y, False


def _real_batch(Y):
    return np.concatenate([Y.real, Y.imag], axis=-1)


class Detector:
    """Base class; subclasses implement :meth:`llr_batch`."""

    name = "detector"

    def llr_batch(self, Y, H, system, bits=None):
        """Flat clipped LLRs ``(B, total_bits)``.

        ``bits`` (the transmitted bits) is only consulted by test stubs.
        """
        raise NotImplementedError

    def llr(self, y, H, system):
        """Per-user ``n_t x m`` LLR matrices for a single received vector."""
        Y, _ = _as_batch(y, np.shape(H)[0])
        flat = self.llr_batch(Y, H, system)[0]
        return system.split_llrs(flat)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


# --------------------------------------------------------------------- LMMSE


def _lmmse_parts(Heff):
    N = Heff.shape[1]
    G = Heff.conj().T @ Heff + np.eye(N)
    Ginv = np.linalg.inv(G)
    Ginv = 0.5 * (Ginv + Ginv.conj().T)
    e = np.real(np.diag(Ginv))
    W = Ginv @ Heff.conj().T
    mu = 1.0 - e
    sinr = np.where(mu > 0, 1.0 / e - 1.0, 0.0)
    return W, mu, np.maximum(sinr, 0.0)


def post_eq_sinr(H, rho, system):
    """Per-stream LMMSE post-equalisation SINR for unscaled ``H`` and powers ``rho``."""
    Heff = np.asarray(H, dtype=complex) * system.power_amplitudes(rho)[None, :]
    return _lmmse_parts(Heff)[2]


def lmmse_llr(Y, Heff, system, mode="exact"):
    """LMMSE equalisation followed by per-stream Gaussian scalar demapping."""
    Y, _ = _as_batch(Y, np.shape(Heff)[0])
    W, mu, sinr = _lmmse_parts(np.asarray(Heff, dtype=complex))
    Z = Y @ W.T
    safe_mu = np.where(mu > 0, mu, 1.0)
    Zs = np.where(mu > 0, Z / safe_mu, 0.0) * np.sqrt(sinr)
    out = np.empty((Y.shape[0], system.total_bits))
    for k in range(system.N):
        c = system.users[system.stream_user[k]].constellation
        off = system.stream_bit_offsets[k]
        out[:, off:off + c.m] = awgn_llr(Zs[:, k], sinr[k], c, mode=mode)
    return np.clip(out, -LLR_CLIP, LLR_CLIP)


class LmmseDetector(Detector):
    def __init__(self, mode="exact"):
        self.mode = mode
        self.name = "lmmse" if mode == "exact" else f"lmmse-{mode}"

    def llr_batch(self, Y, H, system, bits=None):
        return lmmse_llr(Y, H, system, mode=self.mode)


# ------------------------------------------------------------------ exact ML


@lru_cache(maxsize=32)
def _hypotheses(system):
    """All real-domain symbol hypotheses and their flat bit labels."""
    amps, sizes, labels, bit_index = system.level_tables
    L = len(sizes)
    grids = np.indices(tuple(int(s) for s in sizes)).reshape(L, -1).T
    X = amps[np.arange(L)[None, :], grids]
    bits = np.zeros((grids.shape[0], system.total_bits), dtype=np.int8)
    for lev in range(L):
        for t in range(bit_index.shape[1]):
            bi = bit_index[lev, t]
            if bi >= 0:
                bits[:, bi] = labels[lev, grids[:, lev], t]
    X.setflags(write=False)
    bits.setflags(write=False)
    return X, bits


def _ml_real(Yr, Hr, system, mode, chunk_elems=1 << 22):
    if system.total_bits > ML_MAX_BITS:
        raise TooLarge(f"{system.total_bits} bits exceed the enumeration guard of {ML_MAX_BITS}")
    X, bits = _hypotheses(system)
    HX = X @ Hr.T
    B, rows = Yr.shape
    Nh = X.shape[0]
    one = bits.astype(bool)
    out = np.empty((B, system.total_bits))
    step = max(1, chunk_elems // max(1, Nh * rows))
    for b0 in range(0, B, step):
        diff = Yr[b0:b0 + step, None, :] - HX[None, :, :]
        neg_d = -np.einsum("bhr,bhr->bh", diff, diff)
        for k in range(system.total_bits):
            sel = one[:, k]
            if mode == "exact":
                l1 = logsumexp(neg_d[:, sel], axis=1)
                l0 = logsumexp(neg_d[:, ~sel], axis=1)
            else:
                l1 = neg_d[:, sel].max(axis=1)
                l0 = neg_d[:, ~sel].max(axis=1)
            out[b0:b0 + step, k] = l1 - l0
    return np.clip(out, -LLR_CLIP, LLR_CLIP)


def ml_llr(Y, Heff, system, mode="exact"):
    """Exhaustive ML LLRs (log-sum-exp for ``exact``, minima for ``maxlog``)."""
    if mode not in ("exact", "maxlog"):
        raise ValueError(f"unknown ML mode {mode!r}")
    Y, _ = _as_batch(Y, np.shape(Heff)[0])
    return _ml_real(_real_batch(Y), real_embed_matrix(Heff), system, mode)


class MlDetector(Detector):
    def __init__(self, mode="exact"):
        if mode not in ("exact", "maxlog"):
            raise ValueError(f"unknown ML mode {mode!r}")
        self.mode = mode
        self.name = f"ml-{mode}"

    def llr_batch(self, Y, H, system, bits=None):
        return ml_llr(Y, H, system, self.mode)

    def llr_real(self, Ybar, Hr, system):
        """ML LLRs on a real-domain model ``ybar = Hr x + N(0, I/2)``."""
        return _ml_real(np.atleast_2d(np.asarray(Ybar, dtype=float)), np.asarray(Hr, dtype=float),
                        system, self.mode)


# ------------------------------------------------------------------- K-best


def maxlog_from_candidates(idx, metric, system):
    """Max-log LLRs from candidate lists.

    ``idx`` holds per-level alphabet indices ``(B, P, L)`` and ``metric`` the
    squared distances ``(B, P)``. A bit value without any candidate gets the
    saturated LLR in the direction of the observed value.
    """
    amps, sizes, labels, bit_index = system.level_tables
    B, P, L = idx.shape
    out = np.empty((B, system.total_bits))
    for lev in range(L):
        for t in range(bit_index.shape[1]):
            bi = bit_index[lev, t]
            if bi < 0:
                continue
            bvals = labels[lev, idx[:, :, lev], t]
            m1 = np.where(bvals == 1, metric, np.inf).min(axis=1)
            m0 = np.where(bvals == 0, metric, np.inf).min(axis=1)
            with np.errstate(invalid="ignore"):
                llr = m0 - m1
            llr = np.where(np.isinf(m1), -LLR_CLIP, llr)
            llr = np.where(np.isinf(m0), LLR_CLIP, llr)
            out[:, bi] = llr
    return np.clip(out, -LLR_CLIP, LLR_CLIP)


def _triangularize(Hr):
    try:
        return qr_decompose(Hr)
    except RankDeficient:
        return np.linalg.qr(Hr, mode="reduced")


def kbest_real(Ybar, R, system, K):
    """K-best on an upper-triangular real model ``ybar = R x + N(0, I/2)``."""
    amps, sizes, _, _ = system.level_tables
    idx, metric = kernels.kbest_search(np.atleast_2d(Ybar), R, amps, sizes, int(K))
    return maxlog_from_candidates(idx, metric, system)


def kbest_llr(Y, Heff, system, K):
    Y, _ = _as_batch(Y, np.shape(Heff)[0])
    Q, R = _triangularize(real_embed_matrix(Heff))
    Ybar = _real_batch(Y) @ Q
    return kbest_real(Ybar, R, system, K)


class KBestDetector(Detector):
    def __init__(self, K=32):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.K = int(K)
        self.name = f"kbest:K={self.K}"

    def llr_batch(self, Y, H, system, bits=None):
        return kbest_llr(Y, H, system, self.K)


_SPEC = re.compile(r"^\s*(?P<kind>[a-z\-]+)\s*(?::\s*k\s*=\s*(?P<k>\d+))?\s*$")


def make_detector(spec):
    """Build a detector from ``"lmmse"``, ``"ml-exact"``, ``"ml-maxlog"`` or ``"kbest:K=32"``."""
    if isinstance(spec, Detector):
        return spec
    m = _SPEC.match(str(spec).lower())
    if not m:
        raise ValueError(f"cannot parse detector spec {spec!r}")
    kind, k = m.group("kind"), m.group("k")
    if kind == "lmmse":
        return LmmseDetector()
    if kind == "lmmse-maxlog":
        return LmmseDetector("maxlog")
    if kind in ("ml", "ml-exact"):
        return MlDetector("exact")
    if kind == "ml-maxlog":
        return MlDetector("maxlog")
    if kind == "kbest":
        return KBestDetector(int(k) if k else 32)
    raise ValueError(f"unknown detector {spec!r}")
