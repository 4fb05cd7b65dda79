"""Real/complex linear-algebra kernels and deterministic random streams."""

from __future__ import annotations

import zlib

import numpy as np

from .errors import NonFiniteInput, RankDeficient

__all__ = [
    "RngStream",
    "real_embed_matrix",
    "real_embed_vector",
    "complex_from_real_vector",
    "qr_decompose",
    "condition_number_db",
]

RANK_TOL = 1e-12
SINGULAR_TOL = 1e-14


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input contains NaN or Inf entries")


def real_embed_matrix(X):
    """Return ``[[Re X, -Im X], [Im X, Re X]]``.

    Works on a single matrix of shape ``(m, n)`` or on a stack ``(..., m, n)``.
    The map is a ring homomorphism: ``real_embed_matrix(X @ Y)`` equals
    ``real_embed_matrix(X) @ real_embed_matrix(Y)``.
    """
    X = np.asarray(X, dtype=complex)
    _check_finite(X)
    re, im = X.real, X.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def real_embed_vector(x):
    """Stack real and imaginary parts along the last axis: ``[Re x; Im x]``.

    ``x`` may be a column ``(n, 1)``, a flat vector ``(n,)`` or a batch
    ``(B, n)``; the leading shape is preserved.
    """
    x = np.asarray(x, dtype=complex)
    _check_finite(x)
    if x.ndim == 2 and x.shape[1] == 1:
        return np.concatenate([x.real, x.imag], axis=0)
    return np.concatenate([x.real, x.imag], axis=-1)


def complex_from_real_vector(v):
    """Inverse of :func:`real_embed_vector` for flat or batched input."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 2 and v.shape[1] == 1:
        n = v.shape[0] // 2
        return v[:n] + 1j * v[n:]
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:]


def qr_decompose(A):
    """Thin QR factorisation with a strictly positive diagonal in ``R``.

    Householder reflections (LAPACK ``geqrf``) followed by a sign
    normalisation, so the factorisation is unique for full-rank ``A``.

    Raises
    ------
    RankDeficient
        If any pivot is smaller than ``1e-12 * ||A||_F``.
    """
    A = np.asarray(A, dtype=float)
    _check_finite(A)
    rows, cols = A.shape
    if cols > rows:
        raise RankDeficient(f"need cols <= rows, got {A.shape}")
    Q, R = np.linalg.qr(A, mode="reduced")
    d = np.diag(R)
    scale = np.linalg.norm(A)
    if scale == 0.0 or np.any(np.abs(d) < RANK_TOL * scale):
        raise RankDeficient("matrix is numerically rank deficient")
    signs = np.where(d < 0, -1.0, 1.0)
    Q = Q * signs[None, :]
    R = signs[:, None] * R
    # exact zeros below the diagonal
    R = np.triu(R)
    return Q, R


def condition_number_db(H):
    """``20*log10(sigma_max/sigma_min)``; ``+inf`` when numerically singular."""
    H = np.asarray(H, dtype=complex)
    _check_finite(H)
    s = np.linalg.svd(H, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("condition number of a zero matrix is undefined")
    if s[-1] < SINGULAR_TOL * s[0]:
        return float("inf")
    return float(20.0 * np.log10(s[0] / s[-1]))


def _key_part(name):
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


class RngStream:
    """Seeded counter-based (Philox) random stream with named substreams.

    Substreams are derived from the seed through ``SeedSequence`` spawn keys,
    so ``RngStream(7).substream("noise", 3)`` always yields the same samples
    regardless of how much the parent stream has been consumed.
    """

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"

    def substream(self, *names):
        return RngStream(self.seed, self.key + tuple(_key_part(n) for n in names))

    def bits(self, shape):
        return self.generator.integers(0, 2, size=shape, dtype=np.int8)

    def complex_normal(self, shape, variance=1.0):
        """Circularly-symmetric complex Gaussian samples, CN(0, variance)."""
        z = self.generator.standard_normal(tuple(np.atleast_1d(shape)) + (2,))
        return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def signs(self, n):
        return np.where(self.generator.integers(0, 2, size=n) == 0, 1.0, -1.0)
