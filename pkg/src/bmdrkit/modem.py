"""Unit-energy square QAM with per-axis Gray labelling.

Labelling convention (part of the artifact contract):

* a symbol carries bits ``b_0 .. b_{m-1}``; the first ``m/2`` bits drive the
  in-phase axis, the remaining ``m/2`` the quadrature axis;
* on each axis the first bit selects the sign (0 -> positive, 1 -> negative)
  and the other bits, read as a Gray code, select the magnitude level
  ``1, 3, 5, ...`` (Gray index 0 is the innermost level);
* amplitudes are divided by ``sqrt(2 (M_axis^2 - 1) / 3)``, i.e. ``sqrt(2)``,
  ``sqrt(10)``, ``sqrt(42)`` for 4-, 16- and 64-QAM.

Hence bits ``(0, 0)`` of 4-QAM map to ``(1 + 1j) / sqrt(2)``, and negating a
point flips exactly the two sign bits ``b_0`` and ``b_{m/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ShapeMismatch, UnsupportedOrder

SUPPORTED_ORDERS = (2, 4, 6)


def _gray_to_binary(g):
    b = 0
    while g:
        b ^= g
        g >>= 1
    return b


def _axis_pam(k):
    """Un-normalised PAM amplitudes and labels for ``k`` bits per axis.

    Returns ``(amplitudes, labels)`` where ``labels[a]`` is the ``k``-bit
    label of amplitude index ``a``; amplitudes are sorted ascending.
    """
    n = 1 << k
    amps = np.arange(-(n - 1), n, 2, dtype=float)
    labels = np.zeros((n, k), dtype=np.int8)
    for a, amp in enumerate(amps):
        sign_bit = 0 if amp > 0 else 1
        level = (int(abs(amp)) - 1) // 2
        # invert the Gray decode: find the Gray word whose decoded value is `level`
        gray = level ^ (level >> 1)
        assert _gray_to_binary(gray) == level
        labels[a, 0] = sign_bit
        for t in range(1, k):
            labels[a, t] = (gray >> (k - 1 - t)) & 1
    return amps, labels


@dataclass(frozen=True, eq=False)
class Constellation:
    """Square QAM constellation with the module's Gray labelling.

    ``points[idx]`` is the symbol whose bit tuple, read MSB first, equals
    ``idx``; ``labels[idx]`` holds that tuple.
    """

    m: int
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    axis_amplitudes: np.ndarray = field(repr=False)
    axis_labels: np.ndarray = field(repr=False)
    scale: float = 1.0

    @property
    def size(self):
        return 1 << self.m

    @property
    def bits_per_axis(self):
        return self.m // 2

    @property
    def name(self):
        return f"{self.size}qam"

    def __eq__(self, other):
        return isinstance(other, Constellation) and self.m == other.m

    def __hash__(self):
        return hash(("qam", self.m))


@lru_cache(maxsize=None)
def build_qam(m):
    """Gray-labelled unit-energy square QAM with ``2**m`` points."""
    if m not in SUPPORTED_ORDERS:
        raise UnsupportedOrder(f"m must be one of {SUPPORTED_ORDERS}, got {m}")
    k = m // 2
    amps, axis_labels = _axis_pam(k)
    n_axis = 1 << k
    scale = np.sqrt(2.0 * (n_axis * n_axis - 1) / 3.0)
    amps = amps / scale
    # amplitude index for each axis label word
    word_to_amp = np.empty(n_axis, dtype=int)
    for a in range(n_axis):
        word = 0
        for bit in axis_labels[a]:
            word = (word << 1) | int(bit)
        word_to_amp[word] = a
    size = 1 << m
    points = np.empty(size, dtype=complex)
    labels = np.empty((size, m), dtype=np.int8)
    for idx in range(size):
        i_word, q_word = idx >> k, idx & (n_axis - 1)
        points[idx] = amps[word_to_amp[i_word]] + 1j * amps[word_to_amp[q_word]]
        for t in range(m):
            labels[idx, t] = (idx >> (m - 1 - t)) & 1
    points.setflags(write=False)
    labels.setflags(write=False)
    amps.setflags(write=False)
    axis_labels.setflags(write=False)
    return Constellation(m, points, labels, amps, axis_labels, float(scale))


def bits_to_indices(bits, m):
    """Pack the trailing ``m`` bits (MSB first) into point indices."""
    bits = np.asarray(bits)
    if bits.shape[-1] != m:
        raise ShapeMismatch(f"expected {m} bits per symbol, got {bits.shape[-1]}")
    weights = 1 << np.arange(m - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def map_bits(B, c):
    """Map an ``n_t x m`` bit matrix (or a stack of them) to symbols."""
    B = np.asarray(B)
    if B.ndim < 2 or B.shape[-1] != c.m:
        raise ShapeMismatch(f"bit matrix must end in (n_t, {c.m}), got {B.shape}")
    if np.any((B != 0) & (B != 1)):
        raise ValueError("bit matrix entries must be 0 or 1")
    idx = bits_to_indices(B, c.m)
    out = c.points[idx]
    if B.ndim == 2:
        return out[:, None]
    return out


def nearest_indices(s, c):
    s = np.asarray(s, dtype=complex)
    d = np.abs(s[..., None] - c.points) ** 2
    return np.argmin(d, axis=-1)


def demap_symbols(s, c):
    """Hard nearest-point inverse of :func:`map_bits`.

    ``s`` of shape ``(n_t, 1)`` gives an ``(n_t, m)`` bit matrix; a flat
    ``(..., n_t)`` input gives ``(..., n_t, m)``.
    """
    s = np.asarray(s, dtype=complex)
    if s.ndim == 2 and s.shape[1] == 1:
        s = s[:, 0]
    return c.labels[nearest_indices(s, c)].copy()


def negation_flip_mask(c):
    """Bits flipped when a point is negated: the two axis sign bits."""
    mask = np.zeros(c.m, dtype=np.int8)
    mask[0] = 1
    mask[c.m // 2] = 1
    return mask


def awgn_llr(z, snr, c, mode="exact"):
    """Bit LLRs ``ln q(1)/q(0)`` for ``z = sqrt(snr) * s + CN(0, 1)``.

    ``z`` and ``snr`` broadcast together; the result has one extra trailing
    axis of length ``m``. With square QAM and circular noise each bit only
    depends on its own axis, so the per-axis PAM likelihoods are exact.
    """
    z = np.asarray(z, dtype=complex)
    snr = np.asarray(snr, dtype=float)
    z, snr = np.broadcast_arrays(z, snr)
    g = np.sqrt(snr)
    k = c.bits_per_axis
    amps, labels = c.axis_amplitudes, c.axis_labels
    out = np.empty(z.shape + (c.m,))
    for axis, comp in enumerate((z.real, z.imag)):
        # per-axis noise variance 1/2: log-likelihood -(comp - g a)^2
        metric = -((comp[..., None] - g[..., None] * amps) ** 2)
        for t in range(k):
            one = labels[:, t] == 1
            if mode == "exact":
                l1 = np.logaddexp.reduce(metric[..., one], axis=-1)
                l0 = np.logaddexp.reduce(metric[..., ~one], axis=-1)
            elif mode == "maxlog":
                l1 = metric[..., one].max(axis=-1)
                l0 = metric[..., ~one].max(axis=-1)
            else:
                raise ValueError(f"unknown demapping mode {mode!r}")
            out[..., axis * k + t] = l1 - l0
    return out
