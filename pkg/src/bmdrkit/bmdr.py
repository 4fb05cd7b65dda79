"""Bit metrics, Monte-Carlo BMDR estimation, GMI and the SNR-to-BMDR map.

All rates are in bits per coded bit (base-2 logarithms); LLRs stay in
natural-log units.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .channel import ChannelRealization, NoiseModel, whiten
from .detect import LLR_CLIP, post_eq_sinr
from .errors import BadMagic, EmptySet, TruncatedFile, VersionMismatch
from .modem import Constellation, awgn_llr, build_qam

LN2 = np.log(2.0)
LOG_Q_FLOOR = -(LLR_CLIP + 1.0)
MC_CHUNK = 4096


@dataclass
class BmdrEstimate:
    value: float
    n_samples: int
    user: int
    std_error: float
    pre_floor: float
    m: int = 2
    clamped: bool = False
    per_channel: np.ndarray = field(default=None, repr=False)

    def __float__(self):
        return float(self.value)


def bit_metric_q(llr, b):
    """``q(b) = 1 / (1 + exp(-(2b - 1) * llr))``."""
    return expit((2 * np.asarray(b) - 1) * np.asarray(llr, dtype=float))


def log_q(llr, b):
    """Natural log of :func:`bit_metric_q`, floored at ``-(LLR_CLIP + 1)``."""
    x = (2 * np.asarray(b, dtype=float) - 1) * np.asarray(llr, dtype=float)
    return np.maximum(-np.logaddexp(0.0, -x), LOG_Q_FLOOR)


def _channel_matrix(ch):
    return ch.H if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=complex)


def _draw(system, n, bits_rng, noise_rng, K_n_sqrt=None):
    bits = bits_rng.bits((n, system.total_bits))
    S = system.symbols_from_bits(bits)
    noise = noise_rng.complex_normal((n, system.n_r))
    if K_n_sqrt is not None:
        noise = noise @ K_n_sqrt.T
    return bits, S, noise


def mc_llrs(ch, rho, detector, system, n_samp, rng, ch_est=None, noise_model=None):
    """Transmitted bits and detector LLRs for ``n_samp`` Monte-Carlo draws.

    Draws come in fixed-size chunks from the ``bits`` and ``noise``
    substreams of ``rng``; two calls with equal seeds see identical samples.
    With ``ch_est``/``noise_model`` the received vectors are generated on
    ``ch`` with noise ``CN(0, K_n)`` and whitened with ``K_n + K_e`` before
    detection on the whitened estimate.
    """
    if n_samp < 1:
        raise ValueError("n_samp must be >= 1")
    H = _channel_matrix(ch)
    amp = system.power_amplitudes(rho)
    Heff = H * amp[None, :]
    Hdet = Heff
    K_sqrt = None
    if noise_model is not None:
        K_sqrt = _sqrt_psd(noise_model.K_n)
        H_hat = _channel_matrix(ch_est) * amp[None, :]
    bits_rng = rng.substream("bits")
    noise_rng = rng.substream("noise")
    all_bits, all_llr = [], []
    for start in range(0, n_samp, MC_CHUNK):
        n = min(MC_CHUNK, n_samp - start)
        bits, S, noise = _draw(system, n, bits_rng, noise_rng, K_sqrt)
        Y = S @ Heff.T + noise
        if noise_model is not None:
            Y, Hdet = whiten(Y, H_hat, noise_model)
        all_llr.append(detector.llr_batch(Y, Hdet, system, bits=bits))
        all_bits.append(bits)
    return np.concatenate(all_bits), np.concatenate(all_llr)


def _sqrt_psd(K):
    K = np.asarray(K, dtype=complex)
    if np.array_equal(K, np.diag(np.diag(K))):
        return np.diag(np.sqrt(np.real(np.diag(K))))
    w, U = np.linalg.eigh(0.5 * (K + K.conj().T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.conj().T


def estimates_from_llrs(bits, llr, system):
    """Per-user :class:`BmdrEstimate` from matched bits and LLRs."""
    lq = log_q(llr, bits) / LN2
    out = []
    for i, u in enumerate(system.users):
        per_sample = lq[:, system.user_bits(i)].mean(axis=1)
        n = per_sample.size
        mean = float(np.mean(per_sample))
        se = float(np.std(per_sample, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        out.append(BmdrEstimate(max(0.0, 1.0 + mean), n, i, se, 1.0 + mean, u.m))
    return out


def bmdr_mc_estimate(ch, rho, detector, system, n_samp, rng):
    """Monte-Carlo BMDR of every user for one channel and power vector."""
    bits, llr = mc_llrs(ch, rho, detector, system, n_samp, rng)
    return estimates_from_llrs(bits, llr, system)


def bmdr_mc_estimate_ce(ch_true, ch_est, noise, rho, detector, system, n_samp, rng):
    """BMDR with an imperfect estimate and coloured noise, after whitening."""
    if not isinstance(noise, NoiseModel):
        raise TypeError("noise must be a NoiseModel")
    bits, llr = mc_llrs(ch_true, rho, detector, system, n_samp, rng,
                        ch_est=ch_est, noise_model=noise)
    return estimates_from_llrs(bits, llr, system)


def _channel_key(ch, position):
    if isinstance(ch, ChannelRealization):
        return ch.channel_id
    return position


def bmdr_set(channels, rho, detector, system, n_samp, rng):
    """Average of per-channel BMDR estimates over a set of channels.

    Each channel draws from the substream keyed by its ``channel_id`` (or its
    position for bare matrices), so repeated channels reuse their samples.
    """
    channels = list(channels)
    if not channels:
        raise EmptySet("channel set is empty")
    per = np.empty((len(channels), system.n_users))
    se = np.empty_like(per)
    pre = np.empty_like(per)
    for k, ch in enumerate(channels):
        sub = rng.substream("channel", _channel_key(ch, k))
        ests = bmdr_mc_estimate(ch, rho, detector, system, n_samp, sub)
        per[k] = [e.value for e in ests]
        se[k] = [e.std_error for e in ests]
        pre[k] = [e.pre_floor for e in ests]
    n = len(channels)
    return [
        BmdrEstimate(float(per[:, i].sum() / n), n_samp, i,
                     float(np.sqrt(np.sum(se[:, i] ** 2)) / n), float(pre[:, i].sum() / n),
                     system.users[i].m, per_channel=per[:, i].copy())
        for i in range(system.n_users)
    ]


def gmi_terms(bits, llr, s):
    """Per-bit GMI integrand ``log2(q(b)^s / (0.5 * sum_b' q(b')^s))``."""
    # log(q_b^s / sum q^s) = -log(1 + exp(-s (log q_b - log q_o)))
    d = s * (log_q(llr, bits) - log_q(llr, 1 - bits))
    return (LN2 - np.logaddexp(0.0, -d)) / LN2


def gmi_from_llrs(bits, llr, system, s, floor=True):
    t = gmi_terms(bits, llr, s)
    vals = np.array([t[:, system.user_bits(i)].mean(axis=1).mean() for i in range(system.n_users)])
    return np.maximum(vals, 0.0) if floor else vals


def gmi_s(ch, rho, detector, system, s, n_samp, rng, floor=True):
    """Monte-Carlo ``I_gmi(s)`` per user (bits per coded bit)."""
    if s <= 0:
        raise ValueError("s must be positive")
    bits, llr = mc_llrs(ch, rho, detector, system, n_samp, rng)
    return gmi_from_llrs(bits, llr, system, s, floor=floor)


DEFAULT_S_GRID = np.round(np.arange(1, 31) * 0.1, 10)
GOLDEN_ROUNDS = 3
GOLDEN_STEPS_PER_ROUND = 10
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, a, b, steps):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(steps):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def sup_over_s(f, s_grid=None):
    """Maximise a scalar function of ``s``: grid search then golden section."""
    grid = np.asarray(DEFAULT_S_GRID if s_grid is None else s_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ValueError("s grid must be finite and positive")
    grid = np.sort(grid)
    vals = np.array([f(s) for s in grid])
    j = int(np.argmax(vals))
    best_s, best_v = float(grid[j]), float(vals[j])
    lo = grid[j - 1] if j > 0 else grid[j] / 2.0
    hi = grid[j + 1] if j + 1 < grid.size else grid[j] * 1.5
    for _ in range(GOLDEN_ROUNDS):
        s, v = _golden_max(f, lo, hi, GOLDEN_STEPS_PER_ROUND)
        if v > best_v:
            best_s, best_v = float(s), float(v)
        width = (hi - lo) * _INVPHI ** GOLDEN_STEPS_PER_ROUND
        lo, hi = max(best_s - width, lo), min(best_s + width, hi)
    return best_s, best_v


def gmi_sup(ch, rho, detector, system, n_samp, rng, s_grid=None):
    """``(s*, I_gmi(s*))`` per user, all ``s`` evaluated on common samples."""
    bits, llr = mc_llrs(ch, rho, detector, system, n_samp, rng)
    out = []
    for i in range(system.n_users):
        sl = system.user_bits(i)
        b_i, l_i = bits[:, sl], llr[:, sl]

        def f(s):
            return max(0.0, float(gmi_terms(b_i, l_i, s).mean(axis=1).mean()))

        out.append(sup_over_s(f, s_grid))
    return out


# ------------------------------------------------------------- SNR -> BMDR


def isotonic_increasing(y):
    """Pool-adjacent-violators fit of a non-decreasing sequence."""
    vals, weights, counts = [], [], []
    for v in np.asarray(y, dtype=float):
        vals.append(v)
        weights.append(1.0)
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            w = weights[-2] + weights[-1]
            v = (vals[-2] * weights[-2] + vals[-1] * weights[-1]) / w
            c = counts[-2] + counts[-1]
            vals[-2:], weights[-2:], counts[-2:] = [v], [w], [c]
    return np.repeat(vals, counts)


TABLE_MAGIC = b"SBMT"
TABLE_VERSION = 1


@dataclass
class SnrBmdrTable:
    """Piecewise-linear SNR(dB) -> BMDR map for one constellation."""

    m: int
    snr_db: np.ndarray
    bmdr: np.ndarray
    interpolation: str = "linear-db"

    def lookup(self, snr_linear):
        """Interpolated BMDR and a flag telling whether any input was clamped."""
        snr_linear = np.asarray(snr_linear, dtype=float)
        with np.errstate(divide="ignore"):
            snr_db = 10.0 * np.log10(snr_linear)
        clamped = bool(np.any((snr_db < self.snr_db[0]) | (snr_db > self.snr_db[-1])))
        x = np.clip(snr_db, self.snr_db[0], self.snr_db[-1])
        return np.interp(x, self.snr_db, self.bmdr), clamped

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(TABLE_MAGIC)
        buf.write(struct.pack("<HHI", TABLE_VERSION, self.m, len(self.snr_db)))
        buf.write(np.asarray(self.snr_db, "<f8").tobytes())
        buf.write(np.asarray(self.bmdr, "<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < 12:
            raise TruncatedFile("table header truncated")
        if data[:4] != TABLE_MAGIC:
            raise BadMagic(f"expected {TABLE_MAGIC!r}, got {data[:4]!r}")
        version, m, n = struct.unpack("<HHI", data[4:12])
        if version != TABLE_VERSION:
            raise VersionMismatch(f"table version {version} unsupported")
        if len(data) < 12 + 16 * n:
            raise TruncatedFile("table body truncated")
        snr = np.frombuffer(data, "<f8", n, 12).copy()
        val = np.frombuffer(data, "<f8", n, 12 + 8 * n).copy()
        return cls(m, snr, val)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def awgn_bmdr(constellation, snr_db, n_samp, rng, mode="exact"):
    """Raw (non-isotonic) SISO AWGN BMDR at each SNR on common samples."""
    c = constellation
    bits = rng.substream("bits").bits((n_samp, c.m))
    s = c.points[(bits.astype(np.int64) * (1 << np.arange(c.m - 1, -1, -1))).sum(1)]
    n = rng.substream("noise").complex_normal(n_samp)
    out = []
    for snr in 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0):
        z = np.sqrt(snr) * s + n
        llr = np.clip(awgn_llr(z, snr, c, mode=mode), -LLR_CLIP, LLR_CLIP)
        out.append(max(0.0, 1.0 + float(np.mean(log_q(llr, bits))) / LN2))
    return np.array(out)


def build_snr_bmdr_table(constellation, snr_grid_db, n_samp, rng):
    """SISO AWGN BMDR with exact ML bit metrics, made monotone by isotonic fit."""
    if isinstance(constellation, int):
        constellation = build_qam(constellation)
    grid = np.asarray(snr_grid_db, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("SNR grid must be strictly ascending")
    raw = awgn_bmdr(constellation, grid, n_samp, rng)
    return SnrBmdrTable(constellation.m, grid, np.clip(isotonic_increasing(raw), 0.0, 1.0))


def lmmse_bmdr_predict(ch, rho, system, tables):
    """Prediction from per-stream LMMSE SINR looked up in SNR tables.

    ``tables`` maps bits-per-symbol ``m`` to :class:`SnrBmdrTable`.
    """
    sinr = post_eq_sinr(_channel_matrix(ch), rho, system)
    out = []
    for i, u in enumerate(system.users):
        table = tables[u.m] if not isinstance(tables, SnrBmdrTable) else tables
        if table.m != u.m:
            raise ValueError(f"table for m={table.m} used for user with m={u.m}")
        vals, clamped = table.lookup(sinr[system.user_slice(i)])
        v = float(np.mean(vals))
        out.append(BmdrEstimate(v, 0, i, 0.0, v, u.m, clamped=clamped))
    return out
