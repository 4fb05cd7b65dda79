"""MU-MIMO system description, synthetic channels, RE simulation and whitening."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InsufficientChannels, NotPositiveDefinite, ShapeMismatch
from .modem import Constellation, build_qam
from .numerics import condition_number_db

# Per-constellation transmit power ranges (dB) used for label generation.
DEFAULT_RHO_DB = {2: (-16.0, -6.0), 4: (-8.0, 0.0), 6: (-4.0, 10.0)}


@dataclass(frozen=True)
class UserConfig:
    n_t: int
    constellation: Constellation
    rho_db_range: tuple = None

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        if self.rho_db_range is None:
            object.__setattr__(self, "rho_db_range", DEFAULT_RHO_DB[self.constellation.m])
        lo, hi = self.rho_db_range
        if lo > hi:
            raise ValueError(f"rho range reversed: {self.rho_db_range}")
        object.__setattr__(self, "rho_db_range", (float(lo), float(hi)))

    @property
    def m(self):
        return self.constellation.m


@dataclass(frozen=True)
class MimoSystem:
    """Receive antenna count plus the ordered list of co-scheduled users.

    Streams are numbered user by user; LLRs are laid out flat in the order
    (user, antenna, bit) with ``total_bits`` entries per RE.
    """

    n_r: int
    users: tuple

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if not self.users:
            raise ValueError("at least one user required")
        if self.N > self.n_r:
            raise ShapeMismatch(f"N={self.N} streams exceed n_r={self.n_r}")

    @classmethod
    def uniform(cls, n_r, n_users, m=2, n_t=1, rho_db_range=None):
        c = build_qam(m)
        return cls(n_r, tuple(UserConfig(n_t, c, rho_db_range) for _ in range(n_users)))

    @property
    def n_users(self):
        return len(self.users)

    @property
    def N(self):
        return sum(u.n_t for u in self.users)

    @cached_property
    def stream_offsets(self):
        return np.concatenate([[0], np.cumsum([u.n_t for u in self.users])]).astype(int)

    def user_slice(self, i):
        return slice(int(self.stream_offsets[i]), int(self.stream_offsets[i + 1]))

    @cached_property
    def stream_user(self):
        return np.repeat(np.arange(self.n_users), [u.n_t for u in self.users])

    @cached_property
    def stream_m(self):
        return np.array([self.users[i].m for i in self.stream_user], dtype=int)

    @cached_property
    def bit_offsets(self):
        """Flat index of the first bit of each user."""
        return np.concatenate([[0], np.cumsum([u.n_t * u.m for u in self.users])]).astype(int)

    @property
    def total_bits(self):
        return int(self.bit_offsets[-1])

    def user_bits(self, i):
        return slice(int(self.bit_offsets[i]), int(self.bit_offsets[i + 1]))

    @cached_property
    def stream_bit_offsets(self):
        return np.concatenate([[0], np.cumsum(self.stream_m)]).astype(int)

    @cached_property
    def bit_user(self):
        return np.repeat(np.arange(self.n_users), [u.n_t * u.m for u in self.users])

    def split_llrs(self, flat):
        """Flat ``(..., total_bits)`` LLRs -> list of ``(..., n_t, m)`` per user."""
        out = []
        for i, u in enumerate(self.users):
            block = flat[..., self.user_bits(i)]
            out.append(block.reshape(block.shape[:-1] + (u.n_t, u.m)))
        return out

    def power_amplitudes(self, rho):
        """Per-stream ``sqrt(rho_i / n_t_i)`` for linear per-user powers."""
        rho = np.asarray(rho, dtype=float).reshape(-1)
        if rho.size != self.n_users:
            raise ShapeMismatch(f"need {self.n_users} powers, got {rho.size}")
        if np.any(rho < 0):
            raise ValueError("powers must be non-negative")
        nt = np.array([u.n_t for u in self.users], dtype=float)
        return np.repeat(np.sqrt(rho / nt), [u.n_t for u in self.users])

    # --- real-domain tables for tree/enumeration detectors -----------------
    # Real level k < N is Re(s_k), level N + k is Im(s_k).

    @cached_property
    def level_tables(self):
        N = self.N
        L = 2 * N
        kmax = max(u.m for u in self.users) // 2
        amax = 1 << kmax
        amps = np.zeros((L, amax))
        sizes = np.zeros(L, dtype=np.int64)
        labels = np.zeros((L, amax, kmax), dtype=np.int8)
        bit_index = -np.ones((L, kmax), dtype=np.int64)
        for k in range(N):
            c = self.users[self.stream_user[k]].constellation
            kb = c.bits_per_axis
            for axis in range(2):
                lev = k + axis * N
                sizes[lev] = 1 << kb
                amps[lev, : 1 << kb] = c.axis_amplitudes
                labels[lev, : 1 << kb, :kb] = c.axis_labels
                bit_index[lev, :kb] = self.stream_bit_offsets[k] + axis * kb + np.arange(kb)
        return amps, sizes, labels, bit_index

    def symbols_from_bits(self, bits):
        """Flat ``(B, total_bits)`` bits -> stacked symbols ``(B, N)``."""
        bits = np.asarray(bits)
        B = bits.shape[0]
        s = np.empty((B, self.N), dtype=complex)
        for k in range(self.N):
            m = self.stream_m[k]
            c = self.users[self.stream_user[k]].constellation
            blk = bits[:, self.stream_bit_offsets[k] : self.stream_bit_offsets[k] + m]
            s[:, k] = c.points[(blk.astype(np.int64) * (1 << np.arange(m - 1, -1, -1))).sum(1)]
        return s


@dataclass
class ChannelRealization:
    H: np.ndarray
    user_offsets: tuple
    drop: int = 0
    subcarrier: int = 0
    symbol: int = 0
    channel_id: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        if not np.all(np.isfinite(self.H)):
            raise ValueError("channel contains non-finite entries")
        if self.user_offsets[-1] != self.H.shape[1]:
            raise ShapeMismatch("user partition does not cover all columns")
        if self.H.shape[1] > self.H.shape[0]:
            raise ShapeMismatch("N must not exceed n_r")

    def user_block(self, i):
        return self.H[:, self.user_offsets[i] : self.user_offsets[i + 1]]


def normalize_users(H, system):
    """Scale each user block so ``||H_i||_F^2 = n_r * n_t_i``."""
    H = np.array(H, dtype=complex)
    for i, u in enumerate(system.users):
        sl = system.user_slice(i)
        nrm = np.linalg.norm(H[:, sl])
        if nrm == 0.0:
            raise ValueError(f"user {i} has an all-zero channel block")
        H[:, sl] *= np.sqrt(system.n_r * u.n_t) / nrm
    return H


def _normalize_sequence(Hs, system):
    """Per-user normalisation of the average block energy over a sequence."""
    Hs = np.array(Hs, dtype=complex)
    for i, u in enumerate(system.users):
        sl = system.user_slice(i)
        mean_energy = np.mean(np.sum(np.abs(Hs[:, :, sl]) ** 2, axis=(1, 2)))
        Hs[:, :, sl] *= np.sqrt(system.n_r * u.n_t / mean_energy)
    return Hs


def exponential_correlation(n, r):
    idx = np.arange(n)
    return r ** np.abs(idx[:, None] - idx[None, :])


def _psd_sqrt(C):
    w, U = np.linalg.eigh(C)
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.conj().T


def generate_iid_rayleigh(n_r, user_configs, count, rng, rx_corr=0.0, tx_corr=0.0,
                          normalize="realization"):
    """Draw ``count`` Rayleigh channels, optionally Kronecker correlated.

    ``normalize`` is ``"realization"`` (each draw scaled per user),
    ``"sequence"`` (the average over the ``count`` draws is scaled) or
    ``None``.
    """
    system = MimoSystem(n_r, tuple(user_configs))
    if count <= 0:
        return []
    N = system.N
    G = rng.complex_normal((count, n_r, N))
    if rx_corr:
        G = _psd_sqrt(exponential_correlation(n_r, rx_corr)) @ G
    if tx_corr:
        G = G @ _psd_sqrt(exponential_correlation(N, tx_corr))
    if normalize == "realization":
        G = np.stack([normalize_users(g, system) for g in G])
    elif normalize == "sequence":
        G = _normalize_sequence(G, system)
    elif normalize is not None:
        raise ValueError(f"unknown normalisation {normalize!r}")
    offsets = tuple(int(o) for o in system.stream_offsets)
    return [ChannelRealization(G[k], offsets, channel_id=k) for k in range(count)]


def generate_condition_candidates(n_r, user_configs, count, rng):
    """Normalised channels spread over a wide condition-number range.

    Each draw blends a scaled orthonormal-column matrix with an i.i.d. draw
    (pulls the condition number towards 0 dB) and applies a random
    exponential receive correlation (pushes it up), so stratified selection
    can fill every bin of ``[0, 25]`` dB.
    """
    system = MimoSystem(n_r, tuple(user_configs))
    N = system.N
    offsets = tuple(int(o) for o in system.stream_offsets)
    out = []
    for k in range(count):
        G = rng.complex_normal((n_r, N))
        mode = rng.uniform()
        if mode < 0.35:
            Q, _ = np.linalg.qr(rng.complex_normal((n_r, N)))
            t = rng.uniform(0.0, 1.0) ** 2
            G = (1.0 - t) * np.sqrt(n_r) * Q + t * G
        elif mode < 0.85:
            r = 1.0 - 10.0 ** rng.uniform(-3.0, 0.0)
            G = _psd_sqrt(exponential_correlation(n_r, r)) @ G
        H = normalize_users(G, system)
        out.append(ChannelRealization(H, offsets, channel_id=k))
    return out


def select_by_condition_number(channels, low_db, high_db, bins, per_bin, strict=True):
    """Stratified subset with condition numbers spread uniformly over bins.

    Candidates are taken in input order. With ``strict`` an incompletely
    filled bin raises :class:`InsufficientChannels` (carrying the partial
    selection); otherwise a warning is issued and the partial list returned.
    """
    if not low_db < high_db:
        raise ValueError("need low_db < high_db")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(low_db, high_db, bins + 1)
    chosen = [[] for _ in range(bins)]
    for ch in channels:
        kappa = ch.meta.get("kappa_db")
        if kappa is None:
            kappa = condition_number_db(ch.H)
            ch.meta["kappa_db"] = kappa
        if not (low_db <= kappa <= high_db):
            continue
        b = min(int(np.searchsorted(edges, kappa, side="right")) - 1, bins - 1)
        if len(chosen[b]) < per_bin:
            chosen[b].append(ch)
    selected = [ch for group in chosen for ch in group]
    shortfall = {b: per_bin - len(g) for b, g in enumerate(chosen) if len(g) < per_bin}
    if shortfall:
        msg = f"{len(shortfall)} of {bins} condition-number bins under-filled: {shortfall}"
        if strict:
            raise InsufficientChannels(msg, selected=selected, shortfall=shortfall)
        warnings.warn(msg)
    return selected


def simulate_batch(H, rho, S, system, rng, noise=True):
    """Received vectors ``Y`` of shape ``(B, n_r)`` for symbol rows ``S``."""
    H = np.asarray(H, dtype=complex)
    S = np.asarray(S, dtype=complex)
    if S.ndim != 2 or S.shape[1] != system.N or H.shape != (system.n_r, system.N):
        raise ShapeMismatch(f"H {H.shape} / S {S.shape} inconsistent with system")
    Heff = H * system.power_amplitudes(rho)[None, :]
    Y = S @ Heff.T
    if noise:
        Y = Y + rng.complex_normal((S.shape[0], system.n_r))
    return Y


def simulate_re(ch, rho, s, system, rng, noise=True):
    """One RE: ``y = sum_i sqrt(rho_i/n_t_i) H_i s_i + n`` as an ``(n_r, 1)`` column."""
    H = ch.H if isinstance(ch, ChannelRealization) else ch
    s = np.asarray(s, dtype=complex).reshape(1, -1)
    return simulate_batch(H, rho, s, system, rng, noise=noise)[0][:, None]


@dataclass
class NoiseModel:
    K_n: np.ndarray
    K_e: np.ndarray = None

    def __post_init__(self):
        self.K_n = np.asarray(self.K_n, dtype=complex)
        if self.K_e is None:
            self.K_e = np.zeros_like(self.K_n)
        self.K_e = np.asarray(self.K_e, dtype=complex)
        for name, K in (("K_n", self.K_n), ("K_e", self.K_e)):
            if np.max(np.abs(K - K.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(K))):
                raise NotPositiveDefinite(f"{name} is not Hermitian")
        if np.min(np.linalg.eigvalsh(self.K_n)) <= 0:
            raise NotPositiveDefinite("K_n must be positive definite")

    @classmethod
    def identity(cls, n_r):
        return cls(np.eye(n_r))

    @property
    def total(self):
        return self.K_n + self.K_e


def inverse_sqrt(K):
    """``U diag(lambda^-1/2) U^H`` of a Hermitian positive-definite matrix."""
    K = np.asarray(K, dtype=complex)
    if np.array_equal(K, np.diag(np.diag(K))):
        d = np.real(np.diag(K))
        if np.min(d) <= 0:
            raise NotPositiveDefinite("covariance is not positive definite")
        return np.diag(1.0 / np.sqrt(d)).astype(complex)
    K = 0.5 * (K + K.conj().T)
    w, U = np.linalg.eigh(K)
    if np.min(w) <= 0:
        raise NotPositiveDefinite("covariance is not positive definite")
    return (U * (1.0 / np.sqrt(w))) @ U.conj().T


def whiten(y, H_hat, noise):
    """Noise-whitened ``(y', H')``; ``y`` may be a column or a ``(B, n_r)`` batch."""
    W = inverse_sqrt(noise.total)
    y = np.asarray(y, dtype=complex)
    H_hat = np.asarray(H_hat, dtype=complex)
    if y.ndim == 2 and y.shape[1] == 1 and y.shape[0] == W.shape[0]:
        y_w = W @ y
    else:
        y_w = y @ W.T
    return y_w, W @ H_hat
