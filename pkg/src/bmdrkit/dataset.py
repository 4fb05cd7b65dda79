"""Labelled-data generation (QR features, per-user BMDR labels) and persistence.

Binary layout, all little endian::

    magic   4s   b"BMDR" (datasets) or b"BMCH" (channel sets)
    version u16
    n_users u16
    n_r     u16
    flags   u16
    n_t, m  2 x u16 per user
    det_len u16, detector id (utf-8, det_len bytes)
    count   u64  (patched after the records are appended)

A dataset record is ``(2N)^2`` float32 features (row major), ``n_users``
float32 labels, a u32 channel id and ``n_users`` float32 powers in dB. A
channel-set record is a u32 channel id, a float64 condition number (dB)
and the ``n_r x N`` complex128 matrix.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .bmdr import bmdr_mc_estimate
from .channel import ChannelRealization, MimoSystem, UserConfig, normalize_users
from .errors import BadFractions, BadMagic, RankDeficient, ShapeMismatch, TruncatedFile, VersionMismatch
from .modem import build_qam
from .numerics import qr_decompose, real_embed_matrix

log = logging.getLogger(__name__)

DATASET_MAGIC = b"BMDR"
CHANNEL_MAGIC = b"BMCH"
FORMAT_VERSION = 1


@dataclass
class FeatureRecord:
    features: np.ndarray
    labels: np.ndarray
    channel_id: int
    rho_db: np.ndarray


@dataclass
class Dataset:
    """Column-oriented collection of :class:`FeatureRecord` rows."""

    system: MimoSystem
    detector: str
    features: np.ndarray
    labels: np.ndarray
    channel_id: np.ndarray
    rho_db: np.ndarray

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, k):
        return FeatureRecord(self.features[k], self.labels[k], int(self.channel_id[k]), self.rho_db[k])

    def records(self):
        return [self[k] for k in range(len(self))]

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return Dataset(self.system, self.detector, self.features[index], self.labels[index],
                       self.channel_id[index], self.rho_db[index])

    @classmethod
    def from_records(cls, records, system, detector=""):
        records = list(records)
        side = 2 * system.N
        if not records:
            return cls(system, detector, np.zeros((0, side, side)), np.zeros((0, system.n_users)),
                       np.zeros(0, dtype=np.int64), np.zeros((0, system.n_users)))
        return cls(
            system, detector,
            np.stack([r.features for r in records]),
            np.stack([np.asarray(r.labels, dtype=float) for r in records]),
            np.array([r.channel_id for r in records], dtype=np.int64),
            np.stack([np.asarray(r.rho_db, dtype=float) for r in records]),
        )


def _as_system(user_configs, n_r):
    if isinstance(user_configs, MimoSystem):
        return user_configs
    return MimoSystem(n_r, tuple(user_configs))


def power_feature(R, system, rho):
    """``R @ Omega^R``: columns of ``R`` scaled by the per-stream amplitudes."""
    amp = system.power_amplitudes(rho)
    return R * np.concatenate([amp, amp])[None, :]


def channel_feature(H, system, rho, normalize=True):
    """Feature matrix for a raw complex channel (same path as label generation)."""
    H = H.H if isinstance(H, ChannelRealization) else np.asarray(H, dtype=complex)
    if normalize:
        H = normalize_users(H, system)
    _, R = qr_decompose(real_embed_matrix(H))
    return power_feature(R, system, rho)


def _labels_for_channel(ch, system, detector, n_samp, n_p, rng):
    H = normalize_users(ch.H, system)
    _, R = qr_decompose(real_embed_matrix(H))
    sub = rng.substream("channel", ch.channel_id)
    power_rng = sub.substream("power")
    lo = np.array([u.rho_db_range[0] for u in system.users])
    hi = np.array([u.rho_db_range[1] for u in system.users])
    out = []
    for p in range(n_p):
        rho_db = power_rng.uniform(lo, hi)
        rho = 10.0 ** (rho_db / 10.0)
        ests = bmdr_mc_estimate(H, rho, detector, system, n_samp, sub.substream("mc", p))
        labels = np.array([e.value for e in ests])
        out.append(FeatureRecord(power_feature(R, system, rho), labels, ch.channel_id, rho_db))
    return out


def generate_labels(channels, user_configs, detector, n_samp, n_p, rng, jobs=1):
    """Labelled features for every channel and ``n_p`` random power draws.

    Channels whose real embedding is rank deficient are skipped and logged.
    Records come out grouped by channel in input order.
    """
    channels = list(channels)
    if not channels:
        raise ValueError("channel set is empty")
    if n_samp < 1 or n_p < 1:
        raise ValueError("n_samp and n_p must be >= 1")
    system = _as_system(user_configs, channels[0].H.shape[0])

    def work(ch):
        try:
            return _labels_for_channel(ch, system, detector, n_samp, n_p, rng)
        except RankDeficient:
            log.warning("channel %s is rank deficient; skipped", ch.channel_id)
            return []

    if jobs and jobs > 1:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=jobs)(delayed(work)(ch) for ch in channels)
    else:
        chunks = [work(ch) for ch in channels]
    records = [r for chunk in chunks for r in chunk]
    return Dataset.from_records(records, system, getattr(detector, "name", str(detector)))


# ----------------------------------------------------------------- binary io


def _pack_header(magic, system, detector, count):
    det = detector.encode("utf-8")
    parts = [magic, struct.pack("<HHHH", FORMAT_VERSION, system.n_users, system.n_r, 0)]
    for u in system.users:
        parts.append(struct.pack("<HH", u.n_t, u.m))
    parts.append(struct.pack("<H", len(det)))
    parts.append(det)
    parts.append(struct.pack("<Q", count))
    return b"".join(parts)


def _read_header(fh, magic):
    head = fh.read(12)
    if len(head) < 12:
        raise TruncatedFile("header truncated")
    if head[:4] != magic:
        raise BadMagic(f"expected {magic!r}, got {head[:4]!r}")
    version, n_users, n_r, _flags = struct.unpack("<HHHH", head[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version} unsupported (expected {FORMAT_VERSION})")
    raw = fh.read(4 * n_users + 2)
    if len(raw) < 4 * n_users + 2:
        raise TruncatedFile("header truncated")
    users = []
    for i in range(n_users):
        n_t, m = struct.unpack("<HH", raw[4 * i:4 * i + 4])
        users.append(UserConfig(n_t, build_qam(m)))
    (det_len,) = struct.unpack("<H", raw[-2:])
    det = fh.read(det_len)
    cnt = fh.read(8)
    if len(det) < det_len or len(cnt) < 8:
        raise TruncatedFile("header truncated")
    (count,) = struct.unpack("<Q", cnt)
    return MimoSystem(n_r, tuple(users)), det.decode("utf-8"), count


def _record_dtype(system):
    side = 2 * system.N
    return np.dtype([
        ("features", "<f4", (side, side)),
        ("labels", "<f4", (system.n_users,)),
        ("channel_id", "<u4"),
        ("rho_db", "<f4", (system.n_users,)),
    ])


def record_size(system):
    return _record_dtype(system).itemsize


def save_dataset(ds, path):
    """Write a :class:`Dataset`; the record count is patched in last."""
    rec = np.zeros(len(ds), dtype=_record_dtype(ds.system))
    if len(ds):
        rec["features"] = ds.features
        rec["labels"] = ds.labels
        rec["channel_id"] = ds.channel_id
        rec["rho_db"] = ds.rho_db
    with open(path, "wb") as fh:
        fh.write(_pack_header(DATASET_MAGIC, ds.system, ds.detector, 0))
        fh.write(rec.tobytes())
        fh.seek(-8 - rec.nbytes, 2)
        fh.write(struct.pack("<Q", len(ds)))


def load_dataset(path):
    with open(path, "rb") as fh:
        system, det, count = _read_header(fh, DATASET_MAGIC)
        dt = _record_dtype(system)
        body = fh.read()
    if len(body) < count * dt.itemsize:
        raise TruncatedFile(f"expected {count} records, file holds {len(body) // dt.itemsize}")
    rec = np.frombuffer(body, dtype=dt, count=count)
    return Dataset(system, det, rec["features"].astype(np.float32), rec["labels"].astype(np.float32),
                   rec["channel_id"].astype(np.int64), rec["rho_db"].astype(np.float32))


def export_csv(ds, path):
    side = 2 * ds.system.N
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel_id"]
                   + [f"rho_db_{i}" for i in range(ds.system.n_users)]
                   + [f"label_{i}" for i in range(ds.system.n_users)]
                   + [f"f_{r}_{c}" for r in range(side) for c in range(side)])
        for k in range(len(ds)):
            w.writerow([int(ds.channel_id[k])]
                       + [repr(float(v)) for v in ds.rho_db[k]]
                       + [repr(float(v)) for v in ds.labels[k]]
                       + [repr(float(v)) for v in np.ravel(ds.features[k])])


def split_dataset(ds, fractions, rng):
    """Split by channel id into ``(train, validation, test)``."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three non-negative values summing to 1, got {fractions}")
    ids = np.unique(ds.channel_id)
    ids = ids[rng.permutation(len(ids))]
    n_train = int(round(fractions[0] * len(ids)))
    n_val = min(int(round(fractions[1] * len(ids))), len(ids) - n_train)
    groups = (ids[:n_train], ids[n_train:n_train + n_val], ids[n_train + n_val:])
    return tuple(ds.subset(np.flatnonzero(np.isin(ds.channel_id, g))) for g in groups)


# ------------------------------------------------------------ channel sets


def save_channels(channels, system, path):
    channels = list(channels)
    N = system.N
    dt = np.dtype([("channel_id", "<u4"), ("kappa_db", "<f8"), ("H", "<c16", (system.n_r, N))])
    rec = np.zeros(len(channels), dtype=dt)
    for k, ch in enumerate(channels):
        if ch.H.shape != (system.n_r, N):
            raise ShapeMismatch("channel shape does not match system")
        rec[k]["channel_id"] = ch.channel_id
        rec[k]["kappa_db"] = ch.meta.get("kappa_db", np.nan)
        rec[k]["H"] = ch.H
    with open(path, "wb") as fh:
        fh.write(_pack_header(CHANNEL_MAGIC, system, "", len(channels)))
        fh.write(rec.tobytes())


def load_channels(path):
    with open(path, "rb") as fh:
        system, _, count = _read_header(fh, CHANNEL_MAGIC)
        dt = np.dtype([("channel_id", "<u4"), ("kappa_db", "<f8"), ("H", "<c16", (system.n_r, system.N))])
        body = fh.read()
    if len(body) < count * dt.itemsize:
        raise TruncatedFile("channel file truncated")
    rec = np.frombuffer(body, dtype=dt, count=count)
    offsets = tuple(int(o) for o in system.stream_offsets)
    out = []
    for r in rec:
        ch = ChannelRealization(r["H"].copy(), offsets, channel_id=int(r["channel_id"]))
        if np.isfinite(r["kappa_db"]):
            ch.meta["kappa_db"] = float(r["kappa_db"])
        out.append(ch)
    return system, out
