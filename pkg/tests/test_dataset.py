import numpy as np
import pytest

from bmdrkit.channel import MimoSystem, UserConfig, generate_iid_rayleigh
from bmdrkit.dataset import (Dataset, channel_feature, export_csv, generate_labels, load_channels, load_dataset,
                             record_size, save_channels, save_dataset, split_dataset)
from bmdrkit.detect import LmmseDetector
from bmdrkit.errors import BadFractions, BadMagic, TruncatedFile, VersionMismatch
from bmdrkit.modem import build_qam
from bmdrkit.numerics import RngStream
from bmdrkit.oracles import ZeroDetector

SYS = MimoSystem.uniform(8, 2)


def _ds(n_ch=4, n_p=3, det=None, system=SYS):
    chans = generate_iid_rayleigh(system.n_r, system.users, n_ch, RngStream(1))
    return generate_labels(chans, system, det or LmmseDetector(), 100, n_p, RngStream(2))


def test_zero_stub_labels_are_zero():
    assert np.all(_ds(det=ZeroDetector()).labels == 0.0)


def test_record_count_features_and_labels():
    ds = _ds(5, 4)
    assert len(ds) == 20
    assert np.all(np.tril(ds.features, -1) == 0)
    assert np.all((ds.labels >= 0) & (ds.labels <= 1))


def test_power_ranges_per_constellation():
    sysm = MimoSystem(8, (UserConfig(1, build_qam(2)), UserConfig(1, build_qam(4)), UserConfig(1, build_qam(6))))
    ds = _ds(3, 20, system=sysm)
    for i, (lo, hi) in enumerate([(-16, -6), (-8, 0), (-4, 10)]):
        assert ds.rho_db[:, i].min() >= lo and ds.rho_db[:, i].max() <= hi


def test_feature_matches_channel_path():
    chans = generate_iid_rayleigh(8, SYS.users, 1, RngStream(1))
    ds = generate_labels(chans, SYS, ZeroDetector(), 10, 2, RngStream(2))
    rho = 10 ** (ds.rho_db[1] / 10)
    assert np.allclose(channel_feature(chans[0].H, SYS, rho), ds.features[1], atol=1e-12)


def test_labels_replay_with_seed():
    a, b = _ds(), _ds()
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.features, b.features)


def test_parallel_labels_match_serial():
    chans = generate_iid_rayleigh(8, SYS.users, 3, RngStream(1))
    a = generate_labels(chans, SYS, LmmseDetector(), 50, 2, RngStream(2))
    b = generate_labels(chans, SYS, LmmseDetector(), 50, 2, RngStream(2), jobs=2)
    assert np.array_equal(a.labels, b.labels)


def test_empty_and_single_roundtrip(tmp_path):
    empty = Dataset.from_records([], SYS, "lmmse")
    save_dataset(empty, tmp_path / "e.bin")
    assert len(load_dataset(tmp_path / "e.bin")) == 0
    one = _ds(1, 1)
    one = one.subset([0])
    one.features = one.features.astype(np.float32)
    one.labels = one.labels.astype(np.float32)
    one.rho_db = one.rho_db.astype(np.float32)
    save_dataset(one, tmp_path / "o.bin")
    back = load_dataset(tmp_path / "o.bin")
    for f in ("features", "labels", "channel_id", "rho_db"):
        assert np.array_equal(getattr(back, f), getattr(one, f))
    assert back.detector == "lmmse" and back.system == SYS


def test_file_errors(tmp_path):
    ds = _ds(1, 2)
    p = tmp_path / "d.bin"
    save_dataset(ds, p)
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(TruncatedFile):
        load_dataset(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagic):
        load_dataset(tmp_path / "m.bin")
    (tmp_path / "v.bin").write_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    with pytest.raises(VersionMismatch):
        load_dataset(tmp_path / "v.bin")
    assert record_size(SYS) == 4 * (16 + 2 + 1 + 2)


def test_split_examples():
    ds = _ds(4, 2)
    tr, va, te = split_dataset(ds, (1, 0, 0), RngStream(0))
    assert len(tr) == len(ds) and len(va) == len(te) == 0
    two = _ds(2, 3)
    tr, va, te = split_dataset(two, (0.5, 0, 0.5), RngStream(0))
    assert len(tr) == len(te) == 3
    assert set(tr.channel_id) != set(te.channel_id)


def test_split_rejects_bad_fractions():
    with pytest.raises(BadFractions):
        split_dataset(_ds(2, 1), (0.5, 0.2, 0.1), RngStream(0))


def test_channel_file_roundtrip(tmp_path):
    chans = generate_iid_rayleigh(8, SYS.users, 5, RngStream(4))
    save_channels(chans, SYS, tmp_path / "c.bin")
    sysm, back = load_channels(tmp_path / "c.bin")
    assert sysm == SYS
    assert all(np.array_equal(a.H, b.H) and a.channel_id == b.channel_id for a, b in zip(chans, back))


def test_export_csv(tmp_path):
    export_csv(_ds(1, 2), tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len([ln for ln in lines if not ln.startswith("#")]) == 3
