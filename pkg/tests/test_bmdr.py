import numpy as np
import pytest

from bmdrkit.bmdr import (bit_metric_q, bmdr_mc_estimate, bmdr_mc_estimate_ce, bmdr_set, build_snr_bmdr_table,
                          gmi_s, gmi_sup, isotonic_increasing, lmmse_bmdr_predict, SnrBmdrTable)
from bmdrkit.channel import MimoSystem, NoiseModel, generate_iid_rayleigh
from bmdrkit.detect import LmmseDetector, MlDetector
from bmdrkit.errors import EmptySet
from bmdrkit.numerics import RngStream
from bmdrkit.oracles import GenieDetector, ZeroDetector

SYS = MimoSystem.uniform(4, 2)


def _channel(seed=0):
    return generate_iid_rayleigh(4, SYS.users, 1, RngStream(seed))[0]


def test_bit_metric_examples():
    assert bit_metric_q(0.0, 0) == 0.5 and bit_metric_q(0.0, 1) == 0.5
    assert bit_metric_q(np.log(3.0), 1) == pytest.approx(0.75, abs=1e-15)
    llr = RngStream(1).standard_normal(1000) * 10
    assert np.abs(bit_metric_q(llr, 1) - bit_metric_q(-llr, 0)).max() <= 1e-15


def test_zero_stub_gives_zero_bmdr():
    est = bmdr_mc_estimate(_channel(), np.ones(2), ZeroDetector(), SYS, 500, RngStream(0))
    assert all(e.value == 0.0 for e in est)


def test_genie_stub_saturates():
    est = bmdr_mc_estimate(_channel(), np.ones(2), GenieDetector(), SYS, 500, RngStream(0))
    expected = 1 + np.log2(1 / (1 + np.exp(-20.0)))
    assert all(abs(e.value - expected) < 1e-12 and abs(e.value - 1) < 1e-8 for e in est)


def test_perfect_csi_matches_plain_estimate():
    ch = _channel()
    a = bmdr_mc_estimate(ch, np.ones(2), LmmseDetector(), SYS, 1000, RngStream(4))
    b = bmdr_mc_estimate_ce(ch, ch, NoiseModel.identity(4), np.ones(2), LmmseDetector(), SYS, 1000, RngStream(4))
    assert [e.value for e in a] == [e.value for e in b]


def test_set_singleton_and_duplicates():
    ch = _channel(2)
    rng = RngStream(8)
    single = bmdr_set([ch], np.ones(2), LmmseDetector(), SYS, 500, rng)
    direct = bmdr_mc_estimate(ch, np.ones(2), LmmseDetector(), SYS, 500, rng.substream("channel", ch.channel_id))
    assert [e.value for e in single] == [e.value for e in direct]
    dup = bmdr_set([ch, ch, ch], np.ones(2), LmmseDetector(), SYS, 500, rng)
    assert [e.value for e in dup] == pytest.approx([e.value for e in single], abs=1e-15)


def test_set_mean_is_exact_average():
    chans = generate_iid_rayleigh(4, SYS.users, 30, RngStream(3))
    est = bmdr_set(chans, np.ones(2), LmmseDetector(), SYS, 200, RngStream(1))
    for e in est:
        assert e.value == e.per_channel.sum() / 30


def test_empty_set_rejected():
    with pytest.raises(EmptySet):
        bmdr_set([], np.ones(2), LmmseDetector(), SYS, 10, RngStream(0))


def test_gmi_at_one_equals_pre_floor_bmdr():
    ch = _channel(5)
    g = gmi_s(ch, np.full(2, 0.3), MlDetector(), SYS, 1.0, 800, RngStream(2), floor=False)
    b = bmdr_mc_estimate(ch, np.full(2, 0.3), MlDetector(), SYS, 800, RngStream(2))
    assert np.allclose(g, [e.pre_floor for e in b], rtol=0, atol=1e-15)


def test_gmi_zero_stub():
    for s in (0.2, 1.0, 2.5):
        assert np.all(gmi_s(_channel(), np.ones(2), ZeroDetector(), SYS, s, 200, RngStream(0)) == 0.0)
    for s_star, value in gmi_sup(_channel(), np.ones(2), ZeroDetector(), SYS, 200, RngStream(0)):
        assert value == 0.0


def test_gmi_rejects_non_positive_s():
    with pytest.raises(ValueError):
        gmi_s(_channel(), np.ones(2), ZeroDetector(), SYS, 0.0, 10, RngStream(0))


def test_snr_table_asymptotes_and_monotone():
    t = build_snr_bmdr_table(2, np.arange(-40.0, 40.01, 2.0), 20_000, RngStream(0))
    assert t.bmdr[0] < 0.01 and t.bmdr[-1] > 0.99
    assert np.all(np.diff(t.bmdr) >= 0)


def test_snr_table_roundtrip_bytes():
    t = build_snr_bmdr_table(4, np.arange(-10.0, 10.01, 1.0), 2000, RngStream(0))
    back = SnrBmdrTable.from_bytes(t.to_bytes())
    assert np.array_equal(back.bmdr, t.bmdr) and back.m == 4


def test_isotonic_fit_is_monotone_and_mean_preserving():
    y = RngStream(0).standard_normal(50)
    fit = isotonic_increasing(y)
    assert np.all(np.diff(fit) >= -1e-15) and fit.sum() == pytest.approx(y.sum())


def test_prediction_clamps_below_table():
    tables = {2: build_snr_bmdr_table(2, np.arange(-10.0, 10.01, 1.0), 2000, RngStream(0))}
    est = lmmse_bmdr_predict(_channel().H, np.full(2, 1e-6), SYS, tables)
    assert all(e.clamped and e.value == pytest.approx(tables[2].bmdr[0]) for e in est)


def test_prediction_monotone_in_own_power():
    tables = {2: build_snr_bmdr_table(2, np.arange(-20.0, 30.01, 0.5), 5000, RngStream(0))}
    H = _channel(7).H
    prev = -1.0
    for db in np.arange(-20, 20.1, 1.0):
        v = lmmse_bmdr_predict(H, np.array([10 ** (db / 10), 1.0]), SYS, tables)[0].value
        assert v >= prev
        prev = v
