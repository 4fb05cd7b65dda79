import itertools

import numpy as np
import pytest

from bmdrkit.errors import UnsupportedOrder
from bmdrkit.modem import awgn_llr, build_qam, demap_symbols, map_bits


def test_qpsk_points_and_energy():
    c = build_qam(2)
    expected = {complex(a, b) / np.sqrt(2) for a in (1, -1) for b in (1, -1)}
    assert {complex(np.round(p, 12)) for p in c.points} == {complex(np.round(p, 12)) for p in expected}
    assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-15)


def test_16qam_amplitudes_and_energy():
    c = build_qam(4)
    re = np.unique(np.round(c.points.real * np.sqrt(10), 12))
    assert np.array_equal(re, [-3.0, -1.0, 1.0, 3.0])
    assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-15)


def test_gray_anchor():
    s = map_bits(np.array([[0, 0]]), build_qam(2))
    assert s.shape == (1, 1)
    assert s[0, 0] == pytest.approx((1 + 1j) / np.sqrt(2))


def test_qpsk_roundtrip_all_inputs():
    c = build_qam(2)
    for bits in itertools.product((0, 1), repeat=2):
        B = np.array([bits])
        assert np.array_equal(demap_symbols(map_bits(B, c), c), B)


def test_16qam_neighbours_differ_in_one_bit():
    c = build_qam(4)
    d = np.abs(c.points[:, None] - c.points[None, :])
    dmin = d[d > 0].min()
    for a, b in zip(*np.nonzero(np.isclose(d, dmin))):
        assert np.sum(c.labels[a] != c.labels[b]) == 1


def test_odd_order_rejected():
    with pytest.raises(UnsupportedOrder):
        build_qam(3)


def test_awgn_llr_sign_follows_bits():
    c = build_qam(2)
    z = 10.0 * c.points
    llr = awgn_llr(z, 100.0, c)
    assert np.array_equal(llr > 0, c.labels == 1)
