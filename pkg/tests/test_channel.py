import numpy as np
import pytest

from bmdrkit.channel import (ChannelRealization, MimoSystem, NoiseModel, UserConfig, generate_iid_rayleigh,
                             select_by_condition_number, simulate_re, whiten)
from bmdrkit.errors import InsufficientChannels
from bmdrkit.modem import build_qam
from bmdrkit.numerics import RngStream


def test_single_antenna_user_normalized_to_n_r():
    sysm = MimoSystem.uniform(16, 1)
    chans = generate_iid_rayleigh(16, sysm.users, 20, RngStream(0))
    for ch in chans:
        assert np.linalg.norm(ch.H) ** 2 == pytest.approx(16.0, rel=1e-12)


def test_zero_count_gives_empty_list():
    assert generate_iid_rayleigh(16, MimoSystem.uniform(16, 2).users, 0, RngStream(0)) == []


def test_identical_candidates_fill_one_bin_only():
    H = np.eye(4, 2, dtype=complex)
    chans = [ChannelRealization(H.copy(), (0, 1, 2), channel_id=k) for k in range(50)]
    with pytest.raises(InsufficientChannels):
        select_by_condition_number(chans, 0.0, 20.0, 10, 5)
    got = select_by_condition_number(chans, 0.0, 20.0, 10, 5, strict=False)
    assert len(got) == 5


def test_simulate_re_noiseless_identity():
    sysm = MimoSystem(2, (UserConfig(2, build_qam(2)),))
    s = np.array([1 + 1j, -1 + 1j]) / np.sqrt(2)
    y = simulate_re(np.eye(2), np.array([2.0]), s, sysm, RngStream(0), noise=False)
    assert np.allclose(y.ravel(), s, atol=0, rtol=1e-15)


def test_simulate_re_zero_power_gives_noise():
    sysm = MimoSystem.uniform(4, 2)
    y = simulate_re(np.ones((4, 2)), np.zeros(2), np.ones(2), sysm, RngStream(9))
    n = RngStream(9).complex_normal((1, 4))[0]
    assert np.allclose(y.ravel(), n)


def test_whiten_identity_and_scaling():
    r = RngStream(2)
    y, H = r.complex_normal((3, 1)), r.complex_normal((3, 2))
    y1, H1 = whiten(y, H, NoiseModel.identity(3))
    assert np.array_equal(y1, y) and np.array_equal(H1, H)
    y4, H4 = whiten(y, H, NoiseModel(4 * np.eye(3)))
    assert np.allclose(y4, y / 2) and np.allclose(H4, H / 2)


def test_system_rejects_too_many_streams():
    with pytest.raises(Exception):
        ChannelRealization(np.ones((2, 3)), (0, 3))
