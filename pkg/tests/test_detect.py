import numpy as np
import pytest

from bmdrkit.channel import MimoSystem
from bmdrkit.detect import (LLR_CLIP, KBestDetector, LmmseDetector, MlDetector, kbest_llr, lmmse_llr,
                            make_detector, ml_llr, post_eq_sinr)
from bmdrkit.errors import TooLarge
from bmdrkit.numerics import RngStream


def test_lmmse_siso_reduces_to_scalar_awgn():
    sysm = MimoSystem.uniform(1, 1)
    y = np.array([[0.3 - 0.7j]])
    llr = lmmse_llr(y, np.ones((1, 1)), sysm)[0]
    assert post_eq_sinr(np.ones((1, 1)), np.array([1.0]), sysm)[0] == pytest.approx(1.0)
    # matched-filter output h^H y with |h| = 1, rho = 1; bit 0 sits on the positive side
    assert llr[0] == pytest.approx(-2 * np.sqrt(2) * 0.3, rel=1e-12)
    assert llr[1] == pytest.approx(-2 * np.sqrt(2) * -0.7, rel=1e-12)


def test_lmmse_simo_unit_norm_channel():
    sysm = MimoSystem.uniform(4, 1)
    h = RngStream(3).complex_normal((4, 1))
    h /= np.linalg.norm(h)
    y = RngStream(4).complex_normal((1, 4))
    z = (h.conj().T @ y.T)[0, 0]
    llr = lmmse_llr(y, h, sysm)[0]
    assert np.allclose(llr, [-2 * np.sqrt(2) * z.real, -2 * np.sqrt(2) * z.imag], rtol=1e-12)


def test_zero_column_gives_zero_sinr_and_llrs():
    sysm = MimoSystem.uniform(4, 2)
    H = RngStream(0).complex_normal((4, 2))
    H[:, 1] = 0
    assert post_eq_sinr(H, np.ones(2), sysm)[1] == 0.0
    llr = lmmse_llr(RngStream(1).complex_normal((5, 4)), H, sysm)
    assert np.all(llr[:, 2:] == 0.0)


def test_orthogonal_columns_sinr():
    sysm = MimoSystem.uniform(4, 2)
    g = 3.0
    H = np.sqrt(g) * np.eye(4, 2)
    assert np.allclose(post_eq_sinr(H, np.array([2.0, 0.5]), sysm), [2.0 * g, 0.5 * g], rtol=1e-12)


def test_sinr_vanishes_with_power():
    sysm = MimoSystem.uniform(4, 2)
    H = RngStream(2).complex_normal((4, 2))
    assert np.all(post_eq_sinr(H, np.full(2, 1e-12), sysm) < 1e-10)


def test_ml_noiseless_certainty():
    sysm = MimoSystem.uniform(1, 1)
    y = np.array([[100.0 * (1 + 1j) / np.sqrt(2)]])
    for mode in ("exact", "maxlog"):
        llr = ml_llr(y, np.ones((1, 1)), sysm, mode)[0]
        # the point carries bits (0, 0); bit 0 means a negative LLR
        assert np.all(llr == -LLR_CLIP)


def test_ml_equidistant_is_zero():
    sysm = MimoSystem.uniform(1, 1)
    assert np.all(ml_llr(np.zeros((1, 1)), np.ones((1, 1)), sysm, "exact") == 0.0)


def test_kbest_single_stream_equals_maxlog():
    sysm = MimoSystem.uniform(2, 1, m=4)
    r = RngStream(7)
    H = r.complex_normal((2, 1))
    Y = r.complex_normal((50, 2)) * 2
    assert np.allclose(kbest_llr(Y, H, sysm, 16), ml_llr(Y, H, sysm, "maxlog"), atol=1e-9)


def test_ml_refuses_huge_enumeration():
    sysm = MimoSystem.uniform(8, 4, m=6)
    with pytest.raises(TooLarge):
        ml_llr(np.zeros((1, 8)), np.eye(8, 4), sysm)


def test_make_detector_specs():
    assert isinstance(make_detector("lmmse"), LmmseDetector)
    assert isinstance(make_detector("ml"), MlDetector)
    d = make_detector("kbest:K=32")
    assert isinstance(d, KBestDetector) and d.K == 32
    with pytest.raises(ValueError):
        make_detector("viterbi")


def test_llr_single_vector_returns_per_user_matrices():
    sysm = MimoSystem.uniform(4, 2)
    H = RngStream(5).complex_normal((4, 2))
    out = LmmseDetector().llr(RngStream(6).complex_normal((4, 1)), H, sysm)
    assert len(out) == 2 and out[0].shape == (1, 2)
