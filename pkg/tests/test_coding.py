import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmdrkit.channel import MimoSystem, generate_iid_rayleigh
from bmdrkit.coding import (Interleaver, ParityCheckMatrix, bp_decode, builtin_code, cer_simulate, encode,
                            extract_message, format_alist, gf2_rank, load_alist, make_ira_code, parse_alist,
                            save_alist, wilson_interval)
from bmdrkit.detect import MlDetector
from bmdrkit.errors import BudgetMismatch, InconsistentAdjacency, LengthMismatch, ParseError
from bmdrkit.numerics import RngStream

TOY = ParityCheckMatrix(6, ((0, 1, 3), (1, 2, 4), (0, 2, 5)))


def test_toy_alist_roundtrip(tmp_path):
    save_alist(TOY, tmp_path / "toy.alist")
    back = load_alist(tmp_path / "toy.alist")
    assert back.n == 6 and [r.tolist() for r in back.rows] == [r.tolist() for r in TOY.rows]


def test_hamming_dimensions():
    H = builtin_code("hamming74")
    assert (H.n, H.k) == (7, 4)


def test_ldpc_dimensions():
    H = builtin_code("ldpc648")
    assert (H.n, H.k, H.rank) == (648, 432, 216)


def test_alist_errors():
    with pytest.raises(ParseError):
        parse_alist("3 2\n")
    bad = format_alist(TOY).splitlines()
    bad[4] = "1 2 0"  # column 1 disagrees with the row lists
    with pytest.raises(InconsistentAdjacency):
        parse_alist("\n".join(bad))


def test_zero_message_encodes_to_zero():
    H = builtin_code("ldpc648")
    assert not encode(H, np.zeros(432, dtype=int)).any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_codewords_closed_under_addition(seed):
    H = builtin_code("ldpc648")
    r = RngStream(seed)
    a, b = encode(H, r.bits(432)), encode(H, r.bits(432))
    assert not H.syndrome((a + b) % 2).any()


def test_systematic_message_extraction():
    H = builtin_code("hamming74")
    m = np.array([1, 0, 1, 1])
    assert np.array_equal(extract_message(H, encode(H, m)), m)


def test_ira_construction_full_rank():
    H = make_ira_code(60, 40, RngStream(1))
    assert gf2_rank(H.dense) == 20 and H.k == 40


def test_interleaver_identity_and_roundtrip():
    x = RngStream(0).standard_normal(20)
    ident = Interleaver(20, perm=np.arange(20))
    assert np.array_equal(ident.interleave(x), x)
    il = Interleaver(20, seed=3)
    assert np.array_equal(il.deinterleave(il.interleave(x)), x)
    with pytest.raises(LengthMismatch):
        il.interleave(np.zeros(19))


def test_all_zero_strong_llrs_decode_in_one_iteration():
    H = builtin_code("ldpc648")
    bits, ok, iters = bp_decode(H, np.full(648, -20.0))
    assert ok and iters == 1 and not bits.any()


def test_bp_corrects_noisy_codeword():
    H = builtin_code("ldpc648")
    r = RngStream(5)
    c = encode(H, r.bits(432))
    llr = 4.0 * ((2.0 * c - 1.0) + 0.6 * r.standard_normal(648))
    bits, ok, _ = bp_decode(H, llr)
    assert ok and np.array_equal(bits, c)


def test_wilson_interval_brackets_rate():
    lo, hi = wilson_interval(10, 100)
    assert lo < 0.1 < hi


def test_cer_extremes():
    sysm = MimoSystem.uniform(2, 1)
    chans = generate_iid_rayleigh(2, sysm.users, 3, RngStream(0))
    H = builtin_code("ldpc648")
    res = cer_simulate(chans, H, Interleaver(648, seed=1), MlDetector(), sysm, [-40.0, 20.0], 10, RngStream(1),
                       n_samp_bmdr=100)
    assert res.cer[0, 0] == 1.0 and res.cer[1, 0] == 0.0
    assert res.bmdr[0, 0] < res.bmdr[1, 0]


def test_cer_budget_mismatch():
    sysm = MimoSystem.uniform(2, 1)
    chans = generate_iid_rayleigh(2, sysm.users, 1, RngStream(0))
    with pytest.raises(BudgetMismatch):
        cer_simulate(chans, builtin_code("hamming74"), Interleaver(7), MlDetector(), sysm, [0.0], 1, RngStream(0))
