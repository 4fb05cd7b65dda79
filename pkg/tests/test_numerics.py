import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmdrkit.errors import NonFiniteInput
from bmdrkit.numerics import (RngStream, complex_from_real_vector, condition_number_db, qr_decompose,
                              real_embed_matrix, real_embed_vector)


def test_embed_real_scalar_is_identity():
    assert np.array_equal(real_embed_matrix(np.array([[1 + 0j]])), np.eye(2))


def test_embed_imaginary_unit_is_rotation():
    assert np.array_equal(real_embed_matrix(np.array([[1j]])), np.array([[0.0, -1.0], [1.0, 0.0]]))


def test_embed_vector_examples():
    assert np.array_equal(real_embed_vector(np.array([[1 + 2j]])).ravel(), [1.0, 2.0])
    assert not np.any(real_embed_vector(np.zeros((3, 1), complex)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_embed_is_multiplicative(seed):
    r = RngStream(seed)
    X, Y = r.complex_normal((2, 3)), r.complex_normal((3, 2))
    assert np.abs(real_embed_matrix(X @ Y) - real_embed_matrix(X) @ real_embed_matrix(Y)).max() < 1e-12


def test_complex_from_real_roundtrip():
    x = RngStream(1).complex_normal((4, 1))
    assert np.allclose(complex_from_real_vector(real_embed_vector(x)).ravel(), x.ravel())


def test_qr_identity_and_diagonal():
    Q, R = qr_decompose(np.eye(4))
    assert np.allclose(Q, np.eye(4)) and np.allclose(R, np.eye(4))
    _, R = qr_decompose(np.diag([2.0, 3.0]))
    assert np.allclose(R, np.diag([2.0, 3.0]))


def test_qr_positive_diagonal_and_reconstruction():
    A = real_embed_matrix(RngStream(3).complex_normal((4, 4)))
    Q, R = qr_decompose(A)
    assert np.all(np.diag(R) > 0)
    assert np.abs(Q @ R - A).max() < 1e-10
    assert np.abs(Q.T @ Q - np.eye(8)).max() < 1e-10


def test_qr_rejects_non_finite():
    A = np.eye(2)
    A[0, 1] = np.nan
    with pytest.raises(NonFiniteInput):
        qr_decompose(A)


def test_condition_number_examples():
    assert condition_number_db(np.eye(3)) == pytest.approx(0.0, abs=1e-12)
    assert condition_number_db(np.diag([10.0, 1.0])) == pytest.approx(20.0, abs=1e-12)


def test_rng_substreams_replay_and_differ():
    a = RngStream(5).substream("x", 2).standard_normal(4)
    b = RngStream(5).substream("x", 2).standard_normal(4)
    c = RngStream(5).substream("x", 3).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
