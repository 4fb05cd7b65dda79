import numpy as np
import pytest

from bmdrkit.channel import MimoSystem
from bmdrkit.cnn import (CnnModel, TrainConfig, augment_sign, load_model, loss, loss_and_grad, param_count,
                         predict, save_model, train)
from bmdrkit.dataset import Dataset
from bmdrkit.errors import ArchMismatch, DivisionByZeroLabel, TruncatedFile
from bmdrkit.numerics import RngStream

SYS = MimoSystem.uniform(16, 4)


def _model(seed=0):
    return CnnModel(8, rng=RngStream(seed))


def _features(n, seed=1):
    return np.triu(RngStream(seed).standard_normal((n, 8, 8)))


def _dataset(n=40):
    r = RngStream(3)
    return Dataset(SYS, "x", _features(n), r.uniform(0.2, 0.9, (n, 4)), np.arange(n), np.zeros((n, 4)))


def test_parameter_count_and_shapes():
    assert param_count() == 5929 and _model().n_params == 5929
    assert _model().shape_trace(5) == [(5, 8, 8, 32), (5, 8, 8, 16), (5, 7, 7, 8), (5, 392), (5, 8), (5, 4),
                                       (5, 1)]


def test_zero_model_outputs_zero():
    assert CnnModel(8, init="zeros").forward(_features(1)[0]) == 0.0


def test_dead_unit_gets_zero_gradient():
    m = _model()
    m.param("fc2_b")[0] = -1e6
    _, g = loss_and_grad(m, _features(8), np.full(8, 0.5), "absolute")
    j = m.offsets[list(m.shapes).index("fc2_w")]
    w = g[j:j + m.param("fc2_w").size].reshape(m.param("fc2_w").shape)
    assert np.all(w[:, 0] == 0.0)


def test_duplicated_batch_gradient_equals_single():
    m = _model()
    m.param("fc3_b")[...] = 0.4
    X = _features(1)
    _, g1 = loss_and_grad(m, X, [0.3], "normalized")
    _, g3 = loss_and_grad(m, np.repeat(X, 3, axis=0), [0.3] * 3, "normalized")
    assert np.allclose(g1, g3, rtol=1e-12, atol=1e-15)


def test_loss_examples():
    assert loss([0.4, 0.7], [0.4, 0.7]) == 0.0
    assert loss([0.5], [0.25], "normalized") == 0.5
    with pytest.raises(DivisionByZeroLabel):
        loss([0.0], [0.1], "normalized")


def test_augment_sign_examples():
    R = _features(1)[0]
    assert np.array_equal(augment_sign(R, "right", d=np.ones(8)), R)
    neg = augment_sign(R, "right", d=-np.ones(8))
    assert np.array_equal(neg, -R) and np.all(np.tril(neg, -1) == 0)
    left = augment_sign(R, "left", d=np.r_[1, -1, 1, 1, 1, 1, 1, 1])
    assert np.array_equal(left[1], -R[1])


def test_zero_learning_rate_keeps_parameters():
    m = _model()
    theta = m.theta.copy()
    out, _ = train(m, _dataset(), TrainConfig(learning_rate=0.0, max_epochs=3, batch_size=8))
    assert np.array_equal(out.theta, theta)


def test_zero_epochs_keeps_initialisation():
    m = _model()
    theta = m.theta.copy()
    out, hist = train(m, _dataset(), TrainConfig(max_epochs=0))
    assert np.array_equal(out.theta, theta) and hist.train_loss == []


def test_training_is_deterministic():
    cfg = TrainConfig(max_epochs=3, batch_size=8, seed=4)
    a, ha = train(_model(), _dataset(), cfg)
    b, hb = train(_model(), _dataset(), cfg)
    assert np.array_equal(a.theta, b.theta) and ha.train_loss == hb.train_loss


def test_training_lowers_loss():
    cfg = TrainConfig(max_epochs=30, batch_size=8, augment=False, loss_mode="normalized")
    _, hist = train(_model(), _dataset(), cfg)
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_predict_equals_forward_and_batches():
    m = _model()
    m.param("fc3_b")[...] = 0.5
    X = _features(6)
    batch = predict(m, X)
    assert np.array_equal(batch, m.forward(X))
    # BLAS may sum in a different order for different batch shapes
    assert np.allclose([predict(m, X[k]) for k in range(6)], batch, rtol=1e-12, atol=0)


def test_predict_from_channel():
    m = _model()
    H = RngStream(0).complex_normal((16, 4))
    from bmdrkit.dataset import channel_feature

    rho = np.full(4, 0.1)
    assert predict(m, H, system=SYS, rho=rho) == m.forward(channel_feature(H, SYS, rho))


def test_save_load_roundtrip_and_errors(tmp_path):
    m = _model()
    m.param("fc3_b")[...] = 0.3
    X = _features(100)
    p = tmp_path / "m.bin"
    save_model(m, p)
    assert np.array_equal(load_model(p).forward(X), m.forward(X))
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-5])
    with pytest.raises(TruncatedFile):
        load_model(tmp_path / "t.bin")
    with pytest.raises(ArchMismatch):
        load_model(p, expected_side=6)
