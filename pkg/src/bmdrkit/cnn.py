"""Miniature CNN mapping an ``R @ Omega^R`` feature to a BMDR estimate.

Layer stack for a ``side x side`` input (stride 1, 2x2 kernels, NHWC):

    conv 1->32 same, ReLU
    conv 32->16 same, ReLU
    conv 16->8 valid, ReLU
    flatten ((side-1)^2 * 8)
    dense ->8, ReLU
    dense ->4, ReLU
    dense ->1, ReLU

"Same" padding adds one zero row and column after the input, which is the
convention that keeps 2x2 outputs aligned with the top-left corner. For
``side = 8`` the model has 5929 trainable parameters.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchMismatch, BadMagic, DivisionByZeroLabel, EmptySet, ShapeMismatch, TruncatedFile, VersionMismatch

MODEL_MAGIC = b"BMCN"
MODEL_VERSION = 1

CONV_SPECS = (("conv1", 1, 32, True), ("conv2", 32, 16, True), ("conv3", 16, 8, False))
DENSE_WIDTHS = (8, 4, 1)
PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b",
               "fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b")


def arch_descriptor(side):
    return f"side={side};c32s;c16s;c8v;d8;d4;d1;relu"


def param_shapes(side):
    flat = (side - 1) ** 2 * CONV_SPECS[-1][2]
    shapes = {}
    for name, cin, cout, _ in CONV_SPECS:
        shapes[name + "_w"] = (2, 2, cin, cout)
        shapes[name + "_b"] = (cout,)
    width = flat
    for j, w in enumerate(DENSE_WIDTHS, start=1):
        shapes[f"fc{j}_w"] = (width, w)
        shapes[f"fc{j}_b"] = (w,)
        width = w
    return shapes


class CnnModel:
    """Parameters plus the layer arithmetic; parameters live in one flat vector."""

    def __init__(self, side=8, dtype=np.float64, init="glorot", rng=None):
        self.side = int(side)
        if self.side < 2:
            raise ShapeMismatch("input side must be >= 2")
        self.dtype = np.dtype(dtype)
        self.shapes = param_shapes(self.side)
        sizes = [int(np.prod(self.shapes[k])) for k in PARAM_ORDER]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.theta = np.zeros(int(self.offsets[-1]), dtype=self.dtype)
        if init == "glorot":
            if rng is None:
                raise ValueError("glorot initialisation needs an rng")
            self._glorot(rng)
        elif init != "zeros":
            raise ValueError(f"unknown init {init!r}")

    def _glorot(self, rng):
        for k in PARAM_ORDER:
            if k.endswith("_b"):
                continue
            shape = self.shapes[k]
            if len(shape) == 4:
                fan_in, fan_out = shape[0] * shape[1] * shape[2], shape[0] * shape[1] * shape[3]
            else:
                fan_in, fan_out = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.param(k)[...] = rng.uniform(-lim, lim, shape)

    @property
    def n_params(self):
        return self.theta.size

    def param(self, name):
        """Writable view of one parameter tensor."""
        j = PARAM_ORDER.index(name)
        return self.theta[self.offsets[j]:self.offsets[j + 1]].reshape(self.shapes[name])

    def copy(self):
        out = CnnModel.__new__(CnnModel)
        out.side, out.dtype, out.shapes, out.offsets = self.side, self.dtype, self.shapes, self.offsets
        out.theta = self.theta.copy()
        return out

    def astype(self, dtype):
        out = self.copy()
        out.dtype = np.dtype(dtype)
        out.theta = out.theta.astype(dtype)
        return out

    # ---------------------------------------------------------------- forward

    def _check_input(self, X):
        X = np.asarray(X, dtype=self.dtype)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != (self.side, self.side):
            raise ShapeMismatch(f"expected features of shape ({self.side}, {self.side}), got {X.shape[-2:]}")
        return X, single

    def forward_raw(self, X, keep=False):
        """Unclamped network output of shape ``(B,)`` (and the cache if ``keep``)."""
        X, _ = self._check_input(X)
        a = X[..., None]
        cache = []
        for name, _, _, same in CONV_SPECS:
            inp = np.pad(a, ((0, 0), (0, 1), (0, 1), (0, 0))) if same else a
            cols = _im2col(inp)
            z = _conv2x2(inp, self.param(name + "_w"), cols) + self.param(name + "_b")
            a = np.maximum(z, 0.0)
            cache.append((inp.shape, cols, z, same))
        conv_shape = a.shape
        a = a.reshape(a.shape[0], -1)
        for j in range(1, len(DENSE_WIDTHS) + 1):
            z = a @ self.param(f"fc{j}_w") + self.param(f"fc{j}_b")
            cache.append((a, z))
            a = np.maximum(z, 0.0)
        out = a[:, 0]
        if keep:
            return out, (cache, conv_shape)
        return out

    def forward(self, X):
        """Prediction in ``[0, 1]``; a single matrix gives a scalar."""
        X, single = self._check_input(X)
        out = np.minimum(self.forward_raw(X), 1.0)
        return float(out[0]) if single else out

    def activation_pattern(self, X):
        """Boolean signs of every pre-activation; equal patterns mean no kink lies between."""
        _, (layers, _) = self.forward_raw(X, keep=True)
        return np.concatenate([np.ravel(layer[-2 if len(layer) == 4 else 1] > 0) for layer in layers])

    def shape_trace(self, batch=1):
        """Output shape of every layer for a zero batch."""
        a = np.zeros((batch, self.side, self.side, 1), dtype=self.dtype)
        shapes = []
        for name, _, _, same in CONV_SPECS:
            inp = np.pad(a, ((0, 0), (0, 1), (0, 1), (0, 0))) if same else a
            a = _conv2x2(inp, self.param(name + "_w"))
            shapes.append(a.shape)
        a = a.reshape(batch, -1)
        shapes.append(a.shape)
        for j in range(1, len(DENSE_WIDTHS) + 1):
            a = a @ self.param(f"fc{j}_w")
            shapes.append(a.shape)
        return shapes

    # --------------------------------------------------------------- backward

    def backward(self, cache, dout):
        """Gradient of ``sum(dout * raw_output)`` with respect to ``theta``."""
        layers, conv_shape = cache
        grad = np.zeros_like(self.theta)
        views = {k: grad[self.offsets[j]:self.offsets[j + 1]].reshape(self.shapes[k])
                 for j, k in enumerate(PARAM_ORDER)}
        g = np.asarray(dout, dtype=self.dtype)[:, None]
        n_conv = len(CONV_SPECS)
        for j in range(len(DENSE_WIDTHS), 0, -1):
            a, z = layers[n_conv + j - 1]
            g = g * (z > 0)
            views[f"fc{j}_w"][...] = a.T @ g
            views[f"fc{j}_b"][...] = g.sum(axis=0)
            g = g @ self.param(f"fc{j}_w").T
        g = g.reshape(conv_shape)
        for c in range(n_conv - 1, -1, -1):
            name = CONV_SPECS[c][0]
            inp_shape, cols, z, same = layers[c]
            g = g * (z > 0)
            dw, dinp = _conv2x2_backward(inp_shape, cols, self.param(name + "_w"), g, need_dx=c > 0)
            views[name + "_w"][...] = dw
            views[name + "_b"][...] = g.sum(axis=(0, 1, 2))
            if c > 0:
                g = dinp[:, :-1, :-1, :] if same else dinp
        return grad


def _im2col(x):
    """Stack the four 2x2 taps along channels: ``(B, H-1, W-1, 4 Cin)``."""
    Ho, Wo = x.shape[1] - 1, x.shape[2] - 1
    return np.concatenate([x[:, :Ho, :Wo], x[:, :Ho, 1:], x[:, 1:, :Wo], x[:, 1:, 1:]], axis=-1)


def _conv2x2(x, w, cols=None):
    """Valid 2x2 correlation of ``(B, H, W, Cin)`` with ``(2, 2, Cin, Cout)``."""
    if cols is None:
        cols = _im2col(x)
    return cols @ w.reshape(-1, w.shape[-1])


def _conv2x2_backward(x_shape, cols, w, g, need_dx=True):
    cin, cout = w.shape[2], w.shape[3]
    g2 = g.reshape(-1, cout)
    dw = (cols.reshape(-1, 4 * cin).T @ g2).reshape(w.shape)
    if not need_dx:
        return dw, None
    dcols = (g2 @ w.reshape(-1, cout).T).reshape(g.shape[:3] + (4, cin))
    Ho, Wo = g.shape[1], g.shape[2]
    dx = np.zeros(x_shape, dtype=g.dtype)
    dx[:, :Ho, :Wo] += dcols[..., 0, :]
    dx[:, :Ho, 1:] += dcols[..., 1, :]
    dx[:, 1:, :Wo] += dcols[..., 2, :]
    dx[:, 1:, 1:] += dcols[..., 3, :]
    return dw, dx


def param_count(side=8):
    return sum(int(np.prod(s)) for s in param_shapes(side).values())


# ------------------------------------------------------------------ loss


def loss(y_true, y_pred, mode="normalized"):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    err = np.abs(y_true - y_pred)
    if mode == "normalized":
        if np.any(y_true == 0):
            raise DivisionByZeroLabel("normalized loss needs non-zero labels")
        return float(np.mean(err / np.abs(y_true)))
    if mode == "absolute":
        return float(np.mean(err))
    raise ValueError(f"unknown loss mode {mode!r}")


def _loss_weights(y_true, mode):
    if mode == "normalized":
        if np.any(y_true == 0):
            raise DivisionByZeroLabel("normalized loss needs non-zero labels")
        return 1.0 / np.abs(y_true)
    if mode == "absolute":
        return np.ones_like(y_true)
    raise ValueError(f"unknown loss mode {mode!r}")


def _signs(rng, shape):
    if hasattr(rng, "signs"):
        return rng.signs(shape)
    return np.where(rng.integers(0, 2, size=shape) == 0, 1.0, -1.0)


def augment_sign(R, side, rng=None, d=None):
    """``R @ D`` (``side="right"``) or ``D @ R`` (``"left"``) with ``D = diag(d)``.

    ``R`` may be a single matrix or a stack; without ``d`` an independent
    sign vector is drawn for every matrix.
    """
    R = np.asarray(R)
    n = R.shape[-1]
    if d is None:
        d = _signs(rng, R.shape[:-2] + (n,))
    d = np.asarray(d, dtype=R.dtype if R.dtype.kind == "f" else float)
    if side == "right":
        return R * d[..., None, :]
    if side == "left":
        return R * d[..., :, None]
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def loss_and_grad(model, X, y, mode="normalized"):
    """Batch loss on the raw output and its exact gradient."""
    out, cache = model.forward_raw(X, keep=True)
    y = np.asarray(y, dtype=model.dtype)
    wts = _loss_weights(y, mode)
    diff = out - y
    value = float(np.mean(np.abs(diff) * wts))
    dout = np.sign(diff) * wts / len(y)
    return value, model.backward(cache, dout)


def three_view_loss_and_grad(model, X, y, mode, rng):
    """Average over the identity, ``R @ D`` and ``D @ R`` views of a batch."""
    n = len(y)
    Xr = augment_sign(X, "right", rng)
    Xl = augment_sign(X, "left", rng)
    stacked = np.concatenate([X, Xr, Xl])
    value, grad = loss_and_grad(model, stacked, np.concatenate([y, y, y]), mode)
    assert stacked.shape[0] == 3 * n
    return value, grad


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    loss_mode: str = "auto"
    augment: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    loss_mode: str = "normalized"

    def to_csv(self, path, comment=None):
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, tl in enumerate(self.train_loss):
                vl = self.val_loss[e] if e < len(self.val_loss) else float("nan")
                w.writerow([e + 1, repr(tl), repr(vl)])


class Adam:
    def __init__(self, n, lr, beta1, beta2, eps, dtype):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _xy(data):
    if hasattr(data, "features") and hasattr(data, "labels"):
        return np.asarray(data.features), np.asarray(data.labels)
    return np.asarray(data[0]), np.asarray(data[1])


def train(model, train_data, config, val_data=None, user=0, rng=None):
    """Mini-batch Adam on the three-view loss with early stopping.

    ``train_data``/``val_data`` are :class:`~bmdrkit.dataset.Dataset`
    objects or ``(features, labels)`` pairs; labels may hold one column
    per user, ``user`` picks the column. Without validation data the
    training loss drives early stopping. Returns ``(model, history)``,
    the model carrying the best parameters seen.
    """
    from .numerics import RngStream

    X, Y = _xy(train_data)
    if len(X) == 0:
        raise EmptySet("training set is empty")
    y = Y[:, user] if Y.ndim == 2 else Y
    dtype = np.dtype(config.dtype)
    model = model.astype(dtype)
    X = X.astype(dtype)
    y = y.astype(dtype)
    if val_data is not None and len(_xy(val_data)[0]):
        Xv, Yv = _xy(val_data)
        yv = (Yv[:, user] if Yv.ndim == 2 else Yv).astype(dtype)
        Xv = Xv.astype(dtype)
    else:
        Xv = yv = None
    mode = config.loss_mode
    if mode == "auto":
        labels = y if yv is None else np.concatenate([y, yv])
        mode = "absolute" if np.any(labels == 0) else "normalized"
    hist = History(loss_mode=mode)
    rng = rng if rng is not None else RngStream(config.seed).substream("train")
    opt = Adam(model.n_params, config.learning_rate, config.beta1, config.beta2, config.eps, dtype)
    best_theta, best_val, since_best = model.theta.copy(), np.inf, 0
    n = len(y)
    for epoch in range(config.max_epochs):
        erng = rng.substream("epoch", epoch)
        order = erng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if config.augment:
                value, grad = three_view_loss_and_grad(model, X[idx], y[idx], mode, erng)
            else:
                value, grad = loss_and_grad(model, X[idx], y[idx], mode)
            opt.step(model.theta, grad)
            total += value * len(idx)
        hist.train_loss.append(total / n)
        if Xv is not None:
            val = loss(yv, model.forward_raw(Xv), mode)
        else:
            val = hist.train_loss[-1]
        hist.val_loss.append(val)
        if val < best_val:
            best_val, best_theta, since_best = val, model.theta.copy(), 0
            hist.best_epoch = epoch + 1
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    if hist.best_epoch > 0:
        model.theta[...] = best_theta
    return model, hist


def predict(model, x, system=None, rho=None):
    """Prediction for features, or for raw complex channels given ``system`` and ``rho``."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        if system is None or rho is None:
            raise ValueError("raw channels need system and rho")
        from .dataset import channel_feature

        if x.ndim == 2:
            return model.forward(channel_feature(x, system, rho))
        return model.forward(np.stack([channel_feature(h, system, rho) for h in x]))
    return model.forward(x)


# ------------------------------------------------------------- persistence


def save_model(model, path, dtype=None):
    """Header, architecture descriptor and parameters (float32 or float64)."""
    dtype = np.dtype(dtype or model.dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("model files hold float32 or float64 parameters")
    desc = arch_descriptor(model.side).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HHHH", MODEL_VERSION, dtype.itemsize, model.side, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", model.n_params))
        fh.write(model.theta.astype(dtype.newbyteorder("<")).tobytes())


def load_model(path, expected_side=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise TruncatedFile("model header truncated")
    if data[:4] != MODEL_MAGIC:
        raise BadMagic(f"expected {MODEL_MAGIC!r}, got {data[:4]!r}")
    version, itemsize, side, dlen = struct.unpack("<HHHH", data[4:12])
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model version {version} unsupported")
    if len(data) < 16 + dlen:
        raise TruncatedFile("model header truncated")
    desc = data[12:12 + dlen].decode("ascii", errors="replace")
    (count,) = struct.unpack("<I", data[12 + dlen:16 + dlen])
    if desc != arch_descriptor(side) or count != param_count(side):
        raise ArchMismatch(f"unsupported architecture {desc!r} with {count} parameters")
    if expected_side is not None and side != expected_side:
        raise ArchMismatch(f"model input side {side}, expected {expected_side}")
    if itemsize not in (4, 8):
        raise ArchMismatch(f"unsupported parameter width {itemsize}")
    dtype = np.dtype("<f4" if itemsize == 4 else "<f8")
    body = data[16 + dlen:]
    if len(body) < count * itemsize:
        raise TruncatedFile(f"expected {count} parameters")
    model = CnnModel(side, dtype=dtype.newbyteorder("="), init="zeros")
    model.theta[...] = np.frombuffer(body, dtype=dtype, count=count)
    return model
