"""Neural one-step predictors, trained from scratch with numpy.

Two network families:

* Mlp - the corrective-term regressor: Linear-ReLU-Dropout(0.2) twice, then
  a scalar Linear head. Input is (T_uncorrected, T_amb, u_h, u_f), output
  the corrective source rate.
* LstmNet - the sequence predictor: three stacked blocks of
  (LSTM -> Linear -> Dropout(0.2)) with hidden size 64, then a scalar
  Linear head on the last timestep. Each LSTM cell follows the standard
  gate equations

    f = sigmoid(W_f [h, x] + b_f)     i = sigmoid(W_i [h, x] + b_i)
    g = tanh(W_c [h, x] + b_c)        c = f * c_prev + i * g
    o = sigmoid(W_o [h, x] + b_o)     h = o * tanh(c)

Training is Adam on mean squared error with early stopping: when the
validation MSE fails to improve by min_delta for `patience` consecutive
epochs, training stops and the best-validation snapshot is restored.
Dropout is inverted (activations scaled at train time) and disabled at
inference, so evaluation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _dropout_mask(rng, shape, p: float) -> np.ndarray:
    # inverted dropout: kept units scaled by 1/(1-p) so inference needs no rescale
    return (rng.random(shape) >= p).astype(float) / (1.0 - p)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

class Mlp:
    """Linear-ReLU-Dropout x2 + scalar Linear head."""

    def __init__(self, in_dim: int = 4, hidden: int = 64, dropout: float = 0.2, seed: int = 0):
        self.in_dim = in_dim
        self.hidden = hidden
        self.dropout = dropout
        rng = np.random.default_rng(seed)
        self.W1 = _glorot(rng, (hidden, in_dim))
        self.b1 = np.zeros(hidden)
        self.W2 = _glorot(rng, (hidden, hidden))
        self.b2 = np.zeros(hidden)
        self.W3 = _glorot(rng, (1, hidden))
        self.b3 = np.zeros(1)

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a1 = x @ self.W1.T + self.b1
        h1 = np.maximum(a1, 0.0)
        m1 = _dropout_mask(rng, h1.shape, self.dropout) if train else np.ones_like(h1)
        d1 = h1 * m1
        a2 = d1 @ self.W2.T + self.b2
        h2 = np.maximum(a2, 0.0)
        m2 = _dropout_mask(rng, h2.shape, self.dropout) if train else np.ones_like(h2)
        d2 = h2 * m2
        y = (d2 @ self.W3.T + self.b3)[:, 0]
        cache = (x, a1, m1, d1, a2, m2, d2)
        return y, cache

    def backward(self, cache, dy: np.ndarray) -> list[np.ndarray]:
        x, a1, m1, d1, a2, m2, d2 = cache
        dy = dy[:, None]
        dW3 = dy.T @ d2
        db3 = dy.sum(0)
        dd2 = dy @ self.W3
        dh2 = dd2 * m2
        da2 = dh2 * (a2 > 0)
        dW2 = da2.T @ d1
        db2 = da2.sum(0)
        dd1 = da2 @ self.W2
        dh1 = dd1 * m1
        da1 = dh1 * (a1 > 0)
        dW1 = da1.T @ x
        db1 = da1.sum(0)
        return [dW1, db1, dW2, db2, dW3, db3]

    def predict(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward(x, train=False)
        return y

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim, "hidden": self.hidden, "dropout": self.dropout,
            "weights": [p.tolist() for p in self.params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls(in_dim=d["in_dim"], hidden=d["hidden"], dropout=d["dropout"])
        for p, saved in zip(net.params(), d["weights"]):
            p[...] = np.asarray(saved, dtype=float)
        return net


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

class LstmBlock:
    """One LSTM layer plus its per-timestep Linear and Dropout.

    Gate weights are stored fused as W (4*hidden, hidden+input) in f, i, c, o
    row order; W_f etc. are zero-copy views of the fused array.
    """

    def __init__(self, in_dim: int, hidden: int, dropout: float, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        self.dropout = dropout
        self.W = np.vstack([_glorot(rng, (hidden, hidden + in_dim)) for _ in range(4)])
        self.b = np.zeros(4 * hidden)
        self.b[:hidden] = 1.0  # forget-gate bias starts open
        self.Wl = _glorot(rng, (hidden, hidden))
        self.bl = np.zeros(hidden)

    # spec-named per-gate views
    @property
    def W_f(self):
        return self.W[: self.hidden]

    @property
    def W_i(self):
        return self.W[self.hidden : 2 * self.hidden]

    @property
    def W_c(self):
        return self.W[2 * self.hidden : 3 * self.hidden]

    @property
    def W_o(self):
        return self.W[3 * self.hidden :]

    @property
    def b_f(self):
        return self.b[: self.hidden]

    @property
    def b_i(self):
        return self.b[self.hidden : 2 * self.hidden]

    @property
    def b_c(self):
        return self.b[2 * self.hidden : 3 * self.hidden]

    @property
    def b_o(self):
        return self.b[3 * self.hidden :]

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b, self.Wl, self.bl]

    def forward(self, x: np.ndarray, train: bool, rng) -> tuple[np.ndarray, tuple]:
        B, L, _ = x.shape
        H = self.hidden
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, L, H))
        gates = np.empty((B, L, 4 * H))
        c_prevs = np.empty((B, L, H))
        tanh_c = np.empty((B, L, H))
        for t in range(L):
            hx = np.concatenate([h, x[:, t, :]], axis=1)
            z = hx @ self.W.T + self.b
            f = sigmoid(z[:, :H])
            i = sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = sigmoid(z[:, 3 * H :])
            c_prevs[:, t] = c
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            tanh_c[:, t] = tc
            gates[:, t, :H] = f
            gates[:, t, H : 2 * H] = i
            gates[:, t, 2 * H : 3 * H] = g
            gates[:, t, 3 * H :] = o
        Y = hs @ self.Wl.T + self.bl
        mask = _dropout_mask(rng, Y.shape, self.dropout) if train else np.ones_like(Y)
        out = Y * mask
        cache = (x, hs, gates, c_prevs, tanh_c, mask)
        return out, cache

    def backward(self, cache, d_out: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x, hs, gates, c_prevs, tanh_c, mask = cache
        B, L, _ = x.shape
        H = self.hidden
        dY = d_out * mask
        dWl = np.einsum("blo,blk->ok", dY, hs)
        dbl = dY.sum(axis=(0, 1))
        dH = dY @ self.Wl

        dW = np.zeros_like(self.W)
        db = np.zeros_like(self.b)
        dX = np.empty_like(x)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(L)):
            f = gates[:, t, :H]
            i = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            tc = tanh_c[:, t]
            dh = dH[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            df = dc * c_prevs[:, t]
            di = dc * g
            dg = dc * i
            dc_next = dc * f
            da = np.concatenate(
                [df * f * (1 - f), di * i * (1 - i), dg * (1 - g * g), do * o * (1 - o)], axis=1
            )
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
            hx = np.concatenate([h_prev, x[:, t, :]], axis=1)
            dW += da.T @ hx
            db += da.sum(0)
            dhx = da @ self.W
            dh_next = dhx[:, :H]
            dX[:, t] = dhx[:, H:]
        return dX, [dW, db, dWl, dbl]


def lstm_cell(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, block: LstmBlock):
    """Single LSTM cell update; returns the new (hidden, cell) states."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h_prev = np.atleast_1d(np.asarray(h_prev, dtype=float))
    c_prev = np.atleast_1d(np.asarray(c_prev, dtype=float))
    if x.shape[-1] != block.in_dim or h_prev.shape[-1] != block.hidden or c_prev.shape[-1] != block.hidden:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"vs block (in={block.in_dim}, hidden={block.hidden})"
        )
    hx = np.concatenate([h_prev, x], axis=-1)
    f = sigmoid(hx @ block.W_f.T + block.b_f)
    i = sigmoid(hx @ block.W_i.T + block.b_i)
    g = np.tanh(hx @ block.W_c.T + block.b_c)
    c = f * c_prev + i * g
    o = sigmoid(hx @ block.W_o.T + block.b_o)
    h = o * np.tanh(c)
    return h, c


class LstmNet:
    """Three (LSTM -> Linear -> Dropout) blocks plus a scalar head on the last step."""

    def __init__(self, in_dim: int = 3, hidden: int = 64, blocks: int = 3, dropout: float = 0.2, seed: int = 0):
        self.in_dim = in_dim
        self.hidden = hidden
        self.dropout = dropout
        rng = np.random.default_rng(seed)
        self.blocks = [
            LstmBlock(in_dim if k == 0 else hidden, hidden, dropout, rng) for k in range(blocks)
        ]
        self.Wh = _glorot(rng, (1, hidden))
        self.bh = np.zeros(1)

    def params(self) -> list[np.ndarray]:
        out = []
        for block in self.blocks:
            out.extend(block.params())
        out.extend([self.Wh, self.bh])
        return out

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        caches = []
        out = x
        for block in self.blocks:
            out, cache = block.forward(out, train, rng)
            caches.append(cache)
        last = out[:, -1, :]
        y = (last @ self.Wh.T + self.bh)[:, 0]
        caches.append(last)
        return y, caches

    def backward(self, caches, dy: np.ndarray) -> list[np.ndarray]:
        last = caches[-1]
        dy = dy[:, None]
        dWh = dy.T @ last
        dbh = dy.sum(0)
        d_last = dy @ self.Wh
        B, L = caches[0][0].shape[0], caches[0][0].shape[1]
        d_out = np.zeros((B, L, self.hidden))
        d_out[:, -1] = d_last
        grads: list[np.ndarray] = []
        for block, cache in zip(reversed(self.blocks), reversed(caches[:-1])):
            d_out, block_grads = block.backward(cache, d_out)
            grads = block_grads + grads
        return grads + [dWh, dbh]

    def predict(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward(x, train=False)
        return y

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim, "hidden": self.hidden, "dropout": self.dropout,
            "blocks": len(self.blocks),
            "weights": [p.tolist() for p in self.params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LstmNet":
        net = cls(in_dim=d["in_dim"], hidden=d["hidden"], blocks=d["blocks"], dropout=d["dropout"])
        for p, saved in zip(net.params(), d["weights"]):
            p[...] = np.asarray(saved, dtype=float)
        return net


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.001
    batch_size: int = 64
    min_delta: float = 5e-4
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 1, lr > 0, batch_size >= 1, patience >= 1 required")


LSTM_TRAIN = TrainConfig(epochs=5000, batch_size=40)
MLP_TRAIN = TrainConfig(epochs=1000, batch_size=64)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    diff = pred - target
    return float(np.mean(diff * diff))


def train_nn(model, x_train, y_train, x_val, y_val, cfg: TrainConfig):
    """Adam + MSE with early stopping on validation MSE.

    Returns (model, history); history rows are (epoch, train_mse, val_mse).
    The model is left at the best-validation snapshot. Deterministic for a
    fixed cfg.seed.
    """
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    y_val = np.asarray(y_val, dtype=float)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("train and validation splits must be non-empty")

    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    opt = Adam(params, lr=cfg.lr)
    best_val = np.inf
    best_snapshot = [p.copy() for p in params]
    stale = 0
    history: list[tuple[int, float, float]] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred, cache = model.forward(x_train[idx], train=True, rng=rng)
            diff = pred - y_train[idx]
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            grads = model.backward(cache, 2.0 * diff / len(idx))
            opt.step(grads)
            epoch_loss += loss * len(idx)
        train_mse = epoch_loss / len(order)

        val_mse = mse(model.predict(x_val), y_val)
        history.append((epoch, train_mse, val_mse))
        if best_val - val_mse > cfg.min_delta:
            best_val = val_mse
            best_snapshot = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    for p, s in zip(params, best_snapshot):
        p[...] = s
    return model, history


def save_loss_curve(history, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for row in history:
            writer.writerow([row[0], repr(row[1]), repr(row[2])])
