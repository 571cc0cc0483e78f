"""Training orchestration: episodes in, ready-to-use predictors out."""

from __future__ import annotations

import numpy as np

from ..dataset import Episode, FeatureScaler, make_costa_samples, make_windows
from ..plantsim import PlantParams
from .arx import fit_arx
from .base import ArxPredictor, CostaPredictor, LstmPredictor
from .nn import LSTM_TRAIN, MLP_TRAIN, LstmNet, Mlp, TrainConfig, train_nn


def _window_arrays(episodes: list[Episode], lookback: int):
    xs, ys = [], []
    for ep in episodes:
        for s in make_windows(ep, lookback):
            xs.append(s.features)
            ys.append(s.label)
    return np.asarray(xs), np.asarray(ys)


def _costa_arrays(episodes: list[Episode], params: PlantParams):
    xs, ys = [], []
    for ep in episodes:
        for s in make_costa_samples(ep, params):
            xs.append(s.inputs)
            ys.append(s.target)
    return np.asarray(xs), np.asarray(ys)


def train_arx_predictor(train_episodes: list[Episode], p: int = 10, q: int = 10,
                        lookback: int = 10) -> ArxPredictor:
    samples = [s for ep in train_episodes for s in make_windows(ep, lookback)]
    return ArxPredictor(fit_arx(samples, p, q))


def train_lstm_predictor(
    train_episodes: list[Episode],
    val_episodes: list[Episode],
    lookback: int = 10,
    cfg: TrainConfig = LSTM_TRAIN,
):
    """Train the sequence predictor on standardized windows; returns (predictor, history)."""
    x_train, y_train = _window_arrays(train_episodes, lookback)
    x_val, y_val = _window_arrays(val_episodes, lookback)

    scaler = FeatureScaler.fit(x_train.reshape(-1, x_train.shape[-1]))
    label_mean = float(y_train.mean())
    label_std = float(y_train.std()) or 1.0

    def prep(x, y):
        return scaler.transform(x.reshape(-1, x.shape[-1])).reshape(x.shape), (y - label_mean) / label_std

    xt, yt = prep(x_train, y_train)
    xv, yv = prep(x_val, y_val)
    net = LstmNet(in_dim=3, hidden=64, blocks=3, dropout=0.2, seed=cfg.seed)
    net, history = train_nn(net, xt, yt, xv, yv, cfg)
    return LstmPredictor(net, scaler, label_mean, label_std, lookback), history


def train_costa_predictor(
    train_episodes: list[Episode],
    val_episodes: list[Episode],
    params: PlantParams | None = None,
    cfg: TrainConfig = MLP_TRAIN,
):
    """Train the corrective-term network; returns (predictor, history)."""
    params = params or PlantParams()
    x_train, y_train = _costa_arrays(train_episodes, params)
    x_val, y_val = _costa_arrays(val_episodes, params)

    scaler = FeatureScaler.fit(x_train)
    target_mean = float(y_train.mean())
    target_std = float(y_train.std()) or 1.0

    xt = scaler.transform(x_train)
    yt = (y_train - target_mean) / target_std
    xv = scaler.transform(x_val)
    yv = (y_val - target_mean) / target_std
    mlp = Mlp(in_dim=4, hidden=64, dropout=0.2, seed=cfg.seed)
    mlp, history = train_nn(mlp, xt, yt, xv, yv, cfg)
    return CostaPredictor(mlp, scaler, target_mean, target_std, params), history
