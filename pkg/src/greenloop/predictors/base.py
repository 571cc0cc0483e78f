"""Common one-step / rollout interface over the physics, ARX, LSTM and hybrid models.

Every predictor consumes a window of recent (T, u_h, u_f) rows (most recent
last, where a row's controls are the ones applied over the following 60 s)
plus the ambient temperature, and returns the next temperature. `rollout`
feeds predictions back autoregressively under a candidate control sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..dataset import FeatureScaler
from ..plantsim import ControlInput, PlantParams, pbm_step, pbm_step_with_source
from .arx import ArxModel, arx_predict
from .nn import LstmNet, Mlp

PERIOD_S = 60.0


class Predictor(Protocol):
    name: str
    lookback: int

    def predict_window(self, rows: np.ndarray, T_amb: float) -> float: ...


class PbmPredictor:
    """Uncorrected physics model as a predictor (baseline)."""

    name = "PBM"
    lookback = 1

    def __init__(self, params: PlantParams | None = None):
        self.params = params or PlantParams()

    def predict_window(self, rows: np.ndarray, T_amb: float) -> float:
        T, u_h, u_f = rows[-1]
        return pbm_step(float(T), T_amb, ControlInput(float(u_h), int(u_f)), self.params, PERIOD_S)


class ArxPredictor:
    name = "ARX"

    def __init__(self, model: ArxModel):
        self.model = model
        self.lookback = max(model.p, model.q)

    def predict_window(self, rows: np.ndarray, T_amb: float) -> float:
        rows = np.asarray(rows, dtype=float)
        return arx_predict(self.model, rows[:, 0], rows[:, 1], rows[:, 2])


class LstmPredictor:
    name = "LSTM"

    def __init__(self, net: LstmNet, scaler: FeatureScaler, label_mean: float, label_std: float, lookback: int = 10):
        self.net = net
        self.scaler = scaler
        self.label_mean = label_mean
        self.label_std = label_std
        self.lookback = lookback

    def predict_window(self, rows: np.ndarray, T_amb: float) -> float:
        rows = np.asarray(rows, dtype=float)
        if rows.shape[0] != self.lookback:
            raise ValueError(f"expected {self.lookback} rows, got {rows.shape[0]}")
        x = self.scaler.transform(rows)[None]
        y = self.net.predict(x)[0]
        return float(y * self.label_std + self.label_mean)


def costa_predict(T_t: float, T_amb: float, u: ControlInput, mlp: Mlp,
                  scaler: FeatureScaler, target_mean: float, target_std: float,
                  params: PlantParams) -> float:
    """Two-pass hybrid prediction.

    Pass 1 advances the physics model without correction to get an
    uncorrected next temperature; the network maps (that value, T_amb, u_h,
    u_f) to a corrective source rate; pass 2 re-solves with the constant
    source applied over the interval.
    """
    T_hat = pbm_step(T_t, T_amb, u, params, PERIOD_S)
    features = scaler.transform(np.array([[T_hat, T_amb, u.u_h, float(u.u_f)]]))
    r = float(mlp.predict(features)[0]) * target_std + target_mean
    return pbm_step_with_source(T_t, T_amb, u, params, r, PERIOD_S)


class CostaPredictor:
    name = "HAM"
    lookback = 1

    def __init__(self, mlp: Mlp, scaler: FeatureScaler, target_mean: float, target_std: float,
                 params: PlantParams | None = None):
        self.mlp = mlp
        self.scaler = scaler
        self.target_mean = target_mean
        self.target_std = target_std
        self.params = params or PlantParams()

    def predict_window(self, rows: np.ndarray, T_amb: float) -> float:
        T, u_h, u_f = rows[-1]
        return costa_predict(
            float(T), T_amb, ControlInput(float(u_h), int(u_f)),
            self.mlp, self.scaler, self.target_mean, self.target_std, self.params,
        )


def rollout(
    predictor: Predictor,
    past_rows: Sequence[Sequence[float]],
    current_T: float,
    T_amb: float,
    controls: Sequence[ControlInput],
) -> np.ndarray:
    """Autoregressive multi-step simulation under a candidate control sequence.

    `past_rows` are the (T, u_h, u_f) rows before the current measurement;
    if fewer than lookback-1 exist, the window is padded at the front by
    repeating its oldest row.
    """
    if len(controls) == 0:
        raise ValueError("control sequence must be non-empty")
    rows = [list(map(float, r)) for r in past_rows]
    T = float(current_T)
    trajectory = np.empty(len(controls))
    for k, u in enumerate(controls):
        rows.append([T, u.u_h, float(u.u_f)])
        window = rows[-predictor.lookback :]
        while len(window) < predictor.lookback:
            window = [window[0]] + window
        T = float(predictor.predict_window(np.asarray(window), T_amb))
        trajectory[k] = T
    return trajectory


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class _PlantFields:
    keys = ("rho", "V", "Cp", "Hmax", "Fmax", "k_loss", "eta0", "beta", "noise_sigma", "dt_int")


def _params_to_dict(params: PlantParams) -> dict:
    return {k: getattr(params, k) for k in _PlantFields.keys}


def save_predictor(predictor, path) -> None:
    """Write a versioned JSON checkpoint including scalers and config."""
    if isinstance(predictor, ArxPredictor):
        payload = {"kind": "arx", "model": predictor.model.to_dict()}
    elif isinstance(predictor, LstmPredictor):
        payload = {
            "kind": "lstm",
            "net": predictor.net.to_dict(),
            "scaler": predictor.scaler.to_dict(),
            "label_mean": predictor.label_mean,
            "label_std": predictor.label_std,
            "lookback": predictor.lookback,
        }
    elif isinstance(predictor, CostaPredictor):
        payload = {
            "kind": "ham",
            "mlp": predictor.mlp.to_dict(),
            "scaler": predictor.scaler.to_dict(),
            "target_mean": predictor.target_mean,
            "target_std": predictor.target_std,
            "plant": _params_to_dict(predictor.params),
        }
    else:
        raise TypeError(f"cannot checkpoint {type(predictor).__name__}")
    payload["version"] = CHECKPOINT_VERSION
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_predictor(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    kind = payload["kind"]
    if kind == "arx":
        return ArxPredictor(ArxModel.from_dict(payload["model"]))
    if kind == "lstm":
        return LstmPredictor(
            net=LstmNet.from_dict(payload["net"]),
            scaler=FeatureScaler.from_dict(payload["scaler"]),
            label_mean=payload["label_mean"],
            label_std=payload["label_std"],
            lookback=payload["lookback"],
        )
    if kind == "ham":
        return CostaPredictor(
            mlp=Mlp.from_dict(payload["mlp"]),
            scaler=FeatureScaler.from_dict(payload["scaler"]),
            target_mean=payload["target_mean"],
            target_std=payload["target_std"],
            params=PlantParams(**payload["plant"]),
        )
    raise ValueError(f"unknown checkpoint kind {kind!r}")
