from .arx import ArxModel, SingularDesignError, arx_predict, fit_arx
from .base import (
    ArxPredictor,
    CostaPredictor,
    LstmPredictor,
    PbmPredictor,
    Predictor,
    costa_predict,
    load_predictor,
    rollout,
    save_predictor,
)
from .nn import (
    Adam,
    DivergenceError,
    LstmBlock,
    LstmNet,
    Mlp,
    TrainConfig,
    lstm_cell,
    train_nn,
)
from .pipeline import train_arx_predictor, train_costa_predictor, train_lstm_predictor

__all__ = [
    "Adam",
    "ArxModel",
    "ArxPredictor",
    "CostaPredictor",
    "DivergenceError",
    "LstmBlock",
    "LstmNet",
    "LstmPredictor",
    "Mlp",
    "PbmPredictor",
    "Predictor",
    "SingularDesignError",
    "TrainConfig",
    "arx_predict",
    "costa_predict",
    "fit_arx",
    "load_predictor",
    "lstm_cell",
    "rollout",
    "save_predictor",
    "train_arx_predictor",
    "train_costa_predictor",
    "train_lstm_predictor",
    "train_nn",
]
