"""Linear autoregressive one-step predictor with exogenous heater/fan inputs.

The next temperature is a linear combination of the last p temperatures and
the last q heater duties and fan states:

  T_next = sum_i a_i T[t-i+1] + sum_j bh_j u_h[t-j+1] + sum_j bf_j u_f[t-j+1]

fitted by ordinary least squares on sliding-window samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import WindowSample


class SingularDesignError(ValueError):
    """Design matrix is rank deficient; carries the dependent column names."""

    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(f"rank-deficient design matrix; dependent columns: {', '.join(columns)}")


@dataclass
class ArxModel:
    a: np.ndarray    # autoregressive coefficients a_1..a_p, a_1 on the newest T
    b_h: np.ndarray  # heater coefficients b_1..b_q, newest first
    b_f: np.ndarray  # fan coefficients, newest first

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b_h = np.atleast_1d(np.asarray(self.b_h, dtype=float))
        self.b_f = np.atleast_1d(np.asarray(self.b_f, dtype=float))
        if len(self.b_h) != len(self.b_f):
            raise ValueError("heater and fan horizons must match")
        if not all(np.isfinite(v).all() for v in (self.a, self.b_h, self.b_f)):
            raise ValueError("coefficients must be finite")

    @property
    def p(self) -> int:
        return len(self.a)

    @property
    def q(self) -> int:
        return len(self.b_h)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b_h": self.b_h.tolist(), "b_f": self.b_f.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArxModel":
        return cls(a=np.asarray(d["a"]), b_h=np.asarray(d["b_h"]), b_f=np.asarray(d["b_f"]))


def _column_names(p: int, q: int) -> list[str]:
    names = [f"T[t-{i}]" for i in range(p)]
    names += [f"u_h[t-{j}]" for j in range(q)]
    names += [f"u_f[t-{j}]" for j in range(q)]
    return names


def design_from_windows(samples: list[WindowSample], p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix rows: [T newest..oldest(p), u_h newest..oldest(q), u_f ...]."""
    lookback = samples[0].features.shape[0]
    if p > lookback or q > lookback:
        raise ValueError(f"p={p}, q={q} exceed the window lookback {lookback}")
    X = np.empty((len(samples), p + 2 * q))
    y = np.empty(len(samples))
    for k, s in enumerate(samples):
        rows = s.features[::-1]  # newest first
        X[k, :p] = rows[:p, 0]
        X[k, p : p + q] = rows[:q, 1]
        X[k, p + q :] = rows[:q, 2]
        y[k] = s.label
    return X, y


def fit_arx(samples: list[WindowSample], p: int = 10, q: int = 10) -> ArxModel:
    """Least-squares fit of the one-step model; raises on underdetermined or singular data."""
    n_unknowns = p + 2 * q
    if len(samples) < n_unknowns:
        raise ValueError(f"{len(samples)} samples cannot determine {n_unknowns} coefficients")
    X, y = design_from_windows(samples, p, q)

    rank = np.linalg.matrix_rank(X)
    if rank < n_unknowns:
        # pivoted QR: the columns pivoted past the numerical rank are the
        # linearly dependent ones
        from scipy.linalg import qr

        _, _, pivots = qr(X, mode="economic", pivoting=True)
        names = _column_names(p, q)
        offending = sorted(names[j] for j in pivots[rank:])
        raise SingularDesignError(offending)

    theta, _, _, sv = np.linalg.lstsq(X, y, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not np.isfinite(theta).all() or cond > 1e12:
        # near-singular but full rank: tiny ridge stabilizes the normal equations
        theta = np.linalg.solve(X.T @ X + 1e-8 * np.eye(n_unknowns), X.T @ y)
    return ArxModel(a=theta[:p], b_h=theta[p : p + q], b_f=theta[p + q :])


def arx_predict(model: ArxModel, T_hist: np.ndarray, u_h_hist: np.ndarray, u_f_hist: np.ndarray) -> float:
    """One-step prediction from histories given most-recent-last."""
    T_hist = np.asarray(T_hist, dtype=float)
    u_h_hist = np.asarray(u_h_hist, dtype=float)
    u_f_hist = np.asarray(u_f_hist, dtype=float)
    if len(T_hist) < model.p or len(u_h_hist) < model.q or len(u_f_hist) < model.q:
        raise ValueError(
            f"need at least p={model.p} temperatures and q={model.q} controls, "
            f"got {len(T_hist)} and {min(len(u_h_hist), len(u_f_hist))}"
        )
    T_new = T_hist[::-1][: model.p]
    uh_new = u_h_hist[::-1][: model.q]
    uf_new = u_f_hist[::-1][: model.q]
    return float(model.a @ T_new + model.b_h @ uh_new + model.b_f @ uf_new)
