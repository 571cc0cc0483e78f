"""Tracking/actuation metrics per run and one-step model intercomparison.

MAE is the mean absolute difference between measured and target temperature
over all ticks (initial transients included; reports note this choice).
Actuation effort is summarized as the mean heater duty and fan on-fraction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Episode, make_windows
from .looprunner import ControllerName, RunLog
from .predictors import Predictor


@dataclass(frozen=True)
class RunMetrics:
    name: str
    mae: float
    heater_mean: float
    fan_fraction: float
    fallback_fraction: float

    def __post_init__(self):
        if self.mae < 0:
            raise ValueError("mae must be >= 0")
        for f in (self.heater_mean, self.fan_fraction, self.fallback_fraction):
            if not (0.0 <= f <= 1.0):
                raise ValueError("fractions must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "mae": self.mae, "heater_mean": self.heater_mean,
            "fan_fraction": self.fan_fraction, "fallback_fraction": self.fallback_fraction,
        }


def compute_metrics(run_log: RunLog) -> RunMetrics:
    if not run_log.rows:
        raise ValueError("run log has no ticks")
    rows = run_log.rows
    n = len(rows)
    return RunMetrics(
        name=run_log.controller,
        mae=float(sum(abs(r.T - r.target) for r in rows) / n),
        heater_mean=float(sum(r.u_h for r in rows) / n),
        fan_fraction=float(sum(r.u_f for r in rows) / n),
        fallback_fraction=float(sum(1 for r in rows if r.fallback) / n),
    )


def model_intercomparison(
    predictors: dict[str, Predictor],
    test_episodes: list[Episode],
    lookback: int = 10,
) -> dict[str, float]:
    """Held-out one-step MAE per model over every window of the test episodes."""
    if not test_episodes:
        raise ValueError("no test episodes")
    out: dict[str, float] = {}
    for name, predictor in predictors.items():
        errors = []
        for ep in test_episodes:
            T_amb = float(ep.T_amb[0])
            for sample in make_windows(ep, lookback):
                window = sample.features[-predictor.lookback :]
                errors.append(abs(predictor.predict_window(window, T_amb) - sample.label))
        out[name] = float(np.mean(errors))
    return out


METRICS_COLUMNS = ["name", "mae", "heater_mean", "fan_fraction", "fallback_fraction"]


def write_report(metrics: list[RunMetrics], out_dir) -> dict[str, Path]:
    """metrics.csv + summary.json + a paired with/without-penalty delta table."""
    if not metrics:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in metrics:
            writer.writerow([m.name, repr(m.mae), repr(m.heater_mean),
                             repr(m.fan_fraction), repr(m.fallback_fraction)])

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(
            {
                "runs": [m.to_dict() for m in metrics],
                "note": "MAE includes all ticks (no transient exclusion)",
            },
            fh, indent=2,
        )

    # pair X-...-P with its non-penalty twin to show the actuation shift
    by_name = {m.name: m for m in metrics}
    deltas = []
    for m in metrics:
        try:
            name = ControllerName.parse(m.name)
        except ValueError:
            continue
        if not name.penalty:
            continue
        base = by_name.get(ControllerName(name.assistance, name.te, False).render())
        if base is None:
            continue
        deltas.append({
            "base": base.name,
            "penalized": m.name,
            "fan_fraction_delta": m.fan_fraction - base.fan_fraction,
            "heater_mean_delta": m.heater_mean - base.heater_mean,
            "mae_delta": m.mae - base.mae,
        })
    delta_path = out_dir / "penalty_deltas.csv"
    with open(delta_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["base", "penalized", "fan_fraction_delta", "heater_mean_delta", "mae_delta"])
        for d in deltas:
            writer.writerow([d["base"], d["penalized"], repr(d["fan_fraction_delta"]),
                             repr(d["heater_mean_delta"]), repr(d["mae_delta"])])

    return {"metrics": csv_path, "summary": summary_path, "deltas": delta_path}


def read_metrics(csv_path) -> list[RunMetrics]:
    out = []
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(RunMetrics(
                name=row["name"], mae=float(row["mae"]), heater_mean=float(row["heater_mean"]),
                fan_fraction=float(row["fan_fraction"]), fallback_fraction=float(row["fallback_fraction"]),
            ))
    return out
