"""Excitation episodes on the truth plant and their conversion to training samples.

An episode is a 60 s-sampled series of (T, T_amb, u_h, u_f). Excitation
schedules are piecewise-constant pseudo-random inputs: the heater duty is
resampled uniformly on the 0.05 grid every 5-20 minutes and the fan is
toggled with dwell times of 5-30 minutes, covering both transients and
near-steady regimes.

Window samples feed the linear and LSTM predictors: the 10 most recent
(T, u_h, u_f) rows as features, the next temperature as the label.
Residual samples feed the corrective-term network: the physics model is
advanced one step without correction from the measured temperature, and
the per-second residual r = (T_measured_next - T_uncorrected_next) / 60
is the regression target, so r plugs straight back into the physics model
as a constant source term.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .plantsim import (
    AmbientProfile,
    ControlInput,
    PlantParams,
    TruthPlant,
    pbm_step,
    snap_duty,
)

PERIOD_S = 60.0
DEFAULT_LOOKBACK = 10
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
CSV_HEADER = ["t", "T", "T_amb", "u_h", "u_f"]


class EpisodeTooShortError(ValueError):
    pass


@dataclass
class Episode:
    """One recorded excitation run, sampled every 60 s."""

    id: str
    start: str  # "YYYY-MM-DD HH:MM:SS"
    t: np.ndarray      # seconds from start
    T: np.ndarray      # measured temperature, degC
    T_amb: np.ndarray  # ambient temperature, degC
    u_h: np.ndarray    # heater duty applied over [t, t+60)
    u_f: np.ndarray    # fan state applied over [t, t+60)

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.T) == len(self.T_amb) == len(self.u_h) == len(self.u_f) == n):
            raise ValueError("episode columns must have equal length")
        if n >= 2 and not np.allclose(np.diff(self.t), PERIOD_S):
            raise ValueError("episode rows must be spaced exactly 60 s apart")
        off_grid = np.abs(self.u_h / 0.05 - np.round(self.u_h / 0.05)) > 1e-9
        if off_grid.any():
            raise ValueError("heater duties must lie on the 0.05 grid")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def end(self) -> str:
        last = datetime.strptime(self.start, TIME_FORMAT) + timedelta(seconds=float(self.t[-1]))
        return last.strftime(TIME_FORMAT)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for i in range(len(self)):
                writer.writerow([
                    repr(float(self.t[i])), repr(float(self.T[i])), repr(float(self.T_amb[i])),
                    repr(float(self.u_h[i])), int(self.u_f[i]),
                ])

    @classmethod
    def from_csv(cls, path, id: str | None = None, start: str = "2025-03-01 12:00:00") -> "Episode":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER:
                raise ValueError(f"unexpected episode header {header!r}")
            rows = [[float(v) for v in row] for row in reader]
        data = np.asarray(rows, dtype=float)
        return cls(
            id=id or Path(path).stem,
            start=start,
            t=data[:, 0], T=data[:, 1], T_amb=data[:, 2],
            u_h=data[:, 3], u_f=data[:, 4].astype(int),
        )


@dataclass
class WindowSample:
    """Sliding-window feature block: the last L (T, u_h, u_f) rows, next T as label."""

    features: np.ndarray  # shape (L, 3), most recent row last
    label: float
    t_label: float        # seconds; equals last feature time + 60


@dataclass
class ResidualSample:
    """Inputs for the corrective network and the per-second residual target."""

    inputs: np.ndarray  # (T_hat_next, T_amb, u_h, u_f)
    target: float       # degC/s


def generate_excitation(
    num_episodes: int,
    minutes_per_episode: int,
    rng: np.random.Generator,
) -> list[list[ControlInput]]:
    """Piecewise-constant pseudo-random control schedules, one entry per minute."""
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    schedules = []
    for _ in range(num_episodes):
        schedule: list[ControlInput] = []
        u_h = snap_duty(float(rng.integers(0, 21)) * 0.05)
        u_f = 0
        heater_dwell = int(rng.integers(5, 21))
        fan_dwell = int(rng.integers(5, 31))
        for _minute in range(minutes_per_episode):
            if heater_dwell == 0:
                u_h = snap_duty(float(rng.integers(0, 21)) * 0.05)
                heater_dwell = int(rng.integers(5, 21))
            if fan_dwell == 0:
                u_f = 1 - u_f
                fan_dwell = int(rng.integers(5, 31))
            schedule.append(ControlInput(u_h, u_f))
            heater_dwell -= 1
            fan_dwell -= 1
        schedules.append(schedule)
    return schedules


def simulate_episode(
    schedule: list[ControlInput],
    params: PlantParams,
    ambient: AmbientProfile,
    seed: int,
    episode_id: str,
    start: str = "2025-03-01 12:00:00",
) -> Episode:
    """Run the truth plant under a schedule and record the measured series."""
    rng = np.random.default_rng(seed)
    plant = TruthPlant(params, ambient, initial_T=ambient.at(0.0) + float(rng.uniform(0.0, 6.0)), seed=seed + 1)
    n = len(schedule)
    t = np.arange(n) * PERIOD_S
    T = np.empty(n)
    T_amb = np.empty(n)
    u_h = np.empty(n)
    u_f = np.empty(n, dtype=int)
    for i, u in enumerate(schedule):
        T[i] = plant.measured
        T_amb[i] = plant.state.T_amb
        u_h[i] = u.u_h
        u_f[i] = u.u_f
        plant.step(u, PERIOD_S)
    return Episode(id=episode_id, start=start, t=t, T=T, T_amb=T_amb, u_h=u_h, u_f=u_f)


def make_windows(episode: Episode, lookback: int = DEFAULT_LOOKBACK) -> list[WindowSample]:
    """Overlapping feature-label pairs, stride 1: len(episode) - lookback samples."""
    n = len(episode)
    if n <= lookback:
        raise EpisodeTooShortError(
            f"episode {episode.id!r} has {n} rows; needs more than lookback={lookback}"
        )
    stacked = np.column_stack([episode.T, episode.u_h, episode.u_f.astype(float)])
    samples = []
    for i in range(n - lookback):
        samples.append(WindowSample(
            features=stacked[i : i + lookback].copy(),
            label=float(episode.T[i + lookback]),
            t_label=float(episode.t[i + lookback]),
        ))
    return samples


def make_costa_samples(episode: Episode, params: PlantParams) -> list[ResidualSample]:
    """Residual targets from consecutive row pairs.

    The uncorrected physics solve runs from the measured T_t under the
    applied controls; the target is the rate that, fed back as a constant
    source, reproduces the measured T_{t+1} exactly.
    """
    if len(episode) < 2:
        raise EpisodeTooShortError(f"episode {episode.id!r} needs at least 2 rows")
    samples = []
    for i in range(len(episode) - 1):
        u = ControlInput(float(episode.u_h[i]), int(episode.u_f[i]))
        T_hat = pbm_step(float(episode.T[i]), float(episode.T_amb[i]), u, params, PERIOD_S)
        r = (float(episode.T[i + 1]) - T_hat) / PERIOD_S
        samples.append(ResidualSample(
            inputs=np.array([T_hat, float(episode.T_amb[i]), u.u_h, float(u.u_f)]),
            target=r,
        ))
    return samples


@dataclass
class FeatureScaler:
    """Per-feature standardization fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "FeatureScaler":
        values = np.asarray(values, dtype=float)
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant features pass through
        return cls(mean=mean, std=std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(mean=np.asarray(d["mean"], dtype=float), std=np.asarray(d["std"], dtype=float))


@dataclass
class DatasetManifest:
    """Index of generated episodes and their split membership."""

    episodes: list[dict] = field(default_factory=list)  # {"id", "file", "split"}
    lookback: int = DEFAULT_LOOKBACK
    seed: int = 0

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"episodes": self.episodes, "lookback": self.lookback, "seed": self.seed}, fh, indent=2)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as fh:
            d = json.load(fh)
        return cls(episodes=d["episodes"], lookback=d["lookback"], seed=d["seed"])

    def ids(self, split: str) -> list[str]:
        return [e["id"] for e in self.episodes if e["split"] == split]


def split_episodes(episodes: list[Episode], rng: np.random.Generator, train_fraction: float = 0.8):
    """Shuffle whole episodes, then split: no window ever straddles the boundary."""
    order = rng.permutation(len(episodes))
    n_train = max(1, int(round(train_fraction * len(episodes))))
    if len(episodes) > 1:
        n_train = min(n_train, len(episodes) - 1)
    train = [episodes[i] for i in order[:n_train]]
    val = [episodes[i] for i in order[n_train:]]
    return train, val


def build_dataset(
    out_dir,
    num_episodes: int = 15,
    minutes_per_episode: int = 212,
    params: PlantParams | None = None,
    ambient: AmbientProfile | None = None,
    seed: int = 0,
    lookback: int = DEFAULT_LOOKBACK,
) -> DatasetManifest:
    """Generate episodes on the truth plant and persist them with a manifest."""
    params = params or PlantParams()
    ambient = ambient or AmbientProfile()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    schedules = generate_excitation(num_episodes, minutes_per_episode, rng)
    base = datetime.strptime("2025-03-01 12:00:00", TIME_FORMAT)
    episodes = []
    for i, schedule in enumerate(schedules):
        start = (base + timedelta(days=i)).strftime(TIME_FORMAT)
        ep = simulate_episode(schedule, params, ambient, seed=seed * 1000 + i, episode_id=f"ep-{i:03d}", start=start)
        episodes.append(ep)

    train, val = split_episodes(episodes, np.random.default_rng(seed + 1))
    train_ids = {e.id for e in train}
    manifest = DatasetManifest(lookback=lookback, seed=seed)
    for ep in episodes:
        filename = f"{ep.id}.csv"
        ep.to_csv(out_dir / filename)
        manifest.episodes.append({
            "id": ep.id,
            "file": filename,
            "start": ep.start,
            "split": "train" if ep.id in train_ids else "val",
        })
    manifest.save(out_dir / "manifest.json")
    return manifest


def load_episodes(data_dir, manifest: DatasetManifest, split: str | None = None) -> list[Episode]:
    data_dir = Path(data_dir)
    out = []
    for entry in manifest.episodes:
        if split is not None and entry["split"] != split:
            continue
        out.append(Episode.from_csv(data_dir / entry["file"], id=entry["id"], start=entry["start"]))
    return out
