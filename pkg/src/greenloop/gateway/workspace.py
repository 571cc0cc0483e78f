"""Filesystem layout and artifact loading for the CLI and the HTTP service.

    <workdir>/
      plant.cfg             optional key=value plant overrides
      data/                 episodes + manifest.json
      models/               arx.json / lstm.json / ham.json (+ loss curves)
      history/              experiments.csv / timeseries_data.csv
      runs/<run_id>/        ticks.csv / cards.jsonl / meta.json
      reports/              metrics.csv / summary.json / penalty_deltas.csv
"""

from __future__ import annotations

from pathlib import Path

from ..dataset import DatasetManifest, load_episodes
from ..history import HistoryStore
from ..llmlink import BackendConfig
from ..looprunner import ControllerRegistry
from ..plantsim import AmbientProfile, PlantParams, TruthPlant, load_params
from ..predictors import load_predictor

MODEL_FILES = {"Linear": "arx.json", "LSTM": "lstm.json", "HAM": "ham.json"}


class WorkspaceError(RuntimeError):
    pass


class Workspace:
    def __init__(self, root):
        self.root = Path(root)
        self.data_dir = self.root / "data"
        self.models_dir = self.root / "models"
        self.history_dir = self.root / "history"
        self.runs_dir = self.root / "runs"
        self.reports_dir = self.root / "reports"

    def ensure_dirs(self) -> None:
        for d in (self.data_dir, self.models_dir, self.history_dir, self.runs_dir, self.reports_dir):
            d.mkdir(parents=True, exist_ok=True)

    # -- plant ---------------------------------------------------------------

    def plant_setup(self) -> tuple[PlantParams, AmbientProfile, int]:
        cfg = self.root / "plant.cfg"
        if cfg.exists():
            return load_params(cfg)
        return PlantParams(), AmbientProfile(), 0

    def plant(self, seed: int | None = None) -> TruthPlant:
        params, ambient, cfg_seed = self.plant_setup()
        return TruthPlant(params, ambient, seed=cfg_seed if seed is None else seed)

    # -- dataset ---------------------------------------------------------------

    def manifest(self) -> DatasetManifest:
        path = self.data_dir / "manifest.json"
        if not path.exists():
            raise WorkspaceError(f"no dataset at {path}; run `greenloop gen-data` first")
        return DatasetManifest.load(path)

    def episodes(self, split: str | None = None):
        return load_episodes(self.data_dir, self.manifest(), split)

    # -- models ----------------------------------------------------------------

    def model_path(self, kind: str) -> Path:
        return self.models_dir / MODEL_FILES[kind]

    def predictors(self) -> dict:
        out = {}
        for kind, filename in MODEL_FILES.items():
            path = self.models_dir / filename
            if path.exists():
                out[kind] = load_predictor(path)
        return out

    # -- history ---------------------------------------------------------------

    def history(self) -> HistoryStore | None:
        if not (self.history_dir / "experiments.csv").exists():
            return None
        return HistoryStore(self.history_dir)

    def guide_id(self) -> str | None:
        store = self.history()
        if store is None:
            return None
        ids = store.experiment_ids()
        return ids[0] if ids else None

    # -- controller registry ----------------------------------------------------

    def registry(self, backend: str = "mock") -> ControllerRegistry:
        if backend == "mock":
            factory = lambda te: BackendConfig(kind="mock", temperature=te)  # noqa: E731
        elif backend == "remote":
            factory = BackendConfig.remote_from_env
        else:
            raise WorkspaceError(f"unknown backend {backend!r}; use mock or remote")
        return ControllerRegistry(
            predictors=self.predictors(),
            history=self.history(),
            guide_experiment_id=self.guide_id(),
            backend_factory=factory,
        )
