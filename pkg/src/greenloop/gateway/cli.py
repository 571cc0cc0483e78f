"""Command-line surface for the full pipeline.

    greenloop gen-data   --workdir W [--episodes 15 --minutes 212 --seed 7 --no-guide]
    greenloop train      --workdir W --model {arx|lstm|ham} [--seed 0]
    greenloop eval-models --workdir W
    greenloop run        --workdir W --controller LLM-HAM-Te0-P [--penalty]
                         [--backend mock|remote] [--ticks N] [--schedule SPEC] [--seed 0]
    greenloop compare    --workdir W [--controllers A,B,...] [--ticks N] [--seed 0]
    greenloop show-card  RUN TICK --workdir W
    greenloop serve      --workdir W [--host H] [--port P]

Schedule SPEC: "t:target[,t:target...]@duration_s", times in seconds.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

from ..dataset import build_dataset
from ..evalreport import compute_metrics, model_intercomparison, write_report
from ..history import DuplicateExperimentError, HistoryStore
from ..looprunner import (
    ControllerName,
    MissingArtifactError,
    ReferenceSchedule,
    RunLog,
    default_schedule,
    make_controller,
    proportional_rule,
    run_closed_loop,
    run_rule_based,
)
from ..plantsim import TruthPlant
from ..predictors import (
    PbmPredictor,
    save_predictor,
    train_arx_predictor,
    train_costa_predictor,
    train_lstm_predictor,
)
from ..predictors.nn import save_loss_curve
from .workspace import Workspace, WorkspaceError

GUIDE_START = datetime(2025, 3, 1, 12, 41, 30)
DEFAULT_COMPARE = [
    "LLM-Te0", "LLM-Te0-P",
    "LLM-SQL-Te0", "LLM-SQL-Te0-P",
    "LLM-Linear-Te0", "LLM-Linear-Te0-P",
    "LLM-LSTM-Te0", "LLM-LSTM-Te0-P",
    "LLM-HAM-Te0", "LLM-HAM-Te0-P",
]


def parse_schedule(spec: str) -> ReferenceSchedule:
    try:
        points, duration = spec.split("@")
        breakpoints = tuple(
            (float(p.split(":")[0]), float(p.split(":")[1])) for p in points.split(",")
        )
        return ReferenceSchedule(breakpoints=breakpoints, duration_s=float(duration))
    except (ValueError, IndexError) as exc:
        raise ValueError(f"bad schedule spec {spec!r}: {exc}") from exc


def _schedule_from_args(args) -> ReferenceSchedule:
    if getattr(args, "schedule", None):
        return parse_schedule(args.schedule)
    if getattr(args, "ticks", None):
        return default_schedule(args.ticks * 60.0)
    return default_schedule()


def cmd_gen_data(args) -> int:
    ws = Workspace(args.workdir)
    ws.ensure_dirs()
    params, ambient, cfg_seed = ws.plant_setup()
    seed = args.seed if args.seed is not None else cfg_seed
    manifest = build_dataset(
        ws.data_dir, num_episodes=args.episodes, minutes_per_episode=args.minutes,
        params=params, ambient=ambient, seed=seed,
    )
    print(f"wrote {len(manifest.episodes)} episodes to {ws.data_dir} "
          f"({len(manifest.ids('train'))} train / {len(manifest.ids('val'))} val)")

    if not args.no_guide:
        store = HistoryStore(ws.history_dir)
        guide_id = f"MPC control_penalty{GUIDE_START:%Y-%m-%dT%H:%M:%S}"
        plant = TruthPlant(params, ambient, seed=seed + 77)
        log = run_rule_based(plant, proportional_rule(), default_schedule(), start_time=GUIDE_START)
        try:
            counts = store.ingest_run(log, guide_id)
            print(f"ingested guide experiment {guide_id!r}: {counts[1]} rows")
        except DuplicateExperimentError:
            print(f"guide experiment {guide_id!r} already present; skipped")
    return 0


def cmd_train(args) -> int:
    ws = Workspace(args.workdir)
    ws.ensure_dirs()
    train_eps = ws.episodes("train")
    val_eps = ws.episodes("val")
    params, _, _ = ws.plant_setup()
    lookback = ws.manifest().lookback

    if args.model == "arx":
        predictor = train_arx_predictor(train_eps, lookback=lookback)
        save_predictor(predictor, ws.model_path("Linear"))
        print(f"ARX(p=10, q=10) fitted on {len(train_eps)} episodes -> {ws.model_path('Linear')}")
        return 0

    from ..predictors.nn import LSTM_TRAIN, MLP_TRAIN

    if args.model == "lstm":
        cfg = replace(LSTM_TRAIN, seed=args.seed)
        predictor, history = train_lstm_predictor(train_eps, val_eps, lookback, cfg)
        path = ws.model_path("LSTM")
    else:  # ham
        cfg = replace(MLP_TRAIN, seed=args.seed)
        predictor, history = train_costa_predictor(train_eps, val_eps, params, cfg)
        path = ws.model_path("HAM")
    save_predictor(predictor, path)
    save_loss_curve(history, path.with_suffix(".loss.csv"))
    print(f"{args.model} trained for {len(history)} epochs "
          f"(best val MSE {min(h[2] for h in history):.3g}) -> {path}")
    return 0


def cmd_eval_models(args) -> int:
    ws = Workspace(args.workdir)
    ws.ensure_dirs()
    val_eps = ws.episodes("val")
    params, _, _ = ws.plant_setup()
    predictors: dict = {"PBM": PbmPredictor(params)}
    predictors.update(ws.predictors())
    table = model_intercomparison(predictors, val_eps, lookback=ws.manifest().lookback)
    print(f"{'model':<8} one-step MAE (degC) on {len(val_eps)} held-out episodes")
    for name, mae in table.items():
        print(f"{name:<8} {mae:.4f}")
    out = ws.reports_dir / "intercomparison.csv"
    with open(out, "w") as fh:
        fh.write("model,mae\n")
        for name, mae in table.items():
            fh.write(f"{name},{mae!r}\n")
    print(f"table written to {out}")
    return 0


def _run_one(ws: Workspace, name: str, args, seed: int) -> RunLog:
    registry = ws.registry(args.backend)
    parsed = ControllerName.parse(name)
    if getattr(args, "penalty", False) and not parsed.penalty:
        parsed = ControllerName(parsed.assistance, parsed.te, True)
    controller = make_controller(parsed, registry)
    schedule = _schedule_from_args(args)
    plant = ws.plant(seed=seed)
    start = datetime.now().replace(microsecond=0)
    log = run_closed_loop(
        plant, controller, schedule, start_time=start, registry=registry,
        run_dir=ws.runs_dir / f"{parsed.render()}{start:%Y-%m-%dT%H:%M:%S}",
    )
    return log


def cmd_run(args) -> int:
    ws = Workspace(args.workdir)
    ws.ensure_dirs()
    log = _run_one(ws, args.controller, args, args.seed)
    metrics = compute_metrics(log)
    print(f"run {log.run_id}: {len(log.rows)} ticks, status {log.status!r}")
    print(f"  MAE {metrics.mae:.3f} degC | heater mean {metrics.heater_mean:.3f} | "
          f"fan fraction {metrics.fan_fraction:.3f} | fallback fraction {metrics.fallback_fraction:.3f}")
    print(f"  artifacts in {ws.runs_dir / log.run_id}")
    return 0


def cmd_compare(args) -> int:
    ws = Workspace(args.workdir)
    ws.ensure_dirs()
    names = args.controllers.split(",") if args.controllers else DEFAULT_COMPARE
    metrics = []
    for name in names:
        log = _run_one(ws, name.strip(), args, args.seed)
        m = compute_metrics(log)
        metrics.append(m)
        print(f"{m.name:<22} MAE {m.mae:.3f}  heater {m.heater_mean:.3f}  fan {m.fan_fraction:.3f}")
    paths = write_report(metrics, ws.reports_dir)
    print(f"report written to {paths['metrics']} (+ summary, penalty deltas)")
    return 0


def cmd_show_card(args) -> int:
    ws = Workspace(args.workdir)
    run_dir = ws.runs_dir / args.run
    if not run_dir.exists():
        candidates = [p.name for p in sorted(ws.runs_dir.glob("*")) if p.is_dir()]
        raise WorkspaceError(f"no run {args.run!r}; available: {candidates}")
    log = RunLog.load(run_dir)
    if not (0 <= args.tick < len(log.cards)):
        raise WorkspaceError(f"tick {args.tick} out of range (run has {len(log.cards)} cards)")
    print(f"=== {log.controller} tick {args.tick} ===")
    print(log.cards[args.tick].render_text())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    ws = Workspace(args.workdir)
    ws.ensure_dirs()
    app = create_app(ws)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenloop", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_workdir(p):
        p.add_argument("--workdir", default=".", help="workspace directory (default: cwd)")

    p = sub.add_parser("gen-data", help="generate excitation episodes and the guide history")
    add_workdir(p)
    p.add_argument("--episodes", type=int, default=15)
    p.add_argument("--minutes", type=int, default=212)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-guide", action="store_true", help="skip the scripted guide-history run")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit one predictor")
    add_workdir(p)
    p.add_argument("--model", required=True, choices=["arx", "lstm", "ham"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-models", help="held-out one-step MAE table")
    add_workdir(p)
    p.set_defaults(func=cmd_eval_models)

    p = sub.add_parser("run", help="one closed-loop run")
    add_workdir(p)
    p.add_argument("--controller", required=True, help="e.g. LLM-HAM-Te0-P")
    p.add_argument("--penalty", action="store_true", help="force the actuation-penalty prompt")
    p.add_argument("--backend", default="mock", choices=["mock", "remote"])
    p.add_argument("--ticks", type=int, default=None, help="shorten the default schedule to N ticks")
    p.add_argument("--schedule", default=None, help='"t:target,...@duration_s"')
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="batch of variants -> metrics report")
    add_workdir(p)
    p.add_argument("--controllers", default=None, help="comma-separated names")
    p.add_argument("--backend", default="mock", choices=["mock", "remote"])
    p.add_argument("--ticks", type=int, default=None)
    p.add_argument("--schedule", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("show-card", help="print one decision card")
    p.add_argument("run", help="run id (directory name under runs/)")
    p.add_argument("tick", type=int)
    add_workdir(p)
    p.set_defaults(func=cmd_show_card)

    p = sub.add_parser("serve", help="HTTP service with the live event stream")
    add_workdir(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WorkspaceError, MissingArtifactError, ValueError, DuplicateExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
