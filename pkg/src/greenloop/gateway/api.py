"""HTTP service: start runs, queue operator commands, stream per-tick events.

Endpoints (all JSON):

    GET  /health
    POST /runs                  {controller, backend?, seed?, ticks?, schedule?,
                                 penalty?, tick_interval_s?} -> {run_id, ticks}
    GET  /runs                  -> [{run_id, status, ...}]
    POST /runs/{id}/commands    OperatorCommand payload -> {queued, tick}
    GET  /runs/{id}/events      server-sent events: `state`, `card`, `gap`, `status`
    GET  /runs/{id}/log         full tick log so far
    GET  /runs/{id}/metrics     tracking/actuation metrics so far

Each run owns one control thread; handlers only enqueue commands and read
snapshots. The event stream is push-only with bounded per-subscriber
buffers (oldest dropped, gaps announced), so a slow consumer can never
stall a control tick. Commands are applied at tick boundaries: an
acknowledgment at tick k means the effect is visible by tick k+1.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from ..evalreport import compute_metrics
from ..looprunner import (
    ControllerName,
    EventBus,
    MissingArtifactError,
    OperatorCommand,
    ReferenceSchedule,
    RunLog,
    default_schedule,
    make_controller,
    run_closed_loop,
)
from .workspace import Workspace, WorkspaceError


class StartRunRequest(BaseModel):
    controller: str
    backend: str = "mock"
    seed: int = 0
    ticks: int | None = Field(default=None, ge=1)
    schedule: list[list[float]] | None = None  # [[t_s, target], ...]
    duration_s: float | None = None
    penalty: bool | None = None
    tick_interval_s: float = Field(default=0.0, ge=0.0, le=10.0)


class CommandRequest(BaseModel):
    kind: str
    target: float | None = None
    enabled: bool | None = None
    text: str | None = None
    controller: str | None = None


@dataclass
class ActiveRun:
    run_id: str
    controller: str
    log: RunLog
    bus: EventBus
    commands: queue.Queue
    thread: threading.Thread
    done: threading.Event = field(default_factory=threading.Event)

    @property
    def status(self) -> str:
        # the loop sets a terminal log.status before publishing its final
        # status event, so reading it directly is race-free for observers
        return self.log.status

    def snapshot_rows(self) -> list[dict]:
        return [
            {**row.to_dict(), "controller": self.controller}
            for row in list(self.log.rows)
        ]


def _build_schedule(req: StartRunRequest) -> ReferenceSchedule:
    if req.schedule:
        duration = req.duration_s or (req.schedule[-1][0] + 60.0 * (req.ticks or 1))
        return ReferenceSchedule(
            breakpoints=tuple((float(t), float(v)) for t, v in req.schedule),
            duration_s=float(duration),
        )
    if req.ticks:
        return default_schedule(req.ticks * 60.0)
    return default_schedule()


def create_app(workspace: Workspace) -> FastAPI:
    app = FastAPI(title="greenloop gateway")
    runs: dict[str, ActiveRun] = {}
    runs_lock = threading.Lock()

    def get_run(run_id: str) -> ActiveRun:
        with runs_lock:
            run = runs.get(run_id)
        if run is None:
            raise HTTPException(status_code=404, detail=f"no run {run_id!r}")
        return run

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/runs")
    def start_run(req: StartRunRequest):
        try:
            registry = workspace.registry(req.backend)
            name = ControllerName.parse(req.controller)
            if req.penalty is not None:
                name = ControllerName(name.assistance, name.te, req.penalty)
            controller = make_controller(name, registry)
            schedule = _build_schedule(req)
        except (ValueError, MissingArtifactError, WorkspaceError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        start = datetime.now().replace(microsecond=0)
        run_id = f"{name.render()}{start:%Y-%m-%dT%H:%M:%S}"
        with runs_lock:
            suffix = 1
            base_id = run_id
            while run_id in runs:
                suffix += 1
                run_id = f"{base_id}-{suffix}"

        bus = EventBus()
        commands: queue.Queue = queue.Queue()
        log = RunLog(run_id=run_id, controller=name.render(), start_time=start)
        plant = workspace.plant(seed=req.seed)

        run = ActiveRun(run_id=run_id, controller=name.render(), log=log, bus=bus,
                        commands=commands, thread=None)  # type: ignore[arg-type]

        def drive():
            try:
                run_closed_loop(
                    plant, controller, schedule,
                    run_id=run_id, start_time=start,
                    command_queue=commands, bus=bus, registry=registry,
                    tick_interval_s=req.tick_interval_s,
                    run_dir=workspace.runs_dir / run_id, log=log,
                )
            except Exception as exc:  # surfaced through /log status, never silent
                log.status = f"failed: {exc}"
                bus.publish({"type": "status", "data": {"run_id": run_id, "status": log.status}})
            finally:
                run.done.set()

        run.thread = threading.Thread(target=drive, daemon=True, name=f"run-{run_id}")
        with runs_lock:
            runs[run_id] = run
        run.thread.start()
        return {"run_id": run_id, "controller": name.render(), "ticks": schedule.ticks}

    @app.get("/runs")
    def list_runs():
        with runs_lock:
            snapshot = list(runs.values())
        return [
            {"run_id": r.run_id, "controller": r.controller, "status": r.status,
             "ticks_done": len(r.log.rows)}
            for r in snapshot
        ]

    @app.post("/runs/{run_id}/commands")
    def send_command(run_id: str, req: CommandRequest):
        run = get_run(run_id)
        if run.done.is_set():
            raise HTTPException(status_code=409, detail="run already finished")
        try:
            cmd = OperatorCommand(
                kind=req.kind, target=req.target, enabled=req.enabled,
                text=req.text, controller=req.controller,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        tick = len(run.log.rows)
        run.commands.put(cmd)
        # applied at the next tick boundary: effect visible by tick+1
        return {"queued": True, "tick": tick}

    @app.get("/runs/{run_id}/events")
    def stream_events(run_id: str):
        run = get_run(run_id)
        sub = run.bus.subscribe()

        def gen():
            # replay what is already logged so late subscribers start complete;
            # queued duplicates of replayed ticks are skipped below
            rows = run.snapshot_rows()
            cards = list(run.log.cards)
            for row in rows:
                yield _sse("state", row, row["tick"])
            for tick, card in enumerate(cards):
                yield _sse("card", {"tick": tick, "card": card.to_dict()}, tick)
            seen_state = rows[-1]["tick"] if rows else -1
            seen_card = len(cards) - 1
            try:
                while True:
                    event = sub.get(timeout=0.5)
                    if event is None:
                        if run.done.is_set():
                            break
                        yield ": keepalive\n\n"
                        continue
                    data = event["data"]
                    if event["type"] == "state":
                        if data["tick"] <= seen_state:
                            continue
                        data = {**data, "controller": run.controller}
                    elif event["type"] == "card" and data["tick"] <= seen_card:
                        continue
                    yield _sse(event["type"], data, data.get("tick"))
                    if event["type"] == "status":
                        break
            finally:
                run.bus.unsubscribe(sub)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.get("/runs/{run_id}/log")
    def get_log(run_id: str):
        run = get_run(run_id)
        return {
            "run_id": run.run_id,
            "controller": run.controller,
            "status": run.status,
            "rows": run.snapshot_rows(),
        }

    @app.get("/runs/{run_id}/cards/{tick}")
    def get_card(run_id: str, tick: int):
        run = get_run(run_id)
        cards = list(run.log.cards)
        if not (0 <= tick < len(cards)):
            raise HTTPException(status_code=404, detail=f"no card for tick {tick}")
        return {"tick": tick, "card": cards[tick].to_dict()}

    @app.get("/runs/{run_id}/metrics")
    def get_metrics(run_id: str):
        run = get_run(run_id)
        if not run.log.rows:
            raise HTTPException(status_code=409, detail="no ticks recorded yet")
        return compute_metrics(run.log).to_dict()

    return app


def _sse(event: str, data: dict, event_id=None) -> str:
    lines = [f"event: {event}"]
    if event_id is not None:
        lines.append(f"id: {event_id}")
    lines.append(f"data: {json.dumps(data)}")
    return "\n".join(lines) + "\n\n"
