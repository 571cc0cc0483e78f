"""Closed-loop driver: schedule -> measure -> decide -> actuate -> log.

One logical control thread owns the plant and the log for a run. Operator
commands arrive through a thread-safe queue and are applied only at tick
boundaries, never mid-integration. State and card events fan out to any
number of read-only subscribers through bounded queues that drop oldest
(with a counted gap event) rather than ever blocking the control tick.

Controller variants follow the naming convention
``Core[-Assistance]-Te<tau>[-P]`` with core LLM, assistance one of
SQL / Linear / LSTM / HAM (omitted when prompt-only), Te the backend
sampling temperature, and -P the actuation-penalty prompt.

The control period is fixed at 60 s of simulated time, matching the data
sampling rate. The loop does not pace itself to the wall clock (an
optional per-tick sleep exists for interactive streaming); if the backend
cannot answer, the tick falls back to holding the previous controls
rather than stretching the period.
"""

from __future__ import annotations

import json
import queue
import re
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

from .agent import AgentConfig, DecisionCard, PromptContext, make_query_tool, make_simulate_tool, run_agent
from .history import HistoryStore
from .llmlink import QUERY_TOOL, SIMULATE_TOOL, BackendConfig
from .plantsim import ControlInput, PlantSanityError, TruthPlant
from .predictors import Predictor

PERIOD_S = 60.0
ASSISTANCE_KINDS = ("SQL", "Linear", "LSTM", "HAM")


class MissingArtifactError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Naming convention
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"^LLM(?:-(SQL|Linear|LSTM|HAM))?-Te(\d+(?:\.\d+)?)(-P)?$")


@dataclass(frozen=True)
class ControllerName:
    assistance: str | None = None  # None | SQL | Linear | LSTM | HAM
    te: float = 0.0
    penalty: bool = False

    def __post_init__(self):
        if self.assistance is not None and self.assistance not in ASSISTANCE_KINDS:
            raise ValueError(f"unknown assistance {self.assistance!r}")
        if self.te < 0:
            raise ValueError("Te must be >= 0")

    def render(self) -> str:
        text = "LLM"
        if self.assistance:
            text += f"-{self.assistance}"
        text += f"-Te{format(self.te, 'g')}"
        if self.penalty:
            text += "-P"
        return text

    @classmethod
    def parse(cls, text: str) -> "ControllerName":
        m = _NAME_RE.match(text)
        if not m:
            raise ValueError(
                f"cannot parse controller name {text!r}; expected LLM[-SQL|-Linear|-LSTM|-HAM]-Te<n>[-P]"
            )
        return cls(assistance=m.group(1), te=float(m.group(2)), penalty=m.group(3) is not None)

    @property
    def architecture(self) -> str:
        if self.assistance is None:
            return "plain"
        return "sql" if self.assistance == "SQL" else "predictive"


# ---------------------------------------------------------------------------
# Reference schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSchedule:
    breakpoints: tuple[tuple[float, float], ...]  # (start second, target degC)
    duration_s: float

    def __post_init__(self):
        if not self.breakpoints or self.breakpoints[0][0] != 0.0:
            raise ValueError("schedule must start with a breakpoint at t=0")
        starts = [b[0] for b in self.breakpoints]
        if any(later <= earlier for earlier, later in zip(starts, starts[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if self.duration_s <= starts[-1]:
            raise ValueError("duration must extend past the last breakpoint")

    def target_at(self, t: float) -> float:
        target = self.breakpoints[0][1]
        for start, value in self.breakpoints:
            if t >= start:
                target = value
            else:
                break
        return target

    @property
    def ticks(self) -> int:
        return int(self.duration_s // PERIOD_S)


def default_schedule(duration_s: float = 21600.0) -> ReferenceSchedule:
    """Six-hour staircase: 27 -> 30 -> 27.34 -> 24 degC in equal quarters."""
    quarter = duration_s / 4.0
    return ReferenceSchedule(
        breakpoints=((0.0, 27.0), (quarter, 30.0), (2 * quarter, 27.34), (3 * quarter, 24.0)),
        duration_s=duration_s,
    )


# ---------------------------------------------------------------------------
# Operator commands & events
# ---------------------------------------------------------------------------

COMMAND_KINDS = ("set_target", "set_penalty", "set_objective_text", "set_variant", "stop")


@dataclass(frozen=True)
class OperatorCommand:
    kind: str
    target: float | None = None
    enabled: bool | None = None
    text: str | None = None
    controller: str | None = None
    issued_at: float = 0.0

    def __post_init__(self):
        if self.kind not in COMMAND_KINDS:
            raise ValueError(f"unknown command kind {self.kind!r}")
        if self.kind == "set_target":
            if self.target is None or self.target != self.target or abs(self.target) > 1e3:
                raise ValueError("set_target needs a finite target")
        if self.kind == "set_penalty" and self.enabled is None:
            raise ValueError("set_penalty needs enabled true/false")
        if self.kind == "set_objective_text" and self.text is None:
            raise ValueError("set_objective_text needs text")
        if self.kind == "set_variant":
            ControllerName.parse(self.controller or "")


class Subscription:
    def __init__(self, maxsize: int):
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.dropped = 0
        self._lock = threading.Lock()

    def push(self, event: dict) -> None:
        with self._lock:
            if self.dropped:
                # announce the gap before the next delivered event
                gap = {"type": "gap", "data": {"dropped": self.dropped}}
                try:
                    self.queue.put_nowait(gap)
                    self.dropped = 0
                except queue.Full:
                    pass
            try:
                self.queue.put_nowait(event)
            except queue.Full:
                try:
                    self.queue.get_nowait()  # drop oldest
                except queue.Empty:
                    pass
                self.dropped += 1
                try:
                    self.queue.put_nowait(event)
                except queue.Full:
                    self.dropped += 1

    def get(self, timeout: float | None = None) -> dict | None:
        try:
            return self.queue.get(timeout=timeout)
        except queue.Empty:
            return None


class EventBus:
    """Fan-out of per-tick events; never blocks the publisher."""

    def __init__(self):
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()

    def subscribe(self, maxsize: int = 512) -> Subscription:
        sub = Subscription(maxsize)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, event: dict) -> None:
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub.push(event)


# ---------------------------------------------------------------------------
# Run log
# ---------------------------------------------------------------------------

@dataclass
class TickRow:
    tick: int
    t: float
    target: float
    T: float
    T_amb: float
    u_h: float
    u_f: int
    card_ref: str
    fallback: bool

    def to_dict(self) -> dict:
        return {
            "tick": self.tick, "t": self.t, "target": self.target, "T": self.T,
            "T_amb": self.T_amb, "u_h": self.u_h, "u_f": self.u_f,
            "card_ref": self.card_ref, "fallback": self.fallback,
        }


@dataclass
class RunLog:
    run_id: str
    controller: str
    start_time: datetime
    config: dict = field(default_factory=dict)
    rows: list[TickRow] = field(default_factory=list)
    cards: list[DecisionCard] = field(default_factory=list)
    status: str = "running"  # terminal before the final status event is published

    TICKS_CSV = "ticks.csv"
    CARDS_JSONL = "cards.jsonl"
    META_JSON = "meta.json"

    def save(self, run_dir) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / self.TICKS_CSV, "w", newline="") as fh:
            fh.write("tick,t,target,T,T_amb,u_h,u_f,card,fallback\n")
            for r in self.rows:
                fh.write(
                    f"{r.tick},{repr(r.t)},{repr(r.target)},{repr(r.T)},{repr(r.T_amb)},"
                    f"{repr(r.u_h)},{r.u_f},{r.card_ref},{int(r.fallback)}\n"
                )
        with open(run_dir / self.CARDS_JSONL, "w") as fh:
            for i, card in enumerate(self.cards):
                fh.write(json.dumps({"tick": i, "card": card.to_dict()}) + "\n")
        meta = {
            "run_id": self.run_id,
            "controller": self.controller,
            "start_time": self.start_time.strftime("%Y-%m-%dT%H:%M:%S"),
            "status": self.status,
            "config": self.config,
        }
        with open(run_dir / self.META_JSON, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, run_dir) -> "RunLog":
        run_dir = Path(run_dir)
        with open(run_dir / cls.META_JSON) as fh:
            meta = json.load(fh)
        log = cls(
            run_id=meta["run_id"],
            controller=meta["controller"],
            start_time=datetime.strptime(meta["start_time"], "%Y-%m-%dT%H:%M:%S"),
            config=meta.get("config", {}),
            status=meta.get("status", "completed"),
        )
        with open(run_dir / cls.TICKS_CSV) as fh:
            next(fh)
            for line in fh:
                parts = line.rstrip("\n").split(",")
                log.rows.append(TickRow(
                    tick=int(parts[0]), t=float(parts[1]), target=float(parts[2]),
                    T=float(parts[3]), T_amb=float(parts[4]), u_h=float(parts[5]),
                    u_f=int(parts[6]), card_ref=parts[7], fallback=bool(int(parts[8])),
                ))
        cards_path = run_dir / cls.CARDS_JSONL
        if cards_path.exists():
            with open(cards_path) as fh:
                for line in fh:
                    log.cards.append(DecisionCard.from_dict(json.loads(line)["card"]))
        return log


# ---------------------------------------------------------------------------
# Controller construction
# ---------------------------------------------------------------------------

@dataclass
class ControllerRegistry:
    """Artifacts a controller may be wired to."""

    predictors: dict[str, Predictor] = field(default_factory=dict)  # keys: Linear | LSTM | HAM
    history: HistoryStore | None = None
    guide_experiment_id: str | None = None
    backend_factory: object = None  # callable(te) -> BackendConfig; defaults to mock

    def backend(self, te: float) -> BackendConfig:
        if self.backend_factory is not None:
            return self.backend_factory(te)
        return BackendConfig(kind="mock", temperature=te)


@dataclass
class Controller:
    name: ControllerName
    agent_config: AgentConfig
    tool_label: str
    predictor: Predictor | None = None
    history: HistoryStore | None = None
    guide_experiment_id: str | None = None


def make_controller(name: ControllerName | str, registry: ControllerRegistry) -> Controller:
    """Wire a named variant to its artifacts; fails with a remediation hint."""
    if isinstance(name, str):
        name = ControllerName.parse(name)
    backend = registry.backend(name.te)
    config = AgentConfig(architecture=name.architecture, backend=backend)

    predictor = None
    history = None
    if name.assistance == "SQL":
        if registry.history is None:
            raise MissingArtifactError(
                "SQL assistance needs an episode store; ingest a guide run first (gen-data --guide)"
            )
        history = registry.history
    elif name.assistance is not None:
        predictor = registry.predictors.get(name.assistance)
        if predictor is None:
            model_flag = {"Linear": "arx", "LSTM": "lstm", "HAM": "ham"}[name.assistance]
            raise MissingArtifactError(
                f"{name.assistance} assistance needs a trained predictor; run `train --model {model_flag}` first"
            )
    return Controller(
        name=name,
        agent_config=config,
        tool_label=name.assistance or "none",
        predictor=predictor,
        history=history,
        guide_experiment_id=registry.guide_experiment_id,
    )


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

@dataclass
class _LoopState:
    """Mutable knobs the operator can change at tick boundaries."""

    penalty: bool
    objective_text: str = ""
    target_override: float | None = None
    stop_requested: bool = False


def _apply_commands(state: _LoopState, controller_ref: list[Controller],
                    registry: ControllerRegistry | None, command_queue) -> None:
    while True:
        try:
            cmd = command_queue.get_nowait()
        except queue.Empty:
            return
        if cmd.kind == "set_target":
            state.target_override = float(cmd.target)
        elif cmd.kind == "set_penalty":
            state.penalty = bool(cmd.enabled)
        elif cmd.kind == "set_objective_text":
            state.objective_text = cmd.text or ""
        elif cmd.kind == "set_variant":
            if registry is None:
                continue
            new = make_controller(cmd.controller, registry)
            new_name = replace(new.name, penalty=state.penalty)
            controller_ref[0] = Controller(
                name=new_name, agent_config=new.agent_config, tool_label=new.tool_label,
                predictor=new.predictor, history=new.history,
                guide_experiment_id=new.guide_experiment_id,
            )
        elif cmd.kind == "stop":
            state.stop_requested = True


def run_closed_loop(
    plant: TruthPlant,
    controller: Controller,
    schedule: ReferenceSchedule,
    run_id: str | None = None,
    start_time: datetime | None = None,
    command_queue: queue.Queue | None = None,
    bus: EventBus | None = None,
    registry: ControllerRegistry | None = None,
    max_consecutive_fallbacks: int = 10,
    tick_interval_s: float = 0.0,
    run_dir=None,
    log: RunLog | None = None,
) -> RunLog:
    """Drive the plant for the schedule duration under the given controller.

    Deterministic for the mock backend and a fixed plant seed. `registry`
    is only needed to honor set_variant commands. Passing a pre-made `log`
    lets observers watch rows appear while the run progresses.
    """
    start_time = start_time or datetime.now()
    name = controller.name.render()
    run_id = run_id or f"{name}{start_time.strftime('%Y-%m-%dT%H:%M:%S')}"
    if log is None:
        log = RunLog(run_id=run_id, controller=name, start_time=start_time)
    log.run_id = run_id
    log.controller = name
    log.start_time = start_time
    log.config = {
        "schedule": {"breakpoints": list(map(list, schedule.breakpoints)), "duration_s": schedule.duration_s},
        "backend": controller.agent_config.backend.kind,
        "te": controller.name.te,
        "penalty": controller.name.penalty,
    }

    state = _LoopState(penalty=controller.name.penalty)
    controller_ref = [controller]
    past_rows: list[tuple[float, float, float]] = []
    prev_controls = ControlInput(0.0, 0)
    measured = plant.measured
    fallback_streak = 0
    log.status = "running"

    for tick in range(schedule.ticks):
        if command_queue is not None:
            _apply_commands(state, controller_ref, registry, command_queue)
        if state.stop_requested:
            log.status = "stopped by operator"
            break
        active = controller_ref[0]
        t = tick * PERIOD_S
        target = state.target_override if state.target_override is not None else schedule.target_at(t)
        T_amb = plant.state.T_amb

        ctx = PromptContext(
            target=round(target, 2),
            current=round(measured, 2),
            ambient=round(T_amb, 2),
            penalty=state.penalty,
            tool_name=active.tool_label,
            objective_text=state.objective_text,
            guide_experiment_id=active.guide_experiment_id if active.tool_label == "SQL" else None,
        )

        tools = {}
        if active.history is not None:
            tools[QUERY_TOOL] = make_query_tool(active.history)
        if active.predictor is not None:
            current_T = measured
            tools[SIMULATE_TOOL] = make_simulate_tool(
                active.predictor, lambda rows=past_rows, T=current_T, amb=T_amb: (list(rows), T, amb)
            )

        card = run_agent(ctx, active.agent_config, tools, fallback=prev_controls)
        applied = card.applied
        row = TickRow(
            tick=tick, t=t, target=target, T=measured, T_amb=T_amb,
            u_h=applied.u_h, u_f=applied.u_f,
            card_ref=f"{RunLog.CARDS_JSONL}:{tick}", fallback=card.verdict != "pass",
        )
        log.rows.append(row)
        log.cards.append(card)
        if bus is not None:
            bus.publish({"type": "state", "data": {**row.to_dict(), "controller": active.name.render()}})
            bus.publish({"type": "card", "data": {"tick": tick, "card": card.to_dict()}})

        fallback_streak = fallback_streak + 1 if card.verdict == "fallback" else 0
        if fallback_streak > max_consecutive_fallbacks:
            log.status = f"halted: {fallback_streak} consecutive backend fallbacks"
            break

        try:
            next_measured = plant.step(applied, PERIOD_S)
        except PlantSanityError as exc:
            log.status = f"halted: {exc}"
            break
        past_rows.append((measured, applied.u_h, float(applied.u_f)))
        if len(past_rows) > 64:
            past_rows.pop(0)
        measured = next_measured
        prev_controls = applied
        if tick_interval_s > 0:
            time.sleep(tick_interval_s)

    if log.status == "running":
        log.status = "completed"
    # log.status is terminal before observers hear about it
    if bus is not None:
        bus.publish({"type": "status", "data": {"run_id": run_id, "status": log.status}})
    if run_dir is not None:
        log.save(run_dir)
    return log


def run_rule_based(
    plant: TruthPlant,
    rule,
    schedule: ReferenceSchedule,
    controller_label: str = "MPC control_penalty",
    start_time: datetime | None = None,
) -> RunLog:
    """Scripted (non-LLM) run used to seed the history store with guide data.

    `rule(target, measured, T_amb) -> ControlInput` is evaluated each tick.
    """
    start_time = start_time or datetime.now()
    log = RunLog(
        run_id=f"{controller_label}{start_time.strftime('%Y-%m-%dT%H:%M:%S')}",
        controller=controller_label, start_time=start_time,
    )
    measured = plant.measured
    for tick in range(schedule.ticks):
        t = tick * PERIOD_S
        target = schedule.target_at(t)
        u = rule(target, measured, plant.state.T_amb)
        log.rows.append(TickRow(
            tick=tick, t=t, target=target, T=measured, T_amb=plant.state.T_amb,
            u_h=u.u_h, u_f=u.u_f, card_ref="", fallback=False,
        ))
        measured = plant.step(u, PERIOD_S)
    log.status = "completed"
    return log


def proportional_rule(deadband: float = 0.1, fan_threshold: float = -1.5):
    """Deterministic tracking rule for guide-data generation.

    The plant settles within ~2 ticks, so raw proportional action bang-bangs;
    instead the duty moves one grid step per tick toward closing the error,
    with the fan only for large overshoots. Stateful: call once per run.
    """
    state = {"duty": 0.0}

    def rule(target: float, measured: float, T_amb: float) -> ControlInput:
        err = target - measured
        if err > deadband:
            state["duty"] = min(1.0, round(state["duty"] + 0.05, 2))
        elif err < -deadband:
            state["duty"] = max(0.0, round(state["duty"] - 0.05, 2))
        return ControlInput(state["duty"], 1 if err < fan_threshold else 0)

    return rule
