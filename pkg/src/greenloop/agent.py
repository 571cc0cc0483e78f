"""Prompt construction, the tool-use loop, guardrails, and decision cards.

Three controller architectures share one loop:

* plain - a single exchange, no tools.
* sql - the model may query the episode store; its decision must be backed
  by at least one retrieved row.
* predictive - the model may simulate candidate control sequences on a
  bound predictor; its decision must be backed by at least one completed
  simulation.

Every tick produces a decision card holding the exact prompt, the ordered
tool-call log with raw results, an evidence summary, the decision, the
model's rationale, and the guardrail verdict. No raw model output ever
reaches the actuators: decisions are parsed, snapped to the duty grid and
clamped, and a guardrail violation or any backend failure swaps in the
fallback action (hold the previous controls - safe for a slow thermal
plant, and it injects no new disturbance).
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field

from .history import HistoryStore, SqlError, parse_query
from .llmlink import (
    FINAL_ANSWER_TOOL,
    QUERY_TOOL,
    SIMULATE_TOOL,
    BackendConfig,
    ChatBackendError,
    ChatMessage,
    chat,
)
from .plantsim import ControlInput, snap_duty
from .predictors import Predictor, rollout

ARCHITECTURES = ("plain", "sql", "predictive")
TOOL_NAMES = ("none", "SQL", "Linear", "LSTM", "HAM")

TEMPLATE_PLAIN = (
    "What should the control values heater_duty_cycle and fan_on be set to in order to "
    "maintain a temperature of {target} degrees? The temperature now is {current} and the "
    "ambient temperature is {ambient} degrees. It is important that the temperature in the "
    "greenhouse matches the target temperature exactly."
)

TEMPLATE_PENALTY = (
    "What should the control values heater_duty_cycle and fan_on be set to in order to "
    "maintain a temperature of {target} degrees? The temperature now is {current} and the "
    "ambient temperature is {ambient} degrees. The second priority is to match the target "
    "temperature accurately and the first priority is to have a minimal usage of the fan."
)


class DecisionParseError(ValueError):
    pass


@dataclass(frozen=True)
class PromptContext:
    target: float
    current: float
    ambient: float
    penalty: bool = False
    tool_name: str = "none"
    objective_text: str = ""
    guide_experiment_id: str | None = None

    def __post_init__(self):
        if self.tool_name not in TOOL_NAMES:
            raise ValueError(f"tool name {self.tool_name!r} not one of {TOOL_NAMES}")
        for value in (self.target, self.current, self.ambient):
            if value != value or value in (float("inf"), float("-inf")):
                raise ValueError("temperatures must be finite")


def _num(x: float) -> str:
    return format(x, "g")


def render_prompt(ctx: PromptContext) -> str:
    template = TEMPLATE_PENALTY if ctx.penalty else TEMPLATE_PLAIN
    text = template.format(target=_num(ctx.target), current=_num(ctx.current), ambient=_num(ctx.ambient))
    if ctx.tool_name == "SQL":
        if ctx.guide_experiment_id:
            text += f" Use SQL database of earlier MPC titled '{ctx.guide_experiment_id}' experiment as guide."
        else:
            text += " Use SQL."
    elif ctx.tool_name != "none":
        text += f" Use {ctx.tool_name}."
    if ctx.objective_text:
        text += f" {ctx.objective_text}"
    return text


@dataclass
class ToolUse:
    round: int
    call_id: str
    tool: str
    arguments: dict
    result: dict
    ok: bool

    def to_dict(self) -> dict:
        return {
            "round": self.round, "call_id": self.call_id, "tool": self.tool,
            "arguments": self.arguments, "result": self.result, "ok": self.ok,
        }


@dataclass
class DecisionCard:
    prompt: str
    tool_log: list[ToolUse] = field(default_factory=list)
    evidence: str = ""
    decision: ControlInput | None = None
    applied: ControlInput | None = None
    rationale: str = ""
    verdict: str = "pass"  # pass | violation | fallback
    warnings: list[str] = field(default_factory=list)
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        def controls(u):
            return None if u is None else {"u_h": u.u_h, "u_f": u.u_f}

        return {
            "prompt": self.prompt,
            "tool_log": [t.to_dict() for t in self.tool_log],
            "evidence": self.evidence,
            "decision": controls(self.decision),
            "applied": controls(self.applied),
            "rationale": self.rationale,
            "verdict": self.verdict,
            "warnings": self.warnings,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionCard":
        def controls(v):
            return None if v is None else ControlInput(v["u_h"], v["u_f"])

        return cls(
            prompt=d["prompt"],
            tool_log=[ToolUse(**t) for t in d["tool_log"]],
            evidence=d["evidence"],
            decision=controls(d["decision"]),
            applied=controls(d["applied"]),
            rationale=d["rationale"],
            verdict=d["verdict"],
            warnings=list(d.get("warnings", [])),
            duration_s=d.get("duration_s", 0.0),
        )

    def render_text(self) -> str:
        lines = ["Prompt:", f"  {self.prompt}", "", "Tool use:"]
        if not self.tool_log:
            lines.append("  (none)")
        for i, t in enumerate(self.tool_log, 1):
            status = "ok" if t.ok else "FAILED"
            lines.append(f"  {i}. {t.tool}({json.dumps(t.arguments)}) [{status}]")
        lines += ["", "Retrieved evidence:", f"  {self.evidence or '(none)'}", "", "Decision:"]
        if self.applied is None:
            lines.append("  (none)")
        else:
            fan = "ON" if self.applied.u_f else "OFF"
            lines.append(f"  Heater duty cycle: {self.applied.u_h:.2f}   Fan: {fan}   [{self.verdict}]")
        lines += ["", "Rationale:", f"  {self.rationale or '(none)'}"]
        if self.warnings:
            lines += ["", "Warnings:"] + [f"  - {w}" for w in self.warnings]
        return "\n".join(lines)


@dataclass(frozen=True)
class AgentConfig:
    architecture: str = "plain"  # plain | sql | predictive
    backend: BackendConfig = field(default_factory=BackendConfig)
    max_rounds: int = 6
    guardrail_enabled: bool = True

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


# ---------------------------------------------------------------------------
# Tools
# ---------------------------------------------------------------------------

FINAL_ANSWER_SCHEMA = {
    "name": FINAL_ANSWER_TOOL,
    "description": "Commit the chosen actuator settings with a short rationale.",
    "parameters": {
        "type": "object",
        "properties": {
            "heater_duty_cycle": {"type": "number", "minimum": 0, "maximum": 1},
            "fan_on": {"type": "integer", "enum": [0, 1]},
            "rationale": {"type": "string"},
        },
        "required": ["heater_duty_cycle", "fan_on"],
    },
}

QUERY_SCHEMA = {
    "name": QUERY_TOOL,
    "description": (
        "Run a read-only SQL query over past experiments. Supported subset: "
        "SELECT cols FROM experiments|timeseries_data [WHERE col = 'v' "
        "[AND col BETWEEN 'lo' AND 'hi']...] [LIMIT n]."
    ),
    "parameters": {
        "type": "object",
        "properties": {"sql": {"type": "string"}},
        "required": ["sql"],
    },
}

SIMULATE_SCHEMA = {
    "name": SIMULATE_TOOL,
    "description": (
        "Simulate constant control sequences with the bound prediction model and "
        "return the predicted trajectory and end temperature for each candidate."
    ),
    "parameters": {
        "type": "object",
        "properties": {
            "candidates": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "heater_duty_cycle": {"type": "number"},
                        "fan_on": {"type": "integer", "enum": [0, 1]},
                    },
                    "required": ["heater_duty_cycle", "fan_on"],
                },
            },
            "horizon": {"type": "integer", "minimum": 1},
        },
        "required": ["candidates"],
    },
}


def make_query_tool(store: HistoryStore):
    def run(arguments: dict) -> tuple[dict, bool]:
        sql = arguments.get("sql", "")
        try:
            ast = parse_query(sql)
            result = store.execute(ast)
        except SqlError as exc:
            return {"error": str(exc)}, False
        payload = result.to_dict()
        payload["table"] = ast.table
        return payload, True

    return run


def make_simulate_tool(predictor: Predictor, window_supplier, default_horizon: int = 10):
    """Bind a predictor to the simulate tool.

    window_supplier() must return (past_rows, current_T, T_amb) at call time
    so the tool always sees the latest measurement.
    """

    def run(arguments: dict) -> tuple[dict, bool]:
        candidates = arguments.get("candidates") or []
        raw_horizon = arguments.get("horizon")
        horizon = default_horizon if raw_horizon is None else int(raw_horizon)
        if horizon < 1:
            return {"error": "horizon must be >= 1"}, False
        if not candidates:
            return {"error": "no candidates supplied"}, False
        past_rows, current_T, T_amb = window_supplier()
        results = []
        for cand in candidates:
            try:
                u = ControlInput(snap_duty(float(cand["heater_duty_cycle"])), int(cand["fan_on"]))
                trajectory = rollout(predictor, past_rows, current_T, T_amb, [u] * horizon)
            except (KeyError, ValueError) as exc:
                return {"error": f"bad candidate {cand!r}: {exc}"}, False
            results.append({
                "heater_duty_cycle": u.u_h,
                "fan_on": u.u_f,
                "trajectory": [round(float(x), 4) for x in trajectory],
                "end_temperature": round(float(trajectory[-1]), 4),
            })
        return {"horizon": horizon, "results": results}, True

    return run


def tools_for(config: AgentConfig, registry: dict) -> tuple[list[dict], dict]:
    """Schemas + executable tools for an architecture; validates the registry."""
    schemas = [FINAL_ANSWER_SCHEMA]
    executors = {}
    if config.architecture == "sql":
        if QUERY_TOOL not in registry:
            raise ValueError("sql architecture needs a query tool")
        schemas.append(QUERY_SCHEMA)
        executors[QUERY_TOOL] = registry[QUERY_TOOL]
    elif config.architecture == "predictive":
        if SIMULATE_TOOL not in registry:
            raise ValueError("predictive architecture needs a simulate tool")
        schemas.append(SIMULATE_SCHEMA)
        executors[SIMULATE_TOOL] = registry[SIMULATE_TOOL]
    return schemas, executors


# ---------------------------------------------------------------------------
# Decision extraction
# ---------------------------------------------------------------------------

_DUTY_TEXT_RE = re.compile(r"heater[_\s]*duty[_\s]*cycle\s*[:=]?\s*(-?\d*\.?\d+)", re.IGNORECASE)
_FAN_TEXT_RE = re.compile(r"fan(?:[_\s]*on)?\s*[:=]?\s*(on|off|true|false|0|1)", re.IGNORECASE)


def _coerce_fan(value) -> int:
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("on", "true", "1"):
            return 1
        if lowered in ("off", "false", "0"):
            return 0
        raise DecisionParseError(f"cannot read fan state from {value!r}")
    return 1 if value else 0


def parse_decision(args: dict | None = None, text: str = "") -> tuple[ControlInput, list[str]]:
    """Extract controls from structured final-answer args, else from free text.

    The duty is snapped to the 0.05 grid (halfway rounds down) and clamped
    to [0, 1]; any adjustment is reported as a warning for the card.
    """
    if args is not None and "heater_duty_cycle" in args and "fan_on" in args:
        raw_duty = float(args["heater_duty_cycle"])
        fan = _coerce_fan(args["fan_on"])
    else:
        duty_m = _DUTY_TEXT_RE.search(text or "")
        fan_m = _FAN_TEXT_RE.search(text or "")
        if not duty_m or not fan_m:
            raise DecisionParseError("no decision found in assistant output")
        raw_duty = float(duty_m.group(1))
        fan = _coerce_fan(fan_m.group(1))

    warnings = []
    if raw_duty < 0.0 or raw_duty > 1.0:
        warnings.append(f"duty {raw_duty} clamped into [0, 1]")
    snapped = snap_duty(raw_duty)
    if not warnings and abs(snapped - raw_duty) > 1e-9:
        warnings.append(f"duty {raw_duty} snapped to {snapped}")
    return ControlInput(snapped, fan), warnings


# ---------------------------------------------------------------------------
# Guardrail
# ---------------------------------------------------------------------------

def _evidence_rows(card: DecisionCard) -> int:
    # experiment-table lookups are metadata (time windows), not behavioral
    # evidence: only timeseries rows and completed simulations count
    total = 0
    for use in card.tool_log:
        if not use.ok:
            continue
        if use.tool == QUERY_TOOL and use.result.get("table", "timeseries_data") == "timeseries_data":
            total += int(use.result.get("row_count", len(use.result.get("rows", []))))
        elif use.tool == SIMULATE_TOOL:
            total += len(use.result.get("results", []))
    return total


def guard_evidence(card: DecisionCard, config: AgentConfig) -> str:
    """Require supporting evidence before an assistant decision may be actuated.

    The plain architecture is exempt; the assisted ones must have retrieved
    at least one row (sql) or completed at least one simulation (predictive).
    """
    if not config.guardrail_enabled or config.architecture == "plain":
        return "pass"
    return "pass" if _evidence_rows(card) >= 1 else "violation"


def _summarize_evidence(card: DecisionCard, architecture: str) -> str:
    if architecture == "plain":
        return "prompt-only decision (no tools available)"
    queries = [t for t in card.tool_log if t.tool == QUERY_TOOL]
    sims = [t for t in card.tool_log if t.tool == SIMULATE_TOOL]
    parts = []
    if queries:
        rows = sum(t.result.get("row_count", 0) for t in queries if t.ok)
        parts.append(f"{rows} row(s) retrieved across {len(queries)} quer{'y' if len(queries) == 1 else 'ies'}")
        sample = next((t.result["rows"] for t in queries if t.ok and t.result.get("rows")), None)
        if sample:
            parts.append(f"sample row: {sample[0]}")
    if sims:
        entries = [e for t in sims if t.ok for e in t.result.get("results", [])]
        if entries:
            ends = ", ".join(
                f"(u_h={e['heater_duty_cycle']:.2f}, fan={e['fan_on']}) -> {e['end_temperature']:.2f}"
                for e in entries
            )
            parts.append(f"{len(entries)} candidate sequence(s) simulated: {ends}")
    if not parts:
        return "no evidence gathered"
    return "; ".join(parts)


# ---------------------------------------------------------------------------
# Agent loop
# ---------------------------------------------------------------------------

SYSTEM_PROMPT_BASE = (
    "You control a small greenhouse. Actuators: a heater with duty cycle heater_duty_cycle "
    "in [0, 1] quantized in steps of 0.05, and a fan with binary state fan_on (1 cools toward "
    "ambient). Controls are applied for the next 60 seconds. Always finish by calling the "
    "final_answer tool with heater_duty_cycle, fan_on and a one-sentence rationale."
)

SYSTEM_PROMPT_SQL = (
    " You may query historical experiments with the query_history tool. Tables: "
    "experiments(ExperimentID, StartTime, EndTime, controller_name) and "
    "timeseries_data(MeasurementTime, Temperature, HeaterDutyCycle, FanOn, AmbientTemperature). "
    "Timestamps look like '2025-03-01 12:45:58'. Only SELECT with =, BETWEEN, AND and LIMIT "
    "is supported. Base your decision on retrieved rows."
)

SYSTEM_PROMPT_PREDICTIVE = (
    " You may evaluate candidate constant control sequences with the simulate_controls tool "
    "before deciding; prefer the candidate whose predicted end temperature is closest to the target."
)


def system_prompt(config: AgentConfig) -> str:
    text = SYSTEM_PROMPT_BASE
    if config.architecture == "sql":
        text += SYSTEM_PROMPT_SQL
    elif config.architecture == "predictive":
        text += SYSTEM_PROMPT_PREDICTIVE
    return text


def run_agent(
    ctx: PromptContext,
    config: AgentConfig,
    registry: dict,
    fallback: ControlInput,
) -> DecisionCard:
    """One control tick: prompt, tool loop, decision extraction, guardrail.

    Any failure (backend error, unparseable output, exhausted rounds,
    guardrail violation) yields a card whose applied action is `fallback`.
    """
    started = time.monotonic()
    schemas, executors = tools_for(config, registry)
    card = DecisionCard(prompt=render_prompt(ctx))
    messages = [
        ChatMessage(role="system", content=system_prompt(config)),
        ChatMessage(role="user", content=card.prompt),
    ]

    failure: str | None = None
    decision: ControlInput | None = None
    for round_no in range(1, config.max_rounds + 1):
        try:
            reply = chat(config.backend, messages, schemas)
        except ChatBackendError as exc:
            failure = f"backend failure: {exc}"
            break
        messages.append(reply)

        final_call = next((c for c in reply.tool_calls if c.name == FINAL_ANSWER_TOOL), None)
        if final_call is not None:
            try:
                decision, warnings = parse_decision(final_call.arguments, reply.content)
            except DecisionParseError as exc:
                failure = str(exc)
                break
            card.warnings.extend(warnings)
            card.rationale = str(final_call.arguments.get("rationale") or reply.content or "")
            break

        if reply.tool_calls:
            if len(card.tool_log) + len(reply.tool_calls) > config.max_rounds:
                failure = "tool budget exhausted"
                break
            for call in reply.tool_calls:
                executor = executors.get(call.name)
                if executor is None:
                    result, ok = {"error": f"tool {call.name!r} not available"}, False
                else:
                    result, ok = executor(call.arguments)
                card.tool_log.append(ToolUse(round_no, call.id, call.name, call.arguments, result, ok))
                messages.append(ChatMessage(role="tool", tool_call_id=call.id, content=json.dumps(result)))
            continue

        # plain-text reply: last-resort regex extraction
        try:
            decision, warnings = parse_decision(None, reply.content)
            card.warnings.extend(warnings)
            card.rationale = reply.content
        except DecisionParseError as exc:
            failure = str(exc)
        break
    else:
        failure = "max tool rounds exhausted without a decision"

    card.evidence = _summarize_evidence(card, config.architecture)

    if failure is not None or decision is None:
        card.verdict = "fallback"
        card.decision = fallback
        card.applied = fallback
        card.rationale = card.rationale or (failure or "no decision produced")
        card.warnings.append(failure or "no decision produced")
    else:
        verdict = guard_evidence(card, config)
        if verdict == "violation":
            card.verdict = "violation"
            card.decision = None
            card.applied = fallback
            card.warnings.append(
                "guardrail: decision lacked supporting evidence; fallback action applied"
            )
        else:
            card.verdict = "pass"
            card.decision = decision
            card.applied = decision

    card.duration_s = time.monotonic() - started
    return card
