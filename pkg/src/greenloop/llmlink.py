"""Chat backend abstraction: a remote chat-completions HTTP backend and a
deterministic mock speaking the identical message/tool-call protocol.

The mock is the offline stand-in for the hosted model: it reads the same
rendered prompt, issues the same kinds of tool calls (history queries or
candidate-sequence simulations), and returns a structured final answer, so
every agent code path can be exercised without network access. Its control
policy is intentionally simple and fully deterministic:

* plain: proportional heuristic on the target/current gap.
* history-assisted: look up the guide experiment's window, fetch its
  timeseries, then copy the duty used near the target temperature. If the
  evidence comes back empty it still answers from "recent experience" -
  reproducing the hallucination failure mode the evidence guardrail exists
  to catch.
* prediction-assisted: score constant candidate sequences by predicted
  end-of-horizon temperature, refine the duty grid around the best one,
  then pick argmin |T_end - target| + lambda * u_f (lambda > 0 only when
  the prompt asks for minimal fan usage).

Credentials for the remote backend come from environment variables only
and are never logged.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

from .plantsim import DUTY_STEP, ControlInput, snap_duty

ENV_ENDPOINT = "GREENLOOP_LLM_ENDPOINT"
ENV_MODEL = "GREENLOOP_LLM_MODEL"
ENV_API_KEY = "GREENLOOP_LLM_API_KEY"

FINAL_ANSWER_TOOL = "final_answer"
QUERY_TOOL = "query_history"
SIMULATE_TOOL = "simulate_controls"


class ChatBackendError(RuntimeError):
    pass


class ChatTimeoutError(ChatBackendError):
    pass


class ChatTransportError(ChatBackendError):
    pass


class MalformedReplyError(ChatBackendError):
    pass


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: dict


@dataclass
class ChatMessage:
    role: str  # system | user | assistant | tool
    content: str = ""
    tool_calls: list[ToolCall] = field(default_factory=list)
    tool_call_id: str | None = None

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant", "tool"):
            raise ValueError(f"bad role {self.role!r}")
        if self.role == "assistant" and not self.content and not self.tool_calls:
            raise ValueError("assistant message needs content or tool calls")
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool message needs a tool_call_id")


def validate_conversation(messages: list[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    seen_calls: set[str] = set()
    for msg in messages:
        for call in msg.tool_calls:
            seen_calls.add(call.id)
        if msg.role == "tool" and msg.tool_call_id not in seen_calls:
            raise ValueError(f"tool message references unknown call id {msg.tool_call_id!r}")


@dataclass(frozen=True)
class MockPolicy:
    """Deterministic decision policy for the mock backend."""

    candidates: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    horizon: int = 10
    fan_penalty: float = 1.0  # degC-equivalent cost per fan-on, applied when the prompt asks

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for c in self.candidates:
            steps = c / DUTY_STEP
            if not (0.0 <= c <= 1.0) or abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"candidate duty {c} not on the 0.05 grid")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # mock | remote
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    timeout_s: float = 30.0
    retries: int = 1
    policy: MockPolicy = field(default_factory=MockPolicy)

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.temperature < 0 or self.timeout_s <= 0:
            raise ValueError("temperature >= 0 and timeout > 0 required")

    @classmethod
    def remote_from_env(cls, temperature: float = 0.0) -> "BackendConfig":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise ValueError(f"{ENV_ENDPOINT} not set")
        return cls(
            kind="remote",
            endpoint=endpoint,
            model=os.environ.get(ENV_MODEL, "gpt-4o"),
            temperature=temperature,
        )


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------

def mock_select(
    predictions: list[tuple[ControlInput, float]],
    target: float,
    fan_penalty: float,
) -> ControlInput:
    """argmin over candidates of |T_end - target| + penalty * u_f.

    Ties break toward the lower heater duty, then the lower fan state.
    """
    if not predictions:
        raise ValueError("no candidates to select from")
    scored = [
        (abs(end - target) + fan_penalty * u.u_f, u.u_h, u.u_f, u)
        for u, end in predictions
    ]
    scored.sort(key=lambda item: item[:3])
    return scored[0][3]


# ---------------------------------------------------------------------------
# Mock backend
# ---------------------------------------------------------------------------

_TARGET_RE = re.compile(r"maintain a temperature of (-?[0-9.]+[0-9])")
_CURRENT_RE = re.compile(r"temperature now is (-?[0-9.]+[0-9])")
_AMBIENT_RE = re.compile(r"ambient temperature is (-?[0-9.]+[0-9])")
_GUIDE_RE = re.compile(r"titled '([^']+)'")
PENALTY_PHRASE = "minimal usage of the fan"


def _parse_prompt(text: str) -> dict:
    def grab(pattern, default=None):
        m = pattern.search(text)
        return float(m.group(1)) if m else default

    guide = _GUIDE_RE.search(text)
    return {
        "target": grab(_TARGET_RE),
        "current": grab(_CURRENT_RE),
        "ambient": grab(_AMBIENT_RE),
        "penalty": PENALTY_PHRASE in text,
        "guide_id": guide.group(1) if guide else None,
    }


def _tool_exchanges(messages: list[ChatMessage]) -> list[tuple[ToolCall, str]]:
    """(call, result content) pairs in conversation order."""
    calls: dict[str, ToolCall] = {}
    out = []
    for msg in messages:
        for call in msg.tool_calls:
            calls[call.id] = call
        if msg.role == "tool" and msg.tool_call_id in calls:
            out.append((calls[msg.tool_call_id], msg.content))
    return out


def _assistant(content: str = "", tool_calls: list[ToolCall] | None = None) -> ChatMessage:
    return ChatMessage(role="assistant", content=content, tool_calls=tool_calls or [])


def _final(u: ControlInput, rationale: str) -> ChatMessage:
    return _assistant(
        tool_calls=[ToolCall(
            id="call-final", name=FINAL_ANSWER_TOOL,
            arguments={"heater_duty_cycle": u.u_h, "fan_on": u.u_f, "rationale": rationale},
        )]
    )


def _plain_decision(info: dict) -> tuple[ControlInput, str]:
    target, current, ambient = info["target"], info["current"], info["ambient"]
    err = target - current
    base = 0.05 * max(0.0, target - ambient)
    duty = snap_duty(base + 0.25 * err)
    fan_threshold = -2.0 if info["penalty"] else -0.75
    fan = 1 if err < fan_threshold else 0
    rationale = (
        f"Holding roughly {duty:.2f} duty sized to the {target - ambient:.1f} degC lift over "
        f"ambient, nudged for the current {err:+.2f} degC error; fan {'on to shed the excess' if fan else 'off'}."
    )
    return ControlInput(duty, fan), rationale


def _sql_flow(info: dict, exchanges: list[tuple[ToolCall, str]], policy: MockPolicy) -> ChatMessage:
    queries = [(c, r) for c, r in exchanges if c.name == QUERY_TOOL]
    if not queries:
        guide = info.get("guide_id") or ""
        sql = (
            "SELECT StartTime, EndTime FROM experiments "
            f"WHERE ExperimentID = '{guide}'"
        )
        return _assistant(tool_calls=[ToolCall("call-1", QUERY_TOOL, {"sql": sql})])

    if len(queries) == 1:
        window = None
        try:
            payload = json.loads(queries[0][1])
            if payload.get("rows"):
                window = payload["rows"][0]
        except (json.JSONDecodeError, TypeError):
            window = None
        if window and len(window) == 2:
            sql = (
                "SELECT Temperature, HeaterDutyCycle, FanOn FROM timeseries_data "
                f"WHERE MeasurementTime BETWEEN '{window[0]}' AND '{window[1]}'"
            )
            return _assistant(tool_calls=[ToolCall("call-2", QUERY_TOOL, {"sql": sql})])

    # evidence rows gathered (or not: then answer from "recent experience",
    # which is exactly the unsupported behavior the guardrail must catch)
    rows = []
    for _, result in queries:
        try:
            payload = json.loads(result)
        except (json.JSONDecodeError, TypeError):
            continue
        for row in payload.get("rows", []):
            if len(row) >= 3:
                try:
                    rows.append((float(row[0]), float(row[1]), int(float(row[2]))))
                except ValueError:
                    continue
    if not rows:
        u = ControlInput(0.75, 1)
        return _final(u, "Historical data suggests these settings worked in the recent past.")

    target = info["target"]
    nearest = sorted(rows, key=lambda r: (abs(r[0] - target),))[:5]
    duty = snap_duty(sum(r[1] for r in nearest) / len(nearest))
    fan_votes = sum(r[2] for r in nearest)
    fan = 1 if (fan_votes > len(nearest) / 2 and not info["penalty"]) else 0
    u = ControlInput(duty, fan)
    return _final(u, (
        f"The retrieved experiment used duty cycles near {duty:.2f} when holding temperatures "
        f"around {target:.2f} degC, with the fan {'mostly on' if fan else 'mostly off'}; copying that setting."
    ))


def _grid_neighbors(best: float, tried: set[float]) -> list[float]:
    out = []
    for k in (-3, -2, -1, 1, 2, 3):
        duty = round(best + k * DUTY_STEP, 2)
        if 0.0 <= duty <= 1.0 and duty not in tried:
            out.append(duty)
    return sorted(out)


def _predictive_flow(info: dict, exchanges: list[tuple[ToolCall, str]], policy: MockPolicy) -> ChatMessage:
    sims = [(c, r) for c, r in exchanges if c.name == SIMULATE_TOOL]
    lam = policy.fan_penalty if info["penalty"] else 0.0
    target = info["target"]

    def call_with(cands: list[dict], call_id: str) -> ChatMessage:
        return _assistant(tool_calls=[ToolCall(
            call_id, SIMULATE_TOOL, {"candidates": cands, "horizon": policy.horizon},
        )])

    if not sims:
        cands = [
            {"heater_duty_cycle": duty, "fan_on": fan}
            for fan in (0, 1)
            for duty in policy.candidates
        ]
        return call_with(cands, "call-1")

    evaluated: list[tuple[ControlInput, float]] = []
    for call, result in sims:
        try:
            payload = json.loads(result)
        except (json.JSONDecodeError, TypeError):
            continue
        for entry in payload.get("results", []):
            try:
                u = ControlInput(float(entry["heater_duty_cycle"]), int(entry["fan_on"]))
                evaluated.append((u, float(entry["end_temperature"])))
            except (KeyError, ValueError):
                continue

    if not evaluated:
        # simulator unavailable: act like the plain controller but admit it
        u, _ = _plain_decision(info)
        return _final(u, "Prediction tool returned nothing usable; falling back on the prompt heuristic.")

    if len(sims) == 1:
        tried = {round(u.u_h, 2) for u, _ in evaluated}
        refine: list[dict] = []
        for fan in (0, 1):
            with_fan = [(u, e) for u, e in evaluated if u.u_f == fan]
            if not with_fan:
                continue
            best = mock_select(with_fan, target, lam)
            refine.extend(
                {"heater_duty_cycle": duty, "fan_on": fan}
                for duty in _grid_neighbors(best.u_h, tried)
            )
        if refine:
            return call_with(refine, "call-2")

    choice = mock_select(evaluated, target, lam)
    end = next(e for u, e in evaluated if u == choice)
    return _final(choice, (
        f"Simulated constant sequences over {policy.horizon} steps; duty {choice.u_h:.2f} with fan "
        f"{'on' if choice.u_f else 'off'} ends at {end:.2f} degC, closest to the {target:.2f} degC target"
        + (" while avoiding fan usage." if info["penalty"] else ".")
    ))


def _mock_reply(policy: MockPolicy, messages: list[ChatMessage], tools: list[dict]) -> ChatMessage:
    available = {schema["name"] for schema in tools}
    prompt = next((m.content for m in reversed(messages) if m.role == "user"), "")
    info = _parse_prompt(prompt)
    if info["target"] is None or info["current"] is None:
        raise MalformedReplyError("mock backend could not read target/current from the prompt")
    exchanges = _tool_exchanges(messages)

    if QUERY_TOOL in available:
        reply = _sql_flow(info, exchanges, policy)
    elif SIMULATE_TOOL in available:
        reply = _predictive_flow(info, exchanges, policy)
    else:
        u, rationale = _plain_decision(info)
        reply = _final(u, rationale)

    for call in reply.tool_calls:
        if call.name not in available:
            # never call a tool that was not offered
            u, rationale = _plain_decision(info)
            return _assistant(content=(
                f"heater_duty_cycle: {u.u_h:.2f}, fan_on: {u.u_f}. {rationale}"
            ))
    return reply


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WireFormat:
    """Top-level field names, adjustable for compatible providers."""

    model: str = "model"
    temperature: str = "temperature"
    messages: str = "messages"
    tools: str = "tools"
    choices: str = "choices"
    message: str = "message"


def _message_to_wire(msg: ChatMessage) -> dict:
    out: dict = {"role": msg.role, "content": msg.content}
    if msg.tool_calls:
        out["tool_calls"] = [
            {
                "id": c.id,
                "type": "function",
                "function": {"name": c.name, "arguments": json.dumps(c.arguments, sort_keys=True)},
            }
            for c in msg.tool_calls
        ]
    if msg.tool_call_id:
        out["tool_call_id"] = msg.tool_call_id
    return out


def build_request_body(
    config: BackendConfig, messages: list[ChatMessage], tools: list[dict],
    wire: WireFormat = WireFormat(),
) -> bytes:
    body = {
        wire.model: config.model,
        wire.temperature: config.temperature,
        wire.messages: [_message_to_wire(m) for m in messages],
    }
    if tools:
        body[wire.tools] = [
            {"type": "function", "function": schema} for schema in tools
        ]
    return json.dumps(body, separators=(",", ":")).encode()


def _parse_remote_reply(payload: dict, wire: WireFormat) -> ChatMessage:
    try:
        message = payload[wire.choices][0][wire.message]
        content = message.get("content") or ""
        tool_calls = []
        for raw in message.get("tool_calls") or []:
            fn = raw["function"]
            args = fn.get("arguments", "{}")
            tool_calls.append(ToolCall(
                id=raw.get("id", f"call-{len(tool_calls) + 1}"),
                name=fn["name"],
                arguments=json.loads(args) if isinstance(args, str) else dict(args),
            ))
    except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
        raise MalformedReplyError(f"cannot interpret backend reply: {exc}") from exc
    if not content and not tool_calls:
        raise MalformedReplyError("backend reply had neither content nor tool calls")
    return ChatMessage(role="assistant", content=content, tool_calls=tool_calls)


def _remote_chat(config: BackendConfig, messages: list[ChatMessage], tools: list[dict],
                 wire: WireFormat) -> ChatMessage:
    import requests

    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(ENV_API_KEY)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = build_request_body(config, messages, tools, wire)

    last_error: ChatBackendError | None = None
    for _attempt in range(max(1, config.retries)):
        try:
            response = requests.post(
                config.endpoint, data=body, headers=headers, timeout=config.timeout_s
            )
        except requests.Timeout as exc:
            last_error = ChatTimeoutError(f"no reply within {config.timeout_s} s")
            continue
        except requests.RequestException as exc:
            last_error = ChatTransportError(str(exc))
            continue
        if response.status_code != 200:
            last_error = ChatTransportError(f"backend returned HTTP {response.status_code}")
            continue
        try:
            payload = response.json()
        except ValueError as exc:
            raise MalformedReplyError(f"backend reply is not JSON: {exc}") from exc
        return _parse_remote_reply(payload, wire)
    raise last_error  # type: ignore[misc]


def chat(
    config: BackendConfig,
    messages: list[ChatMessage],
    tools: list[dict] | None = None,
    wire: WireFormat = WireFormat(),
) -> ChatMessage:
    """One assistant turn: blocking, with per-call timeout and bounded retries."""
    tools = tools or []
    validate_conversation(messages)
    if config.kind == "mock":
        return _mock_reply(config.policy, messages, tools)
    return _remote_chat(config, messages, tools, wire)
