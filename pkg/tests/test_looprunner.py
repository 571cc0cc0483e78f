import queue
import threading
from datetime import datetime

import pytest

from greenloop.history import HistoryStore
from greenloop.llmlink import QUERY_TOOL, SIMULATE_TOOL, BackendConfig
from greenloop.looprunner import (
    Controller,
    ControllerName,
    ControllerRegistry,
    EventBus,
    MissingArtifactError,
    OperatorCommand,
    ReferenceSchedule,
    RunLog,
    Subscription,
    default_schedule,
    make_controller,
    proportional_rule,
    run_closed_loop,
    run_rule_based,
)
from greenloop.plantsim import ControlInput, PlantParams, TruthPlant
from greenloop.predictors import CostaPredictor, Mlp
from greenloop.dataset import FeatureScaler

import numpy as np

NOISELESS = PlantParams(noise_sigma=0.0)
START = datetime(2025, 3, 1, 12, 41, 30)
GUIDE_ID = "MPC control_penalty2025-03-01T12:41:30"


def schedule_of(ticks, target=27.0):
    return ReferenceSchedule(breakpoints=((0.0, target),), duration_s=ticks * 60.0)


def fast_costa():
    """Zero-correction hybrid predictor with a coarse integrator (test speed)."""
    mlp = Mlp(seed=0)
    mlp.W3[:] = 0.0
    mlp.b3[:] = 0.0
    params = PlantParams(noise_sigma=0.0, dt_int=5.0)
    return CostaPredictor(mlp, FeatureScaler(mean=np.zeros(4), std=np.ones(4)), 0.0, 1.0, params)


def guide_registry(tmp_path):
    plant = TruthPlant(NOISELESS, seed=1)
    log = run_rule_based(plant, proportional_rule(), default_schedule(90 * 60.0), start_time=START)
    store = HistoryStore(tmp_path / "history")
    store.ingest_run(log, GUIDE_ID)
    return ControllerRegistry(history=store, guide_experiment_id=GUIDE_ID)


# ---------------------------------------------------------------------------
# Naming convention
# ---------------------------------------------------------------------------

def all_variant_names():
    names = []
    for assistance in (None, "SQL", "Linear", "LSTM", "HAM"):
        for te in (0.0, 1.0):
            for penalty in (False, True):
                names.append(ControllerName(assistance, te, penalty))
    return names


def test_name_round_trip_over_all_variants():
    names = all_variant_names()
    assert len(names) == 20
    for name in names:
        text = name.render()
        assert ControllerName.parse(text) == name
        assert ControllerName.parse(text).render() == text


def test_name_examples():
    plain = ControllerName.parse("LLM-Te0")
    assert plain == ControllerName(None, 0.0, False)
    assert plain.architecture == "plain"
    ham = ControllerName.parse("LLM-HAM-Te0-P")
    assert ham == ControllerName("HAM", 0.0, True)
    assert ham.architecture == "predictive"
    assert ControllerName.parse("LLM-SQL-Te1").architecture == "sql"


def test_name_rejects_unknown_assistance():
    with pytest.raises(ValueError, match="cannot parse"):
        ControllerName.parse("LLM-XGB-Te0")
    with pytest.raises(ValueError):
        ControllerName.parse("MPC-Te0")


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

def test_default_schedule_steps():
    sched = default_schedule()
    assert sched.ticks == 360
    assert sched.target_at(0) == 27.0
    assert sched.target_at(5400) == 30.0
    assert sched.target_at(10800 + 60) == 27.34
    assert sched.target_at(21599) == 24.0


def test_schedule_validation():
    with pytest.raises(ValueError, match="t=0"):
        ReferenceSchedule(breakpoints=((60.0, 27.0),), duration_s=600.0)
    with pytest.raises(ValueError, match="strictly increasing"):
        ReferenceSchedule(breakpoints=((0.0, 27.0), (0.0, 30.0)), duration_s=600.0)
    with pytest.raises(ValueError, match="duration"):
        ReferenceSchedule(breakpoints=((0.0, 27.0), (600.0, 30.0)), duration_s=600.0)


# ---------------------------------------------------------------------------
# Controller construction
# ---------------------------------------------------------------------------

def test_make_controller_plain():
    controller = make_controller("LLM-Te0", ControllerRegistry())
    assert controller.agent_config.architecture == "plain"
    assert controller.agent_config.backend.temperature == 0.0
    assert controller.tool_label == "none"
    assert controller.predictor is None and controller.history is None


def test_make_controller_te_and_penalty_flags():
    registry = ControllerRegistry(predictors={"HAM": fast_costa()})
    controller = make_controller("LLM-HAM-Te1-P", registry)
    assert controller.agent_config.backend.temperature == 1.0
    assert controller.name.penalty
    assert controller.predictor is not None


def test_make_controller_missing_artifacts():
    with pytest.raises(MissingArtifactError, match="train --model lstm"):
        make_controller("LLM-LSTM-Te0", ControllerRegistry())
    with pytest.raises(MissingArtifactError, match="guide"):
        make_controller("LLM-SQL-Te0", ControllerRegistry())


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

def test_ten_tick_plain_run_counts():
    plant = TruthPlant(NOISELESS, seed=3)
    controller = make_controller("LLM-Te0", ControllerRegistry())
    log = run_closed_loop(plant, controller, schedule_of(10), start_time=START)
    assert len(log.rows) == 10
    assert len(log.cards) == 10
    assert log.status == "completed"
    assert all(r.card_ref == f"cards.jsonl:{r.tick}" for r in log.rows)
    # actuation equals the card decision on every tick
    for row, card in zip(log.rows, log.cards):
        assert (row.u_h, row.u_f) == (card.applied.u_h, card.applied.u_f)


def test_identical_seeds_give_byte_identical_runlogs(tmp_path):
    for sub in ("a", "b"):
        plant = TruthPlant(PlantParams(), seed=42)
        controller = make_controller("LLM-Te0", ControllerRegistry())
        log = run_closed_loop(plant, controller, schedule_of(12), start_time=START)
        log.save(tmp_path / sub)
    a = (tmp_path / "a" / "ticks.csv").read_bytes()
    b = (tmp_path / "b" / "ticks.csv").read_bytes()
    assert a == b


def test_backend_outage_all_ticks_fall_back():
    plant = TruthPlant(NOISELESS, seed=4)
    bad_backend = BackendConfig(kind="remote", endpoint="http://127.0.0.1:9/x", model="m",
                                timeout_s=0.2, retries=1)
    registry = ControllerRegistry(backend_factory=lambda te: bad_backend)
    controller = make_controller("LLM-Te0", registry)
    log = run_closed_loop(plant, controller, schedule_of(8), start_time=START)
    assert len(log.rows) == 8
    assert all(r.fallback for r in log.rows)
    # fallback = hold previous controls; initial controls are all-off
    assert all(r.u_h == 0.0 and r.u_f == 0 for r in log.rows)


def test_backend_outage_halts_after_streak():
    plant = TruthPlant(NOISELESS, seed=5)
    bad_backend = BackendConfig(kind="remote", endpoint="http://127.0.0.1:9/x", model="m",
                                timeout_s=0.2, retries=1)
    registry = ControllerRegistry(backend_factory=lambda te: bad_backend)
    controller = make_controller("LLM-Te0", registry)
    log = run_closed_loop(plant, controller, schedule_of(30), start_time=START,
                          max_consecutive_fallbacks=10)
    assert log.status.startswith("halted")
    assert len(log.rows) == 11


def test_sql_run_records_queries(tmp_path):
    registry = guide_registry(tmp_path)
    controller = make_controller("LLM-SQL-Te0", registry)
    plant = TruthPlant(NOISELESS, seed=6)
    log = run_closed_loop(plant, controller, schedule_of(3), start_time=START)
    assert len(log.rows) == 3
    for card in log.cards:
        assert card.verdict == "pass"
        assert [t.tool for t in card.tool_log] == [QUERY_TOOL, QUERY_TOOL]
        assert card.decision is not None


def test_predictive_run_uses_simulator():
    registry = ControllerRegistry(predictors={"HAM": fast_costa()})
    controller = make_controller("LLM-HAM-Te0", registry)
    plant = TruthPlant(NOISELESS, seed=7)
    log = run_closed_loop(plant, controller, schedule_of(4), start_time=START)
    assert len(log.rows) == 4
    for card in log.cards:
        assert card.verdict == "pass"
        assert all(t.tool == SIMULATE_TOOL for t in card.tool_log)
    # prompts carry the HAM tool label
    assert "Use HAM." in log.cards[0].prompt


def test_preloaded_commands_apply_from_first_tick(tmp_path):
    registry = guide_registry(tmp_path)
    commands = queue.Queue()
    commands.put(OperatorCommand(kind="set_target", target=24.0))
    commands.put(OperatorCommand(kind="set_penalty", enabled=True))
    commands.put(OperatorCommand(kind="set_objective_text", text="Prefer the heater over the fan."))
    controller = make_controller("LLM-Te0", registry)
    plant = TruthPlant(NOISELESS, seed=8)
    log = run_closed_loop(plant, controller, schedule_of(2, target=30.0), start_time=START,
                          command_queue=commands, registry=registry)
    prompt = log.cards[0].prompt
    assert "maintain a temperature of 24 degrees" in prompt
    assert "minimal usage of the fan" in prompt
    assert prompt.endswith("Prefer the heater over the fan.")
    assert log.rows[0].target == 24.0


def test_set_variant_switches_controller(tmp_path):
    registry = guide_registry(tmp_path)
    commands = queue.Queue()
    commands.put(OperatorCommand(kind="set_variant", controller="LLM-SQL-Te0"))
    controller = make_controller("LLM-Te0", registry)
    plant = TruthPlant(NOISELESS, seed=9)
    log = run_closed_loop(plant, controller, schedule_of(2), start_time=START,
                          command_queue=commands, registry=registry)
    assert any(t.tool == QUERY_TOOL for t in log.cards[0].tool_log)


def test_stop_command_halts_run():
    commands = queue.Queue()
    commands.put(OperatorCommand(kind="stop"))
    controller = make_controller("LLM-Te0", ControllerRegistry())
    plant = TruthPlant(NOISELESS, seed=10)
    log = run_closed_loop(plant, controller, schedule_of(10), start_time=START,
                          command_queue=commands)
    assert log.rows == []
    assert log.status == "stopped by operator"


def test_mid_run_target_change_lands_within_one_tick():
    bus = EventBus()
    sub = bus.subscribe()
    commands = queue.Queue()
    controller = make_controller("LLM-Te0", ControllerRegistry())
    plant = TruthPlant(NOISELESS, seed=11)

    result = {}

    def drive():
        result["log"] = run_closed_loop(
            plant, controller, schedule_of(12, target=27.0), start_time=START,
            command_queue=commands, bus=bus, tick_interval_s=0.05,
        )

    thread = threading.Thread(target=drive)
    thread.start()
    sent_after: int | None = None
    while True:
        event = sub.get(timeout=5.0)
        assert event is not None, "timed out waiting for events"
        if event["type"] == "state" and sent_after is None and event["data"]["tick"] >= 2:
            commands.put(OperatorCommand(kind="set_target", target=24.0))
            sent_after = event["data"]["tick"]
        if event["type"] == "status":
            break
    thread.join()
    log = result["log"]
    # command sent during tick k's pacing sleep is active by tick k+1
    for row in log.rows:
        if row.tick >= sent_after + 2:
            assert row.target == 24.0
    assert any(r.target == 27.0 for r in log.rows)


def test_command_validation():
    with pytest.raises(ValueError, match="finite target"):
        OperatorCommand(kind="set_target")
    with pytest.raises(ValueError, match="unknown command"):
        OperatorCommand(kind="reboot")
    with pytest.raises(ValueError):
        OperatorCommand(kind="set_variant", controller="LLM-XGB-Te0")


# ---------------------------------------------------------------------------
# Events / persistence / scripted runs
# ---------------------------------------------------------------------------

def test_events_match_log_one_to_one():
    bus = EventBus()
    sub = bus.subscribe()
    controller = make_controller("LLM-Te0", ControllerRegistry())
    plant = TruthPlant(NOISELESS, seed=12)
    log = run_closed_loop(plant, controller, schedule_of(5), start_time=START, bus=bus)
    states, cards = [], []
    while True:
        event = sub.get(timeout=1.0)
        if event is None or event["type"] == "status":
            break
        (states if event["type"] == "state" else cards).append(event)
    assert len(states) == len(log.rows) == 5
    assert len(cards) == 5
    assert [e["data"]["tick"] for e in states] == [r.tick for r in log.rows]
    assert states[0]["data"]["controller"] == "LLM-Te0"


def test_subscription_bounded_drop_oldest_with_gap():
    sub = Subscription(maxsize=2)
    for i in range(5):
        sub.push({"type": "state", "data": {"tick": i}})
    received = []
    while True:
        event = sub.get(timeout=0.01)
        if event is None:
            break
        received.append(event)
    gap = [e for e in received if e["type"] == "gap"]
    ticks = [e["data"]["tick"] for e in received if e["type"] == "state"]
    assert ticks[-1] == 4  # newest always retained
    assert not gap  # gap event announced on the NEXT push after drops
    sub.push({"type": "state", "data": {"tick": 5}})
    flushed = [sub.get(timeout=0.01) for _ in range(2)]
    assert flushed[0]["type"] == "gap"
    assert flushed[0]["data"]["dropped"] == 3
    assert flushed[1]["data"]["tick"] == 5


def test_runlog_save_and_load_round_trip(tmp_path):
    plant = TruthPlant(PlantParams(), seed=13)
    controller = make_controller("LLM-Te0-P", ControllerRegistry())
    log = run_closed_loop(plant, controller, schedule_of(6), start_time=START,
                          run_dir=tmp_path / "run")
    loaded = RunLog.load(tmp_path / "run")
    assert loaded.run_id == log.run_id == f"LLM-Te0-P{START:%Y-%m-%dT%H:%M:%S}"
    assert loaded.controller == "LLM-Te0-P"
    assert len(loaded.rows) == 6
    assert loaded.rows[3].T == pytest.approx(log.rows[3].T)
    assert loaded.cards[0].prompt == log.cards[0].prompt


def test_rule_based_guide_run_tracks_target():
    plant = TruthPlant(NOISELESS, seed=14)
    log = run_rule_based(plant, proportional_rule(), schedule_of(60, target=27.0), start_time=START)
    assert len(log.rows) == 60
    assert log.rows[-1].T == pytest.approx(27.0, abs=1.0)
    assert log.controller == "MPC control_penalty"
