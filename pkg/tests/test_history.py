from dataclasses import dataclass, field
from datetime import datetime

import pytest

from greenloop.history import (
    Between,
    DuplicateExperimentError,
    Equals,
    HistoryStore,
    QueryAst,
    SqlError,
    parse_query,
)

GUIDE_ID = "MPC control_penalty2025-03-01T12:41:30"

SQL_1 = (
    "SELECT StartTime, EndTime \n"
    "FROM experiments \n"
    f"WHERE ExperimentID = '{GUIDE_ID}';"
)

SQL_2 = (
    "SELECT Temperature, HeaterDutyCycle, FanOn\n"
    "FROM timeseries_data\n"
    "WHERE MeasurementTime\n"
    "BETWEEN '2025-03-01 12:45:58' AND '2025-03-01 18:44:58';"
)


@dataclass
class Tick:
    t: float
    T: float
    T_amb: float
    u_h: float
    u_f: int


@dataclass
class StubRun:
    start_time: datetime
    controller: str
    rows: list = field(default_factory=list)


def stub_run(n=360, start="2025-03-01 12:45:58"):
    rows = [Tick(t=60.0 * i, T=25.0 + 0.01 * i, T_amb=22.6, u_h=0.30, u_f=0) for i in range(n)]
    return StubRun(start_time=datetime.strptime(start, "%Y-%m-%d %H:%M:%S"), controller="MPC", rows=rows)


def test_parse_experiment_lookup():
    ast = parse_query(SQL_1)
    assert ast.table == "experiments"
    assert ast.columns == ("StartTime", "EndTime")
    assert ast.conditions == (Equals("ExperimentID", GUIDE_ID),)
    assert ast.limit is None


def test_parse_between_window():
    ast = parse_query(SQL_2)
    assert ast.table == "timeseries_data"
    assert ast.columns == ("Temperature", "HeaterDutyCycle", "FanOn")
    assert ast.conditions == (
        Between("MeasurementTime", "2025-03-01 12:45:58", "2025-03-01 18:44:58"),
    )


def test_parse_malformed_keyword_reports_offset_zero():
    with pytest.raises(SqlError) as exc:
        parse_query("SELEC x FROM y")
    assert exc.value.position == 0


def test_parse_unknown_table_and_column():
    with pytest.raises(SqlError, match="unknown table"):
        parse_query("SELECT Temperature FROM weather")
    with pytest.raises(SqlError, match="unknown column"):
        parse_query("SELECT Humidity FROM timeseries_data")
    with pytest.raises(SqlError, match="unknown column"):
        parse_query("SELECT Temperature FROM timeseries_data WHERE Pressure = '1'")


def test_parse_rejects_unsupported_syntax():
    with pytest.raises(SqlError):
        parse_query("SELECT Temperature FROM timeseries_data ORDER BY Temperature")
    with pytest.raises(SqlError):
        parse_query("DELETE FROM experiments")
    with pytest.raises(SqlError, match="expected row count"):
        parse_query("SELECT Temperature FROM timeseries_data LIMIT many")


@pytest.mark.parametrize(
    "text",
    [
        SQL_1,
        SQL_2,
        "SELECT * FROM experiments",
        "SELECT Temperature FROM timeseries_data LIMIT 5",
        "SELECT Temperature, FanOn FROM timeseries_data "
        "WHERE MeasurementTime BETWEEN '2025-03-01 12:00:00' AND '2025-03-01 13:00:00' "
        "AND FanOn = '0' LIMIT 3",
    ],
)
def test_parse_print_round_trip(text):
    ast = parse_query(text)
    assert parse_query(ast.to_sql()) == ast


def test_star_expands_to_schema_columns():
    ast = parse_query("SELECT * FROM timeseries_data")
    assert ast.columns == (
        "MeasurementTime", "Temperature", "HeaterDutyCycle", "FanOn", "AmbientTemperature",
    )


def test_ingest_counts_and_paper_window(tmp_path):
    store = HistoryStore(tmp_path)
    counts = store.ingest_run(stub_run(), GUIDE_ID)
    assert counts == (1, 360)

    result = store.query(SQL_1)
    assert result.rows == [("2025-03-01 12:45:58", "2025-03-01 18:44:58")]

    window = store.query(SQL_2)
    assert window.row_count == 360
    assert window.columns == ["Temperature", "HeaterDutyCycle", "FanOn"]
    assert window.rows[0] == ("25.00", "0.30", "0")


def test_ingest_rejects_empty_and_duplicate(tmp_path):
    store = HistoryStore(tmp_path)
    with pytest.raises(ValueError, match="empty"):
        store.ingest_run(StubRun(datetime(2025, 3, 1), "MPC", []), "empty-run")

    store.ingest_run(stub_run(10), "run-a")
    before = store.query("SELECT * FROM timeseries_data").row_count
    with pytest.raises(DuplicateExperimentError):
        store.ingest_run(stub_run(10), "run-a")
    assert store.query("SELECT * FROM timeseries_data").row_count == before


def test_empty_window_is_a_result_not_an_error(tmp_path):
    store = HistoryStore(tmp_path)
    store.ingest_run(stub_run(10), "run-a")
    result = store.query(
        "SELECT Temperature FROM timeseries_data "
        "WHERE MeasurementTime BETWEEN '2030-01-01 00:00:00' AND '2030-01-02 00:00:00'"
    )
    assert result.rows == []
    assert result.columns == ["Temperature"]


def test_every_tick_retrievable_by_covering_between(tmp_path):
    store = HistoryStore(tmp_path)
    run = stub_run(25)
    store.ingest_run(run, "run-a")
    for i in range(25):
        stamp = store.query("SELECT MeasurementTime FROM timeseries_data").rows[i][0]
        hit = store.query(
            f"SELECT Temperature FROM timeseries_data "
            f"WHERE MeasurementTime BETWEEN '{stamp}' AND '{stamp}'"
        )
        assert hit.row_count == 1


def test_limit_and_conjunction(tmp_path):
    store = HistoryStore(tmp_path)
    store.ingest_run(stub_run(50), "run-a")
    limited = store.query("SELECT Temperature FROM timeseries_data LIMIT 7")
    assert limited.row_count == 7
    both = store.query(
        "SELECT Temperature FROM timeseries_data "
        "WHERE FanOn = '0' AND MeasurementTime BETWEEN '2025-03-01 12:45:58' AND '2025-03-01 12:50:58'"
    )
    assert both.row_count == 6


def test_store_reloads_from_csv(tmp_path):
    store = HistoryStore(tmp_path)
    store.ingest_run(stub_run(12), "run-a")
    reopened = HistoryStore(tmp_path)
    assert reopened.experiment_ids() == ["run-a"]
    assert reopened.query("SELECT * FROM timeseries_data").row_count == 12


def test_execute_projection_preserves_insertion_order(tmp_path):
    store = HistoryStore(tmp_path)
    store.ingest_run(stub_run(5), "run-a")
    result = store.execute(QueryAst("timeseries_data", ("Temperature",)))
    temps = [float(r[0]) for r in result.rows]
    assert temps == sorted(temps)  # stub series increases monotonically
