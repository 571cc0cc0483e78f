"""Relational episode store with a minimal SQL-subset query engine.

Supported surface, which the agent's system prompt advertises verbatim so
the model has no reason to emit anything else:

    SELECT col[, col...] | *
    FROM experiments | timeseries_data
    [WHERE cond [AND cond]...]      cond: col = 'literal'
                                          col BETWEEN 'lo' AND 'hi'
    [LIMIT n]

Timestamps are 'YYYY-MM-DD HH:MM:SS' strings; the format sorts
lexicographically, so BETWEEN is plain string comparison. Storage is
append-only CSV per table plus an in-memory copy; a single writer appends,
readers snapshot at query start.
"""

from __future__ import annotations

import csv
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

SCHEMA: dict[str, list[str]] = {
    "experiments": ["ExperimentID", "StartTime", "EndTime", "controller_name"],
    "timeseries_data": [
        "MeasurementTime", "Temperature", "HeaterDutyCycle", "FanOn", "AmbientTemperature",
    ],
}


class SqlError(ValueError):
    """Query rejected; carries the character offset of the problem."""

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at offset {position})")


class DuplicateExperimentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Equals:
    column: str
    value: str

    def to_sql(self) -> str:
        return f"{self.column} = '{self.value}'"

    def matches(self, row: dict[str, str]) -> bool:
        return row[self.column] == self.value


@dataclass(frozen=True)
class Between:
    column: str
    low: str
    high: str

    def to_sql(self) -> str:
        return f"{self.column} BETWEEN '{self.low}' AND '{self.high}'"

    def matches(self, row: dict[str, str]) -> bool:
        return self.low <= row[self.column] <= self.high


@dataclass(frozen=True)
class QueryAst:
    table: str
    columns: tuple[str, ...]
    conditions: tuple[Equals | Between, ...] = ()
    limit: int | None = None

    def to_sql(self) -> str:
        text = f"SELECT {', '.join(self.columns)} FROM {self.table}"
        if self.conditions:
            text += " WHERE " + " AND ".join(c.to_sql() for c in self.conditions)
        if self.limit is not None:
            text += f" LIMIT {self.limit}"
        return text


@dataclass
class QueryResult:
    columns: list[str]
    rows: list[tuple[str, ...]]

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rows": [list(r) for r in self.rows], "row_count": self.row_count}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<string>'(?:[^'])*')|(?P<word>[A-Za-z_][A-Za-z_0-9]*)|(?P<number>\d+)|(?P<punct>[*,;=()]))"
)

_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "BETWEEN", "LIMIT"}


@dataclass
class _Token:
    kind: str  # string | word | number | punct | end
    text: str
    pos: int

    @property
    def upper(self) -> str:
        return self.text.upper()


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m or m.start() != pos:
            raise SqlError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tok = m.group(kind)
        start = m.start(kind)
        if kind == "string":
            tok = tok[1:-1]
        tokens.append(_Token(kind, tok, start))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.current
        self.i += 1
        return tok

    def fail(self, message: str) -> None:
        raise SqlError(message, self.current.pos)

    def expect_keyword(self, keyword: str) -> None:
        if self.current.kind != "word" or self.current.upper != keyword:
            self.fail(f"expected {keyword}, found {self.current.text or 'end of input'!r}")
        self.advance()

    def identifier(self) -> _Token:
        if self.current.kind != "word" or self.current.upper in _KEYWORDS:
            self.fail(f"expected identifier, found {self.current.text or 'end of input'!r}")
        return self.advance()

    def string(self) -> str:
        if self.current.kind != "string":
            self.fail(f"expected quoted string, found {self.current.text or 'end of input'!r}")
        return self.advance().text

    def parse(self) -> QueryAst:
        self.expect_keyword("SELECT")
        columns = self._columns()
        self.expect_keyword("FROM")
        table_tok = self.identifier()
        table = table_tok.text
        if table not in SCHEMA:
            raise SqlError(f"unknown table {table!r}", table_tok.pos)

        star = columns == ["*"]
        if star:
            columns = list(SCHEMA[table])
        else:
            for tok in self._column_tokens:
                if tok.text not in SCHEMA[table]:
                    raise SqlError(f"unknown column {tok.text!r} in table {table!r}", tok.pos)

        conditions = []
        if self.current.kind == "word" and self.current.upper == "WHERE":
            self.advance()
            conditions.append(self._condition(table))
            while self.current.kind == "word" and self.current.upper == "AND":
                self.advance()
                conditions.append(self._condition(table))

        limit = None
        if self.current.kind == "word" and self.current.upper == "LIMIT":
            self.advance()
            if self.current.kind != "number":
                self.fail("expected row count after LIMIT")
            limit = int(self.advance().text)

        if self.current.kind == "punct" and self.current.text == ";":
            self.advance()
        if self.current.kind != "end":
            self.fail(f"unexpected trailing input {self.current.text!r}")
        return QueryAst(table=table, columns=tuple(columns), conditions=tuple(conditions), limit=limit)

    def _columns(self) -> list[str]:
        self._column_tokens: list[_Token] = []
        if self.current.kind == "punct" and self.current.text == "*":
            self.advance()
            return ["*"]
        tok = self.identifier()
        self._column_tokens.append(tok)
        names = [tok.text]
        while self.current.kind == "punct" and self.current.text == ",":
            self.advance()
            tok = self.identifier()
            self._column_tokens.append(tok)
            names.append(tok.text)
        return names

    def _condition(self, table: str):
        col_tok = self.identifier()
        if col_tok.text not in SCHEMA[table]:
            raise SqlError(f"unknown column {col_tok.text!r} in table {table!r}", col_tok.pos)
        if self.current.kind == "punct" and self.current.text == "=":
            self.advance()
            return Equals(col_tok.text, self.string())
        if self.current.kind == "word" and self.current.upper == "BETWEEN":
            self.advance()
            low = self.string()
            self.expect_keyword("AND")
            high = self.string()
            return Between(col_tok.text, low, high)
        self.fail("expected = or BETWEEN")


def parse_query(text: str) -> QueryAst:
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

class HistoryStore:
    """CSV-backed tables with single-writer append and snapshot reads."""

    def __init__(self, dir_path):
        self.dir = Path(dir_path)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._tables: dict[str, list[dict[str, str]]] = {name: [] for name in SCHEMA}
        for name, columns in SCHEMA.items():
            path = self._path(name)
            if path.exists():
                with open(path, newline="") as fh:
                    reader = csv.DictReader(fh)
                    if reader.fieldnames != columns:
                        raise ValueError(f"{path} header {reader.fieldnames} != {columns}")
                    self._tables[name] = [dict(row) for row in reader]
            else:
                self._write_header(name)

    def _path(self, table: str) -> Path:
        return self.dir / f"{table}.csv"

    def _write_header(self, table: str) -> None:
        with open(self._path(table), "w", newline="") as fh:
            csv.writer(fh).writerow(SCHEMA[table])

    def _append(self, table: str, rows: list[dict[str, str]]) -> None:
        with open(self._path(table), "a", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow([row[c] for c in SCHEMA[table]])
            fh.flush()
        self._tables[table].extend(rows)

    def experiment_ids(self) -> list[str]:
        with self._lock:
            return [r["ExperimentID"] for r in self._tables["experiments"]]

    def ingest_run(self, run_log, experiment_id: str) -> tuple[int, int]:
        """Append one experiment plus one timeseries row per tick; returns row counts."""
        rows = list(run_log.rows)
        if not rows:
            raise ValueError("refusing to ingest an empty run")
        with self._lock:
            if any(r["ExperimentID"] == experiment_id for r in self._tables["experiments"]):
                raise DuplicateExperimentError(f"experiment {experiment_id!r} already ingested")
            start = run_log.start_time
            experiment = {
                "ExperimentID": experiment_id,
                "StartTime": self._stamp(start, rows[0].t),
                "EndTime": self._stamp(start, rows[-1].t),
                "controller_name": run_log.controller,
            }
            series = [
                {
                    "MeasurementTime": self._stamp(start, row.t),
                    "Temperature": f"{row.T:.2f}",
                    "HeaterDutyCycle": f"{row.u_h:.2f}",
                    "FanOn": str(int(row.u_f)),
                    "AmbientTemperature": f"{row.T_amb:.2f}",
                }
                for row in rows
            ]
            self._append("experiments", [experiment])
            self._append("timeseries_data", series)
        return 1, len(series)

    @staticmethod
    def _stamp(start: datetime, offset_s: float) -> str:
        return (start + timedelta(seconds=float(offset_s))).strftime(TIME_FORMAT)

    def execute(self, ast: QueryAst) -> QueryResult:
        """Single-pass filtered projection in insertion order; empty results are normal."""
        with self._lock:
            snapshot = tuple(self._tables[ast.table])
        out: list[tuple[str, ...]] = []
        for row in snapshot:
            if all(c.matches(row) for c in ast.conditions):
                out.append(tuple(row[c] for c in ast.columns))
                if ast.limit is not None and len(out) >= ast.limit:
                    break
        return QueryResult(columns=list(ast.columns), rows=out)

    def query(self, text: str) -> QueryResult:
        return self.execute(parse_query(text))
