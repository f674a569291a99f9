"""Trace records and the trace CSV format ``t,action,station,project,consumer,file,extra``.

``extra`` is a ``key=value`` list joined by ``;``. File lists inside it are
joined by ``|``.
"""

import csv
import io
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from errors import WorkloadError

logger = logging.getLogger(__name__)

TRACE_HEADER = ["t", "action", "station", "project", "consumer", "file", "extra"]


class TraceAction(str, Enum):
    START_PROJECT = "start_project"
    NEXT_FILE = "next_file"
    RELEASE_FILE = "release_file"
    IMPORT_FILE = "import_file"


# consumer actions share one rank so a consumer's steps stay in step order
_RANK = {
    TraceAction.START_PROJECT: 0,
    TraceAction.IMPORT_FILE: 1,
    TraceAction.NEXT_FILE: 2,
    TraceAction.RELEASE_FILE: 2,
}


@dataclass(frozen=True)
class TraceRecord:
    t: float
    action: TraceAction
    station: str
    project: str = ""
    consumer: str = ""
    file: str = ""
    extra: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", TraceAction(self.action))
        if self.t < 0:
            raise WorkloadError(f"trace time {self.t} is negative")

    @property
    def options(self) -> dict[str, str]:
        return parse_extra(self.extra)

    @property
    def step(self) -> int:
        if self.action in (TraceAction.NEXT_FILE, TraceAction.RELEASE_FILE):
            return int(self.options.get("step", "0"))
        return 0

    def sort_key(self) -> tuple:
        return (self.t, _RANK[self.action], self.project, self.consumer, self.step, self.station, self.file)

    def as_csv_row(self) -> list[str]:
        return [f"{self.t:.6f}", self.action.value, self.station, self.project, self.consumer, self.file, self.extra]


def sort_trace(records: list[TraceRecord]) -> list[TraceRecord]:
    """Canonical order; timestamps are authoritative, the input order is not."""
    return sorted(records, key=TraceRecord.sort_key)


def parse_extra(extra: str) -> dict[str, str]:
    options = {}
    for part in filter(None, extra.split(";")):
        key, sep, value = part.partition("=")
        if not sep:
            raise WorkloadError(f"malformed trace extra field {extra!r}")
        options[key.strip()] = value.strip()
    return options


def format_extra(**options: object) -> str:
    return ";".join(f"{key}={_format_value(value)}" for key, value in options.items())


def _format_value(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return "|".join(str(v) for v in value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def trace_to_csv(records: list[TraceRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for record in records:
        writer.writerow(record.as_csv_row())
    return out.getvalue()


def write_trace_csv(records: list[TraceRecord], path: Path) -> None:
    path.write_text(trace_to_csv(records))


def read_trace_csv(source: Path | str) -> list[TraceRecord]:
    """Parse a trace file (path, or the CSV text itself when it contains a newline)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != TRACE_HEADER:
        raise WorkloadError(f"not a trace file: header {header}")
    records = []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != len(TRACE_HEADER):
            raise WorkloadError(f"trace line {lineno}: expected {len(TRACE_HEADER)} fields, got {len(row)}")
        t, action, station, project, consumer, file, extra = row
        try:
            records.append(TraceRecord(float(t), TraceAction(action), station, project, consumer, file, extra))
        except ValueError as exc:
            raise WorkloadError(f"trace line {lineno}: {exc}") from exc
    return records
