"""Append-only accounting ledger bucketed by (day, station, metric)."""

import logging
import math
from collections import defaultdict
from enum import Enum

from errors import NegativeAmount

logger = logging.getLogger(__name__)

DAY_SECONDS = 86400


class Metric(str, Enum):
    CONSUMED_BYTES = "consumed_bytes"
    CONSUMED_FILES = "consumed_files"
    DELIVERED_IN_BYTES = "delivered_in_bytes"
    SENT_OUT_BYTES = "sent_out_bytes"
    MSS_WRITTEN_BYTES = "mss_written_bytes"
    MSS_READ_BYTES = "mss_read_bytes"
    REMOTE_STREAM_BYTES = "remote_stream_bytes"


class EventKind(str, Enum):
    CONSUMED = "consumed"
    DELIVERED_IN = "delivered_in"
    SENT_OUT = "sent_out"
    MSS_WRITTEN = "mss_written"
    MSS_READ = "mss_read"
    REMOTE_STREAM = "remote_stream"


_BYTES_METRIC = {
    EventKind.CONSUMED: Metric.CONSUMED_BYTES,
    EventKind.DELIVERED_IN: Metric.DELIVERED_IN_BYTES,
    EventKind.SENT_OUT: Metric.SENT_OUT_BYTES,
    EventKind.MSS_WRITTEN: Metric.MSS_WRITTEN_BYTES,
    EventKind.MSS_READ: Metric.MSS_READ_BYTES,
    EventKind.REMOTE_STREAM: Metric.REMOTE_STREAM_BYTES,
}


def day_of(at: float) -> int:
    return math.floor(at / DAY_SECONDS)


class MetricsLedger:
    def __init__(self) -> None:
        self._counters: dict[tuple[int, str, Metric], int] = defaultdict(int)
        self._stations: dict[str, None] = {}
        self._last_day = -1

    def record(self, kind: EventKind | str, station: str, bytes: int, files: int = 0, at: float = 0.0) -> None:
        if bytes < 0 or files < 0:
            raise NegativeAmount(f"{kind} at {station}: bytes={bytes} files={files}")
        kind = EventKind(kind)
        day = day_of(at)
        self._stations.setdefault(station, None)
        self._last_day = max(self._last_day, day)
        self._counters[(day, station, _BYTES_METRIC[kind])] += int(bytes)
        if kind is EventKind.CONSUMED:
            self._counters[(day, station, Metric.CONSUMED_FILES)] += int(files)

    def set_counter(self, day: int, station: str, metric: Metric, value: int) -> None:
        """Restore one bucket, used when reloading a report."""
        if value < 0:
            raise NegativeAmount(f"{metric.value} at {station} day {day}: {value}")
        self._stations.setdefault(station, None)
        self._last_day = max(self._last_day, day)
        self._counters[(day, station, metric)] = int(value)

    def counter(self, day: int, station: str, metric: Metric) -> int:
        return self._counters.get((day, station, metric), 0)

    def total(self, station: str, metric: Metric, days: range | None = None) -> int:
        return sum(
            value
            for (day, st, m), value in self._counters.items()
            if st == station and m is metric and (days is None or day in days)
        )

    def stations(self) -> list[str]:
        return list(self._stations)

    @property
    def last_day(self) -> int:
        """Highest day index with a record, -1 when empty."""
        return self._last_day

    def is_empty(self) -> bool:
        return not self._counters
