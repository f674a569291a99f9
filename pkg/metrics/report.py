"""Daily series, multiplication factors and plot data from a MetricsLedger."""

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

from errors import MetricsError
from metrics.ledger import Metric, MetricsLedger

logger = logging.getLogger(__name__)

REPORT_HEADER = [
    "day",
    "station",
    "consumed_bytes",
    "consumed_files",
    "delivered_in",
    "sent_out",
    "mss_written",
    "mss_read",
    "mult_factor",
]

_CSV_METRICS = {
    "consumed_bytes": Metric.CONSUMED_BYTES,
    "consumed_files": Metric.CONSUMED_FILES,
    "delivered_in": Metric.DELIVERED_IN_BYTES,
    "sent_out": Metric.SENT_OUT_BYTES,
    "mss_written": Metric.MSS_WRITTEN_BYTES,
    "mss_read": Metric.MSS_READ_BYTES,
}

# series plotted below the axis
_NEGATIVE_SERIES = {Metric.SENT_OUT_BYTES, Metric.MSS_READ_BYTES}

PLOT_METRICS = (
    Metric.CONSUMED_BYTES,
    Metric.DELIVERED_IN_BYTES,
    Metric.SENT_OUT_BYTES,
    Metric.MSS_WRITTEN_BYTES,
    Metric.MSS_READ_BYTES,
)

INFINITY = "∞"
NOT_APPLICABLE = "n/a"


def multiplication_factor(consumed: int, delivered: int) -> float | None:
    """consumed / delivered; inf with nothing delivered, None with no activity."""
    if delivered == 0:
        return math.inf if consumed > 0 else None
    return consumed / delivered


def format_factor(consumed: int, delivered: int) -> str:
    factor = multiplication_factor(consumed, delivered)
    if factor is None:
        return NOT_APPLICABLE
    if math.isinf(factor):
        return INFINITY
    return f"{factor:.3f}"


@dataclass(frozen=True)
class DayRow:
    day: int
    station: str
    consumed_bytes: int
    consumed_files: int
    delivered_in: int
    sent_out: int
    mss_written: int
    mss_read: int

    @property
    def factor(self) -> str:
        return format_factor(self.consumed_bytes, self.delivered_in)

    def as_csv_row(self) -> list[str]:
        return [
            str(self.day),
            self.station,
            str(self.consumed_bytes),
            str(self.consumed_files),
            str(self.delivered_in),
            str(self.sent_out),
            str(self.mss_written),
            str(self.mss_read),
            self.factor,
        ]


@dataclass(frozen=True)
class StationSummary:
    station: str
    consumed_bytes: int
    consumed_files: int
    delivered_in: int
    sent_out: int
    mss_written: int
    mss_read: int
    remote_stream: int
    factor: str
    peak_day: int | None
    peak_factor: str


class MetricsReport:
    def __init__(self, ledger: MetricsLedger, stations: list[str] | None = None, days: range | None = None):
        if days is None:
            days = range(0, ledger.last_day + 1)
        if days.start < 0 or days.stop < days.start or days.step != 1:
            raise MetricsError(f"day range {days} is not a forward range of run days")
        self.ledger = ledger
        self.stations = sorted(stations if stations is not None else ledger.stations())
        self.days = days

    # ------------------------------------------------------------------
    # daily series
    # ------------------------------------------------------------------

    def rows(self) -> list[DayRow]:
        c = self.ledger.counter
        return [
            DayRow(
                day=day,
                station=station,
                consumed_bytes=c(day, station, Metric.CONSUMED_BYTES),
                consumed_files=c(day, station, Metric.CONSUMED_FILES),
                delivered_in=c(day, station, Metric.DELIVERED_IN_BYTES),
                sent_out=c(day, station, Metric.SENT_OUT_BYTES),
                mss_written=c(day, station, Metric.MSS_WRITTEN_BYTES),
                mss_read=c(day, station, Metric.MSS_READ_BYTES),
            )
            for day in self.days
            for station in self.stations
        ]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in self.rows():
            writer.writerow(row.as_csv_row())
        return out.getvalue()

    # ------------------------------------------------------------------
    # summaries
    # ------------------------------------------------------------------

    def summary(self, station: str) -> StationSummary:
        def total(metric: Metric) -> int:
            return self.ledger.total(station, metric, self.days)

        consumed = total(Metric.CONSUMED_BYTES)
        delivered = total(Metric.DELIVERED_IN_BYTES)
        peak_day = self.peak_day(station)
        if peak_day is None:
            peak_factor = NOT_APPLICABLE
        else:
            peak_factor = format_factor(
                self.ledger.counter(peak_day, station, Metric.CONSUMED_BYTES),
                self.ledger.counter(peak_day, station, Metric.DELIVERED_IN_BYTES),
            )
        return StationSummary(
            station=station,
            consumed_bytes=consumed,
            consumed_files=total(Metric.CONSUMED_FILES),
            delivered_in=delivered,
            sent_out=total(Metric.SENT_OUT_BYTES),
            mss_written=total(Metric.MSS_WRITTEN_BYTES),
            mss_read=total(Metric.MSS_READ_BYTES),
            remote_stream=total(Metric.REMOTE_STREAM_BYTES),
            factor=format_factor(consumed, delivered),
            peak_day=peak_day,
            peak_factor=peak_factor,
        )

    def summaries(self) -> list[StationSummary]:
        return [self.summary(station) for station in self.stations]

    def peak_day(self, station: str) -> int | None:
        """Day with the most consumed bytes (earliest on ties), None without consumption."""
        best: tuple[int, int] | None = None
        for day in self.days:
            consumed = self.ledger.counter(day, station, Metric.CONSUMED_BYTES)
            if consumed > 0 and (best is None or consumed > best[1]):
                best = (day, consumed)
        return best[0] if best else None

    def summary_text(self) -> str:
        lines = [f"days {self.days.start}..{self.days.stop - 1}" if self.days else "days (none)"]
        for s in self.summaries():
            peak = "-" if s.peak_day is None else str(s.peak_day)
            lines.append(
                f"{s.station}: consumed={s.consumed_bytes} files={s.consumed_files} "
                f"delivered_in={s.delivered_in} sent_out={s.sent_out} "
                f"mss_written={s.mss_written} mss_read={s.mss_read} remote_stream={s.remote_stream} "
                f"factor={s.factor} peak_day={peak} peak_factor={s.peak_factor}"
            )
        return "\n".join(lines) + "\n"

    # ------------------------------------------------------------------
    # plot data
    # ------------------------------------------------------------------

    def plot_series(self, station: str, metric: Metric) -> list[tuple[int, int]]:
        sign = -1 if metric in _NEGATIVE_SERIES else 1
        return [(day, sign * self.ledger.counter(day, station, metric)) for day in self.days]

    def write_plot_files(self, directory: Path) -> list[Path]:
        """One gnuplot-ready ``day value`` file per station and non-empty metric."""
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for station in self.stations:
            for metric in PLOT_METRICS:
                series = self.plot_series(station, metric)
                if not any(value for _, value in series):
                    continue
                path = directory / f"{station}.{metric.value}.dat"
                path.write_text("".join(f"{day} {value}\n" for day, value in series))
                written.append(path)
        logger.info("wrote %d plot series to %s", len(written), directory)
        return written

    # ------------------------------------------------------------------
    # reload
    # ------------------------------------------------------------------

    @classmethod
    def from_report_csv(cls, text: str) -> "MetricsReport":
        """Rebuild a report from ``metrics.csv`` text (factors are recomputed)."""
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != REPORT_HEADER:
            raise MetricsError(f"not a metrics report: header {reader.fieldnames}")
        ledger = MetricsLedger()
        days: set[int] = set()
        stations: list[str] = []
        for lineno, row in enumerate(reader, 2):
            try:
                day = int(row["day"])
                for column, metric in _CSV_METRICS.items():
                    ledger.set_counter(day, row["station"], metric, int(row[column]))
            except (TypeError, ValueError) as exc:
                raise MetricsError(f"metrics line {lineno}: {exc}") from exc
            days.add(day)
            if row["station"] not in stations:
                stations.append(row["station"])
        span = range(min(days), max(days) + 1) if days else range(0)
        return cls(ledger, stations, span)
