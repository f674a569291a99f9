"""Transfer engine: links, processor-sharing bandwidth, CRC checks, streams.

Every link splits its bandwidth equally among active flows; shares are
recomputed whenever a flow joins or leaves. A transfer attempt waits the link
latency, then moves its bytes as one flow. After each attempt the destination
checksum is compared with the catalog CRC and a corrupted attempt is re-sent
while the retry budget lasts.
"""

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Mapping

from catalog.file_catalog import FileCatalog
from errors import NoLink, NotCached
from fabric.integrity import NO_FAULTS, FaultProfile
from metrics.ledger import EventKind, MetricsLedger
from simkernel.kernel import Event, Kernel
from simkernel.rng import SplitMix64

if TYPE_CHECKING:
    from cache.cache_manager import CacheManager

logger = logging.getLogger(__name__)

# remaining bytes below this count as finished
_DONE_EPSILON = 1e-3


class TransferVerdict(str, Enum):
    OK = "ok"
    CORRUPTED = "corrupted"
    RETRIED = "retried"


@dataclass
class TransferEvent:
    file_id: str
    size: int
    src: str
    dst: str
    t_start: float
    t_end: float
    crc_at_src: int
    crc_at_dst: int
    verdict: TransferVerdict
    attempts: int
    # set by the forwarder when the bytes were admitted into the destination cache
    landed: bool = False

    @property
    def delivered(self) -> bool:
        return self.verdict is not TransferVerdict.CORRUPTED

    @property
    def corruptions(self) -> int:
        return self.attempts - 1 if self.delivered else self.attempts


@dataclass(eq=False)
class _Flow:
    remaining: float
    on_done: Callable[[], None] | None = None
    holding: bool = False


@dataclass(eq=False)
class Link:
    a: str
    b: str
    bandwidth: float
    latency: float = 0.0
    flows: list[_Flow] = field(default_factory=list)
    last_update: float = 0.0
    wake: Event | None = None

    @property
    def share(self) -> float:
        """Bandwidth each active flow currently receives."""
        return self.bandwidth / max(1, len(self.flows))


@dataclass(eq=False)
class _TransferJob:
    file_id: str
    size: int
    src: str
    dst: str
    link: Link
    crc: int
    profile: FaultProfile
    on_complete: Callable[[TransferEvent], None] | None
    t_start: float
    attempts: int = 0


@dataclass(eq=False)
class StreamHandle:
    stream_id: int
    file_id: str
    server: str
    reader: str
    opened_at: float
    hold_seconds: float
    bytes_read: int = 0
    closed: bool = False
    on_close: Callable[["StreamHandle"], None] | None = None
    _link: Link | None = None
    _flow: _Flow | None = None
    _timer: Event | None = None


class Fabric:
    def __init__(
        self,
        kernel: Kernel,
        catalog: FileCatalog,
        rng: SplitMix64 | None = None,
        caches: Mapping[str, "CacheManager"] | None = None,
        metrics: MetricsLedger | None = None,
        fault_profile: FaultProfile = NO_FAULTS,
        retry_budget: int = 2,
    ):
        self.kernel = kernel
        self.catalog = catalog
        self.rng = rng or SplitMix64(0)
        self.caches = caches if caches is not None else {}
        self.metrics = metrics
        self.fault_profile = fault_profile
        self.retry_budget = retry_budget
        self.transfer_log: list[TransferEvent] = []
        self._links: dict[tuple[str, str], Link] = {}
        self._server_links: dict[str, Link] = {}
        self._stream_ids = itertools.count(1)

    # ------------------------------------------------------------------
    # topology
    # ------------------------------------------------------------------

    def add_link(self, a: str, b: str, bandwidth: float, latency: float = 0.0) -> Link:
        if bandwidth <= 0:
            raise ValueError(f"link {a}-{b}: bandwidth must be > 0")
        if latency < 0:
            raise ValueError(f"link {a}-{b}: latency must be >= 0")
        link = Link(a, b, float(bandwidth), float(latency), last_update=self.kernel.now())
        self._links[_key(a, b)] = link
        return link

    def add_server_link(self, station: str, bandwidth: float) -> Link:
        """Single server link every local read at an nfs_shared station goes through."""
        link = Link(station, f"{station}#nfs", float(bandwidth), 0.0, last_update=self.kernel.now())
        self._server_links[station] = link
        return link

    def link(self, a: str, b: str) -> Link:
        try:
            return self._links[_key(a, b)]
        except KeyError:
            raise NoLink(f"no link between {a} and {b}") from None

    def has_link(self, a: str, b: str) -> bool:
        return _key(a, b) in self._links

    def has_links(self, path: list[str]) -> bool:
        return all(self.has_link(a, b) for a, b in zip(path, path[1:]))

    def links(self) -> list[Link]:
        return list(self._links.values())

    # ------------------------------------------------------------------
    # transfers
    # ------------------------------------------------------------------

    def transfer(
        self,
        file_id: str,
        src: str,
        dst: str,
        on_complete: Callable[[TransferEvent], None] | None = None,
        fault_profile: FaultProfile | None = None,
    ) -> None:
        """Move one file across the direct link src→dst.

        ``on_complete`` receives the TransferEvent once the file arrived with
        a matching CRC or the retry budget ran out (verdict ``corrupted``).
        """
        link = self.link(src, dst)
        record = self.catalog.get(file_id)
        job = _TransferJob(
            file_id=file_id,
            size=record.size,
            src=src,
            dst=dst,
            link=link,
            crc=record.crc,
            profile=fault_profile or self.fault_profile,
            on_complete=on_complete,
            t_start=self.kernel.now(),
        )
        self._start_attempt(job)

    def _start_attempt(self, job: _TransferJob) -> None:
        job.attempts += 1
        self.kernel.schedule(job.link.latency, self._join_link, job)

    def _join_link(self, job: _TransferJob) -> None:
        flow = _Flow(remaining=float(job.size), on_done=lambda: self._attempt_done(job))
        self._join(job.link, flow)

    def _attempt_done(self, job: _TransferJob) -> None:
        attempt = job.attempts - 1
        probability = job.profile.for_attempt(attempt)
        corrupted = probability >= 1.0 or (probability > 0.0 and self.rng.random() < probability)
        if corrupted and job.attempts <= self.retry_budget:
            logger.debug(
                "%s %s->%s corrupted on attempt %d, re-sending", job.file_id, job.src, job.dst, job.attempts
            )
            self._start_attempt(job)
            return

        if corrupted:
            crc_at_dst = job.crc ^ (1 << self.rng.randrange(32))
            verdict = TransferVerdict.CORRUPTED
            logger.warning(
                "%s %s->%s still corrupted after %d attempts", job.file_id, job.src, job.dst, job.attempts
            )
        else:
            crc_at_dst = job.crc
            verdict = TransferVerdict.RETRIED if job.attempts > 1 else TransferVerdict.OK

        event = TransferEvent(
            file_id=job.file_id,
            size=job.size,
            src=job.src,
            dst=job.dst,
            t_start=job.t_start,
            t_end=self.kernel.now(),
            crc_at_src=job.crc,
            crc_at_dst=crc_at_dst,
            verdict=verdict,
            attempts=job.attempts,
        )
        self.transfer_log.append(event)
        if job.on_complete is not None:
            job.on_complete(event)

    # ------------------------------------------------------------------
    # reads that are not transfers
    # ------------------------------------------------------------------

    def local_read(self, station: str, size: int, on_complete: Callable[[], None]) -> None:
        """Read through the station's shared server link; immediate without one."""
        link = self._server_links.get(station)
        if link is None:
            on_complete()
            return
        self._join(link, _Flow(remaining=float(size), on_done=on_complete))

    def open_stream(
        self,
        file_id: str,
        server_station: str,
        reader_station: str,
        hold_seconds: float,
        on_close: Callable[[StreamHandle], None] | None = None,
    ) -> StreamHandle:
        """Hold a fair share of the server→reader link while a remote reader works.

        The server's cache entry stays pinned until the stream closes, either
        after ``hold_seconds`` or on an explicit ``close_stream``.
        """
        cache = self.caches.get(server_station)
        if cache is None or file_id not in cache:
            raise NotCached(f"{file_id} not cached at stream server {server_station}")
        link = self.link(server_station, reader_station)
        handle = StreamHandle(
            stream_id=next(self._stream_ids),
            file_id=file_id,
            server=server_station,
            reader=reader_station,
            opened_at=self.kernel.now(),
            hold_seconds=hold_seconds,
            on_close=on_close,
        )
        if hold_seconds <= 0:
            handle.closed = True
            return handle

        cache.set_pin(file_id, +1)
        handle._link = link
        handle._flow = _Flow(remaining=0.0, holding=True)
        self._join(link, handle._flow)
        handle.bytes_read = self.catalog.get(file_id).size
        if self.metrics is not None:
            self.metrics.record(EventKind.REMOTE_STREAM, reader_station, handle.bytes_read, at=self.kernel.now())
        handle._timer = self.kernel.schedule(hold_seconds, self.close_stream, handle)
        return handle

    def close_stream(self, handle: StreamHandle) -> None:
        if handle.closed:
            return
        handle.closed = True
        self.kernel.cancel(handle._timer)
        if handle._link is not None and handle._flow is not None:
            self._leave(handle._link, handle._flow)
        self.caches[handle.server].set_pin(handle.file_id, -1)
        if handle.on_close is not None:
            handle.on_close(handle)

    # ------------------------------------------------------------------
    # transfer log
    # ------------------------------------------------------------------

    def transfer_log_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["t_start", "t_end", "file_id", "size", "src", "dst", "verdict", "attempts"])
        for ev in self.transfer_log:
            writer.writerow(
                [f"{ev.t_start:.6f}", f"{ev.t_end:.6f}", ev.file_id, ev.size, ev.src, ev.dst, ev.verdict.value, ev.attempts]
            )
        return out.getvalue()

    # ------------------------------------------------------------------
    # processor sharing
    # ------------------------------------------------------------------

    def _advance(self, link: Link) -> None:
        now = self.kernel.now()
        elapsed = now - link.last_update
        if elapsed > 0 and link.flows:
            moved = link.share * elapsed
            for flow in link.flows:
                if not flow.holding:
                    flow.remaining = max(0.0, flow.remaining - moved)
        link.last_update = now

    def _join(self, link: Link, flow: _Flow) -> None:
        self._advance(link)
        link.flows.append(flow)
        self._reschedule(link)

    def _leave(self, link: Link, flow: _Flow) -> None:
        self._advance(link)
        link.flows.remove(flow)
        self._reschedule(link)

    def _reschedule(self, link: Link) -> None:
        self.kernel.cancel(link.wake)
        link.wake = None
        movers = [f for f in link.flows if not f.holding]
        if not movers:
            return
        delay = min(f.remaining for f in movers) / link.share
        link.wake = self.kernel.schedule(delay, self._on_wake, link)

    def _on_wake(self, link: Link) -> None:
        link.wake = None
        self._advance(link)
        done = [f for f in link.flows if not f.holding and f.remaining <= _DONE_EPSILON]
        for flow in done:
            link.flows.remove(flow)
        self._reschedule(link)
        for flow in done:
            if flow.on_done is not None:
                flow.on_done()


def _key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)
