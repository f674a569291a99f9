"""Robotic tape library emulation.

Stores are appended to the current fill tape at enqueue time; a new tape is
opened when the next file would overflow it. Requests are served FIFO, except
that an idle drive first takes queued requests for the tape it already has
mounted (mount batching). A request whose tape sits in another drive is left
for that drive.

Service time is ``mount_latency`` (only when the drive has to switch tapes)
plus ``size / drive_rate``.
"""

import csv
import io
import logging
from dataclasses import dataclass
from typing import Callable

from catalog.file_catalog import FileCatalog, Location
from errors import AlreadyArchived, MassStorageError, NotArchived
from metrics.ledger import EventKind, MetricsLedger
from simkernel.kernel import Event, Kernel
from storage.mass_storage import MassStorage, RequestKind, TapeRequest

logger = logging.getLogger(__name__)

DEFAULT_DRIVES = 2
DEFAULT_MOUNT_LATENCY = 60.0
DEFAULT_DRIVE_RATE = 30e6
DEFAULT_TAPE_CAPACITY = 10**9


@dataclass(frozen=True)
class TapeLibraryConfig:
    drives: int = DEFAULT_DRIVES
    mount_latency: float = DEFAULT_MOUNT_LATENCY
    drive_rate: float = DEFAULT_DRIVE_RATE
    tape_capacity: int = DEFAULT_TAPE_CAPACITY

    def __post_init__(self) -> None:
        if self.drives < 1:
            raise MassStorageError(f"drives must be >= 1, got {self.drives}")
        if self.mount_latency < 0:
            raise MassStorageError(f"mount_latency must be >= 0, got {self.mount_latency}")
        if self.drive_rate <= 0:
            raise MassStorageError(f"drive_rate must be > 0, got {self.drive_rate}")
        if self.tape_capacity <= 0:
            raise MassStorageError(f"tape_capacity must be > 0, got {self.tape_capacity}")


@dataclass(frozen=True)
class TapeSlot:
    tape_id: str
    offset: int


@dataclass(eq=False)
class _Drive:
    index: int
    mounted: str | None = None
    free_at: float = 0.0
    current: TapeRequest | None = None


class TapeLibrary(MassStorage):
    def __init__(
        self,
        mss_id: str,
        catalog: FileCatalog,
        config: TapeLibraryConfig | None = None,
        metrics: MetricsLedger | None = None,
        kernel: Kernel | None = None,
    ):
        self.mss_id = mss_id
        self.catalog = catalog
        self.config = config or TapeLibraryConfig()
        self.metrics = metrics
        self.kernel = kernel
        self.completions: list[TapeRequest] = []
        self._drives = [_Drive(i) for i in range(self.config.drives)]
        self._queue: list[TapeRequest] = []
        self._tape_map: dict[str, TapeSlot] = {}
        self._tape_fill: dict[str, int] = {}
        self._fill_tape: str | None = None
        self._archived: set[str] = set()
        self._wake: Event | None = None

    # ------------------------------------------------------------------
    # inventory
    # ------------------------------------------------------------------

    @property
    def location(self) -> Location:
        return Location.mss(self.mss_id)

    def tape_of(self, file_id: str) -> TapeSlot | None:
        return self._tape_map.get(file_id)

    def tapes(self) -> dict[str, int]:
        """Bytes written (or reserved) per tape, in opening order."""
        return dict(self._tape_fill)

    @property
    def stored_bytes(self) -> int:
        return sum(self._tape_fill.values())

    def is_archived(self, file_id: str) -> bool:
        return file_id in self._archived

    def is_placed(self, file_id: str) -> bool:
        return file_id in self._tape_map

    def pending(self) -> int:
        return len(self._queue) + sum(1 for d in self._drives if d.current is not None)

    # ------------------------------------------------------------------
    # requests
    # ------------------------------------------------------------------

    def store(
        self, file_id: str, on_complete: Callable[[TapeRequest], None] | None = None
    ) -> TapeRequest:
        size = self.catalog.get(file_id).size
        if file_id in self._tape_map:
            raise AlreadyArchived(f"{file_id} is already on tape at {self.mss_id}")
        slot = self._place(file_id, size)
        request = TapeRequest(
            kind=RequestKind.STORE,
            file_id=file_id,
            size=size,
            tape_id=slot.tape_id,
            enqueued_at=self._now(),
            on_complete=on_complete,
        )
        self._enqueue(request)
        return request

    def fetch(
        self,
        file_id: str,
        dst_station: str,
        on_complete: Callable[[TapeRequest], None] | None = None,
    ) -> TapeRequest:
        if file_id not in self._archived:
            raise NotArchived(f"{file_id} has no archived copy at {self.mss_id}")
        request = TapeRequest(
            kind=RequestKind.FETCH,
            file_id=file_id,
            size=self.catalog.get(file_id).size,
            tape_id=self._tape_map[file_id].tape_id,
            enqueued_at=self._now(),
            dst_station=dst_station,
            on_complete=on_complete,
        )
        self._enqueue(request)
        return request

    def preload(self, file_id: str) -> str:
        size = self.catalog.get(file_id).size
        if file_id in self._tape_map:
            raise AlreadyArchived(f"{file_id} is already on tape at {self.mss_id}")
        slot = self._place(file_id, size)
        self._archived.add(file_id)
        if self.catalog.replica(file_id, self.location) is None:
            self.catalog.add_replica(file_id, self.location)
        return slot.tape_id

    def drain(self, until: float) -> list[TapeRequest]:
        completed: list[TapeRequest] = []
        while True:
            self._dispatch()
            busy = [d for d in self._drives if d.current is not None]
            if not busy:
                break
            drive = min(busy, key=lambda d: (d.current.completed_at, d.index))
            if drive.current.completed_at > until:
                break
            request = drive.current
            drive.current = None
            self._finish(request)
            completed.append(request)
        return completed

    # ------------------------------------------------------------------
    # completion log
    # ------------------------------------------------------------------

    def completion_log_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["t_complete", "kind", "file_id", "tape_id", "mounted"])
        for req in self.completions:
            writer.writerow([f"{req.completed_at:.6f}", req.kind.value, req.file_id, req.tape_id, int(req.mounted)])
        return out.getvalue()

    def completed_bytes(self, kind: RequestKind) -> int:
        return sum(r.size for r in self.completions if r.kind is kind)

    # ------------------------------------------------------------------
    # internal helpers
    # ------------------------------------------------------------------

    def _now(self) -> float:
        return self.kernel.now() if self.kernel is not None else 0.0

    def _place(self, file_id: str, size: int) -> TapeSlot:
        capacity = self.config.tape_capacity
        if size > capacity:
            raise MassStorageError(f"{file_id}: {size} B does not fit on a {capacity} B tape")
        if self._fill_tape is None or self._tape_fill[self._fill_tape] + size > capacity:
            self._fill_tape = f"{self.mss_id}-T{len(self._tape_fill) + 1:04d}"
            self._tape_fill[self._fill_tape] = 0
        slot = TapeSlot(self._fill_tape, self._tape_fill[self._fill_tape])
        self._tape_fill[self._fill_tape] += size
        self._tape_map[file_id] = slot
        return slot

    def _enqueue(self, request: TapeRequest) -> None:
        self._queue.append(request)
        logger.debug("%s: %s %s queued on %s", self.mss_id, request.kind.value, request.file_id, request.tape_id)
        self._dispatch()
        self._arm()

    def _dispatch(self) -> None:
        assigned = True
        while assigned and self._queue:
            assigned = False
            idle = sorted((d for d in self._drives if d.current is None), key=lambda d: (d.free_at, d.index))
            for drive in idle:
                request = self._pick(drive)
                if request is None:
                    continue
                self._queue.remove(request)
                self._start(drive, request)
                assigned = True
                break

    def _pick(self, drive: _Drive) -> TapeRequest | None:
        # only requests already waiting when the drive makes its choice
        decide_at = max(drive.free_at, self._queue[0].enqueued_at)
        waiting = [r for r in self._queue if r.enqueued_at <= decide_at]
        for request in waiting:
            if request.tape_id == drive.mounted:
                return request
        held_elsewhere = {d.mounted for d in self._drives if d is not drive}
        for request in waiting:
            if request.tape_id not in held_elsewhere:
                return request
        return None

    def _start(self, drive: _Drive, request: TapeRequest) -> None:
        start = max(drive.free_at, request.enqueued_at)
        request.mounted = drive.mounted != request.tape_id
        service = request.size / self.config.drive_rate
        if request.mounted:
            service += self.config.mount_latency
        request.started_at = start
        request.completed_at = start + service
        request.drive = drive.index
        drive.mounted = request.tape_id
        drive.current = request
        drive.free_at = request.completed_at

    def _finish(self, request: TapeRequest) -> None:
        self.completions.append(request)
        at = request.completed_at
        if request.kind is RequestKind.STORE:
            self._archived.add(request.file_id)
            if self.catalog.replica(request.file_id, self.location) is None:
                self.catalog.add_replica(request.file_id, self.location)
            if self.metrics is not None:
                self.metrics.record(EventKind.MSS_WRITTEN, self.mss_id, request.size, at=at)
        else:
            if self.metrics is not None:
                self.metrics.record(EventKind.MSS_READ, self.mss_id, request.size, at=at)
        logger.debug(
            "%s: %s %s done at %.3f (drive %d%s)",
            self.mss_id,
            request.kind.value,
            request.file_id,
            at,
            request.drive,
            ", mounted" if request.mounted else "",
        )
        if request.on_complete is not None:
            request.on_complete(request)

    def _arm(self) -> None:
        if self.kernel is None:
            return
        busy = [d.current.completed_at for d in self._drives if d.current is not None]
        if not busy:
            return
        due = min(busy)
        if self._wake is not None and not self._wake.cancelled and not self._wake.fired:
            if self._wake.fire_time <= due:
                return
            self.kernel.cancel(self._wake)
        self._wake = self.kernel.schedule_at(max(due, self.kernel.now()), self._on_wake)

    def _on_wake(self) -> None:
        self._wake = None
        self.drain(self.kernel.now())
        self._arm()
