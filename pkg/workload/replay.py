"""Turn a trace into kernel events against a running system.

Records are replayed in canonical order; each fires at its timestamp. A
consumer works through its scheduled actions in step order: ``next_file``
waits until the consumer is idle, ``release_file`` until the held file has
been kept for the project's think time. A release with nothing held (the
stage failed) is skipped. Once a consumer has no scheduled actions left it
keeps requesting, thinking and releasing on its own until end of stream.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from catalog.file_catalog import DatasetPredicate, Location, Tier
from errors import CacheError, DataHandlingError, UnknownEntity
from fabric.integrity import synthetic_crc
from routing.forwarder import ForwardResult
from simkernel.kernel import Event, RunStats
from station.project import DeliveryRequest
from station.station_server import StationServer
from workload.trace import TraceAction, TraceRecord, parse_extra, sort_trace

if TYPE_CHECKING:
    from scenario.system import DataHandlingSystem

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class _ConsumerRun:
    station: StationServer
    label: str
    consumer_id: str
    scheduled: int
    project_id: str | None = None
    think: float = 0.0
    actions: deque = field(default_factory=deque)
    arrived: int = 0
    waiting: bool = False
    holding: str | None = None
    delivered_at: float = 0.0
    finished: bool = False
    timer: Event | None = None

    @property
    def on_own(self) -> bool:
        return self.arrived >= self.scheduled and not self.actions


class TraceReplayer:
    def __init__(self, system: "DataHandlingSystem"):
        self.system = system
        self.kernel = system.kernel
        self.imports: list[ForwardResult] = []
        self.failed_requests: list[DeliveryRequest] = []
        self._runs: dict[tuple[str, str], _ConsumerRun] = {}
        self._by_label: dict[str, list[_ConsumerRun]] = {}
        self._labels: dict[str, str] = {}

    def load(self, records: list[TraceRecord]) -> None:
        """Check every record, then schedule them all.

        Raises UnknownEntity naming the position of the first bad record in
        ``records`` as given.
        """
        indexed = sorted(enumerate(records), key=lambda item: item[1].sort_key())
        self._check(indexed)
        for _, record in indexed:
            self.kernel.schedule_at(max(record.t, self.kernel.now()), self._fire, record)

    def replay(self, records: list[TraceRecord], until: float | None = None) -> RunStats:
        self.load(records)
        if until is None:
            return self.kernel.run()
        return self.kernel.run_until(until)

    def project_id(self, label: str) -> str | None:
        return self._labels.get(label)

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def _check(self, indexed: list[tuple[int, TraceRecord]]) -> None:
        stations = self.system.stations
        catalog = self.system.catalog
        started: dict[str, tuple[str, int]] = {}
        scheduled: dict[tuple[str, str], int] = {}
        for index, record in indexed:
            try:
                options = parse_extra(record.extra)
            except DataHandlingError as exc:
                raise UnknownEntity(index, str(exc)) from exc
            if record.action is TraceAction.IMPORT_FILE:
                if record.station not in stations:
                    raise UnknownEntity(index, f"unknown source station {record.station!r}")
                if options.get("archive") not in self.system.archives:
                    raise UnknownEntity(index, f"unknown archive {options.get('archive')!r}")
                continue
            if record.station not in stations:
                raise UnknownEntity(index, f"unknown station {record.station!r}")
            if record.action is TraceAction.START_PROJECT:
                if record.project in started:
                    raise UnknownEntity(index, f"project {record.project!r} started twice")
                group = options.get("group", "")
                if group not in stations[record.station].cache.config.group_shares:
                    raise UnknownEntity(index, f"group {group!r} has no share at {record.station}")
                for name in _files(options):
                    if not catalog.has_name(name):
                        raise UnknownEntity(index, f"unknown file {name!r}")
                if "dataset" in options and not catalog.has_dataset_name(options["dataset"]):
                    raise UnknownEntity(index, f"unknown dataset {options['dataset']!r}")
                user = options.get("user")
                if user and catalog.users().get(user) != group:
                    raise UnknownEntity(index, f"user {user!r} is not registered in group {group!r}")
                started[record.project] = (record.station, int(options.get("consumers", "1")))
                continue
            if record.project not in started:
                raise UnknownEntity(index, f"project {record.project!r} not started before this record")
            station, consumers = started[record.project]
            if record.station != station:
                raise UnknownEntity(index, f"project {record.project!r} runs at {station}, not {record.station}")
            if record.consumer not in {f"c{i}" for i in range(1, consumers + 1)}:
                raise UnknownEntity(index, f"unknown consumer {record.consumer!r} of {record.project!r}")
            key = (record.project, record.consumer)
            scheduled[key] = scheduled.get(key, 0) + 1

        for label, (station, consumers) in started.items():
            for i in range(1, consumers + 1):
                cid = f"c{i}"
                run = _ConsumerRun(stations[station], label, cid, scheduled.get((label, cid), 0))
                self._runs[(label, cid)] = run
                self._by_label.setdefault(label, []).append(run)

    # ------------------------------------------------------------------
    # record handlers
    # ------------------------------------------------------------------

    def _fire(self, record: TraceRecord) -> None:
        if record.action is TraceAction.START_PROJECT:
            self._start(record)
        elif record.action is TraceAction.IMPORT_FILE:
            self._import(record)
        else:
            run = self._runs[(record.project, record.consumer)]
            run.arrived += 1
            if not run.finished:
                run.actions.append(record.action)
            self._advance(run)

    def _start(self, record: TraceRecord) -> None:
        options = parse_extra(record.extra)
        catalog = self.system.catalog
        if "dataset" in options:
            dataset_id = catalog.dataset_id_for(options["dataset"])
        else:
            dataset_id = catalog.define_dataset(
                f"project:{record.project}", DatasetPredicate(names=frozenset(_files(options)))
            )
        station = self.system.stations[record.station]
        think = float(options.get("think", "0"))
        project_id = station.start_project(
            dataset_id,
            options["group"],
            int(options.get("consumers", "1")),
            think_time=think,
            user=options.get("user") or None,
        )
        self._labels[record.project] = project_id
        for run in self._by_label.get(record.project, []):
            run.project_id = project_id
            run.think = think
            self._advance(run)

    def _import(self, record: TraceRecord) -> None:
        options = parse_extra(record.extra)
        system = self.system
        catalog = system.catalog
        size = int(options["size"])
        file_id = catalog.declare_file(
            record.file, size, synthetic_crc(record.file, size), Tier.MONTECARLO, declared_at=record.t
        )
        cache = system.stations[record.station].cache
        group = options.get("group") or _largest_share(cache.config.group_shares)
        try:
            admitted = cache.admit(file_id, size, group, self.kernel.now())
        except CacheError as exc:
            logger.warning("import of %s at %s dropped: %s", record.file, record.station, exc)
            return
        if admitted.rejected:
            logger.warning("import of %s at %s dropped: cache full", record.file, record.station)
            return
        node = cache.lookup(file_id).resident_node
        catalog.add_replica(file_id, Location.station(record.station), node=node)
        try:
            path = system.routes.compute_path(record.station, options["archive"])
            result = system.forwarder.forward_file(file_id, path, fault_profile=system.fault_profile)
        except DataHandlingError as exc:
            logger.warning("import of %s stays at %s: %s", record.file, record.station, exc)
            return
        self.imports.append(result)

    # ------------------------------------------------------------------
    # consumer state machine
    # ------------------------------------------------------------------

    def _advance(self, run: _ConsumerRun) -> None:
        if run.finished or run.waiting or run.project_id is None:
            return
        now = self.kernel.now()
        while run.actions and run.actions[0] is TraceAction.RELEASE_FILE and run.holding is None:
            run.actions.popleft()
        if run.actions:
            if run.actions[0] is TraceAction.NEXT_FILE:
                if run.holding is not None:
                    self._release_when_due(run, now)
                    return
                run.actions.popleft()
                self._request(run)
            else:
                if self._release_when_due(run, now):
                    run.actions.popleft()
                    self._advance(run)
            return
        if run.on_own:
            if run.holding is not None:
                if self._release_when_due(run, now):
                    self._advance(run)
            else:
                self._request(run)

    def _release_when_due(self, run: _ConsumerRun, now: float) -> bool:
        due = run.delivered_at + run.think
        if now < due:
            if run.timer is None:
                run.timer = self.kernel.schedule_at(due, self._timer_fired, run)
            return False
        run.station.release_file(run.project_id, run.consumer_id, run.holding)
        run.holding = None
        return True

    def _timer_fired(self, run: _ConsumerRun) -> None:
        run.timer = None
        self._advance(run)

    def _request(self, run: _ConsumerRun) -> None:
        run.waiting = True
        request = run.station.next_file(run.project_id, run.consumer_id)
        request.add_callback(lambda req: self._delivered(run, req))

    def _delivered(self, run: _ConsumerRun, request: DeliveryRequest) -> None:
        run.waiting = False
        if request.error is not None:
            self.failed_requests.append(request)
        elif request.end_of_stream:
            run.finished = True
            run.actions.clear()
            return
        else:
            run.holding = request.result.file_id
            run.delivered_at = request.resolved_at
        # continue from a fresh event, not from inside the station's callback
        self.kernel.schedule(0, self._advance, run)


def replay(system: "DataHandlingSystem", records: list[TraceRecord], until: float | None = None) -> TraceReplayer:
    replayer = TraceReplayer(system)
    replayer.replay(sort_trace(records), until)
    return replayer


def _files(options: dict[str, str]) -> list[str]:
    return [name for name in options.get("files", "").split("|") if name]


def _largest_share(shares: dict[str, float]) -> str:
    return min(shares, key=lambda g: (-shares[g], g))
