"""Station server: projects, consumer dispatch and the stage pipeline.

Consumers pull files in snapshot order, one file per idle consumer. A cache
hit is handed over at once (through the shared server link on an nfs_shared
station). A miss becomes a *stage*: cache space is reserved and pinned, a
``staging`` replica is registered, the cheapest reachable replica is chosen
and the file is fetched from tape and/or forwarded along its static route.
At most ``max_concurrent_stages`` stages move data at a time; stages whose
admission finds nothing evictable wait in FIFO order until a pin is released.

Every delivered file stays pinned for the consumer until ``release_file``.
"""

import csv
import io
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping

from cache.cache_manager import CacheManager, CacheMode
from catalog.file_catalog import FileCatalog, Location, LocationKind, ReplicaState
from errors import (
    CacheError,
    CatalogError,
    ConsumerBusy,
    FabricError,
    NotHeld,
    RoutingError,
    StageFailed,
    TooManyConsumers,
    UnknownConsumer,
    UnknownGroup,
    UnknownProject,
    UnknownUser,
)
from fabric.integrity import FaultProfile
from fabric.network import Fabric
from metrics.ledger import EventKind, MetricsLedger
from routing.forwarder import Forwarder, ForwardResult
from routing.route_table import RouteTable
from simkernel.kernel import Kernel
from station.project import (
    END_OF_STREAM,
    Consumer,
    Delivery,
    DeliveryHandle,
    DeliveryMode,
    DeliveryRequest,
    Project,
    ProjectState,
    StationConfig,
)
from storage.mass_storage import MassStorage

logger = logging.getLogger(__name__)

PROJECT_REPORT_HEADER = ["project_id", "station", "group", "files", "bytes_consumed", "bytes_delivered", "wall_seconds"]

# a stage waiter is told the outcome while the stage pin still holds the entry
StageWaiter = Callable[[StageFailed | None], None]


@dataclass(eq=False)
class _Stage:
    file_id: str
    size: int
    group: str
    project: Project | None
    waiters: list[StageWaiter] = field(default_factory=list)
    source: str | None = None


class StationServer:
    def __init__(
        self,
        config: StationConfig,
        kernel: Kernel,
        catalog: FileCatalog,
        cache: CacheManager,
        routes: RouteTable,
        fabric: Fabric,
        forwarder: Forwarder,
        archives: Mapping[str, MassStorage],
        metrics: MetricsLedger,
        fault_profile: FaultProfile | None = None,
    ):
        self.config = config
        self.station_id = config.station_id
        self.kernel = kernel
        self.catalog = catalog
        self.cache = cache
        self.routes = routes
        self.fabric = fabric
        self.forwarder = forwarder
        self.archives = archives
        self.metrics = metrics
        self.fault_profile = fault_profile
        # other stations, filled in once every station exists
        self.peers: dict[str, "StationServer"] = {}
        self.location = Location.station(self.station_id)
        self.projects: dict[str, Project] = {}
        self.peak_stages = 0
        self.stages_started = 0
        self.stages_failed = 0
        self._project_seq = 0
        self._stages: dict[str, _Stage] = {}
        self._stage_queue: deque[_Stage] = deque()
        self._space_wait: deque[_Stage] = deque()
        self._active = 0

    # ------------------------------------------------------------------
    # projects
    # ------------------------------------------------------------------

    def start_project(
        self,
        dataset_id: str,
        group: str,
        consumers: int,
        think_time: float = 0.0,
        user: str | None = None,
    ) -> str:
        snapshot = self.catalog.resolve_dataset(dataset_id)
        if consumers < 1 or consumers > self.config.consumer_slots:
            raise TooManyConsumers(
                f"{self.station_id}: {consumers} consumers requested, slots are 1..{self.config.consumer_slots}"
            )
        if group not in self.cache.config.group_shares:
            raise UnknownGroup(f"group {group!r} has no share at {self.station_id}")
        if user is not None and self.catalog.user_group(user) != group:
            raise UnknownUser(f"user {user!r} is not registered in group {group!r}")

        self._project_seq += 1
        project_id = f"{self.station_id}-P{self._project_seq:04d}"
        project = Project(
            project_id=project_id,
            station_id=self.station_id,
            dataset_id=dataset_id,
            group=group,
            files=snapshot,
            consumers={f"c{i}": Consumer(f"c{i}") for i in range(1, consumers + 1)},
            think_time=think_time,
            user=user,
            started_at=self.kernel.now(),
        )
        self.projects[project_id] = project
        if not snapshot:
            project.state = ProjectState.DONE
            project.finished_at = project.started_at
        logger.info(
            "%s: project %s started on %s (%d files, %d consumers)",
            self.station_id,
            project_id,
            dataset_id,
            len(snapshot),
            consumers,
        )
        return project_id

    def project(self, project_id: str) -> Project:
        try:
            return self.projects[project_id]
        except KeyError:
            raise UnknownProject(f"unknown project {project_id!r} at {self.station_id}") from None

    def next_file(self, project_id: str, consumer_id: str) -> DeliveryRequest:
        """Ask for the consumer's next file.

        The returned request is already resolved on a plain cache hit and on
        end of stream; otherwise it resolves once the file is staged, read or
        streamed, or fails with StageFailed.
        """
        project = self.project(project_id)
        consumer = self._consumer(project, consumer_id)
        if not consumer.idle:
            raise ConsumerBusy(f"{project_id}/{consumer_id} already holds or awaits a file")

        request = DeliveryRequest(project_id, consumer_id)
        if project.exhausted:
            request.resolve(END_OF_STREAM, self.kernel.now())
            return request

        file_id = project.files[project.cursor]
        project.cursor += 1
        if project.exhausted and project.state is ProjectState.RUNNING:
            project.state = ProjectState.DRAINING
        request.file_id = file_id
        consumer.waiting = request

        if self.config.delivery_mode is DeliveryMode.NETWORK_ATTACHED:
            self._deliver_remote(project, consumer, request)
        else:
            self._deliver_local(project, consumer, request)
        return request

    def release_file(self, project_id: str, consumer_id: str, file_id: str) -> None:
        project = self.project(project_id)
        consumer = self._consumer(project, consumer_id)
        held = consumer.holding
        if held is None or held.file_id != file_id:
            raise NotHeld(f"{project_id}/{consumer_id} does not hold {file_id}")
        consumer.holding = None
        if held.handle is DeliveryHandle.LOCAL:
            self.cache.set_pin(file_id, -1)
        elif held.stream is not None:
            self.fabric.close_stream(held.stream)
        self._check_done(project)
        self._retry_space_waits()

    def project_report(self) -> list[list[str]]:
        now = self.kernel.now()
        return [
            [
                p.project_id,
                p.station_id,
                p.group,
                str(len(p.files)),
                str(p.bytes_consumed),
                str(p.bytes_delivered),
                f"{p.wall_seconds(now):.6f}",
            ]
            for p in self.projects.values()
        ]

    def project_report_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(PROJECT_REPORT_HEADER)
        writer.writerows(self.project_report())
        return out.getvalue()

    # ------------------------------------------------------------------
    # staging on behalf of other stations
    # ------------------------------------------------------------------

    def prefetch(self, file_id: str, group: str, on_ready: StageWaiter) -> None:
        """Bring ``file_id`` into this cache for a remote reader.

        ``on_ready`` gets None once the file is cached here (and still pinned
        by the stage), or the StageFailed error.
        """
        if group not in self.cache.config.group_shares:
            group = _largest_share(self.cache)
        if file_id in self.cache and file_id not in self._stages:
            on_ready(None)
            return
        self._request_stage(file_id, group, None, on_ready)

    @property
    def active_stages(self) -> int:
        return self._active

    @property
    def waiting_for_space(self) -> int:
        return len(self._space_wait)

    # ------------------------------------------------------------------
    # delivery paths
    # ------------------------------------------------------------------

    def _deliver_local(self, project: Project, consumer: Consumer, request: DeliveryRequest) -> None:
        file_id = request.file_id
        if file_id in self._stages:
            self._stages[file_id].waiters.append(self._waiter(project, consumer, request))
            return
        if file_id in self.cache:
            self._hit(project, consumer, request)
            return
        self._request_stage(file_id, project.group, project, self._waiter(project, consumer, request))

    def _hit(self, project: Project, consumer: Consumer, request: DeliveryRequest) -> None:
        file_id = request.file_id
        size = self.catalog.get(file_id).size
        self.cache.set_pin(file_id, +1)
        self.cache.touch(file_id, self.kernel.now())
        delivery = Delivery(file_id, size, DeliveryHandle.LOCAL)
        if self.cache.config.mode is CacheMode.NFS_SHARED:
            self.fabric.local_read(
                self.station_id, size, lambda: self._hand_over(project, consumer, request, delivery)
            )
        else:
            self._hand_over(project, consumer, request, delivery)

    def _waiter(self, project: Project, consumer: Consumer, request: DeliveryRequest) -> StageWaiter:
        def on_ready(error: StageFailed | None) -> None:
            if error is None:
                self._hit(project, consumer, request)
            else:
                self._fail(project, consumer, request, error)

        return on_ready

    def _deliver_remote(self, project: Project, consumer: Consumer, request: DeliveryRequest) -> None:
        file_id = request.file_id
        server = self._stream_source(file_id)
        if server is not None:
            self._open_stream(project, consumer, request, server)
            return
        fallback = self.config.stream_server
        peer = self.peers.get(fallback) if fallback else None
        if peer is None:
            self._fail(
                project, consumer, request, StageFailed(f"{file_id}: no cached copy reachable from {self.station_id}")
            )
            return

        def on_ready(error: StageFailed | None) -> None:
            if error is None:
                self._open_stream(project, consumer, request, fallback)
            else:
                self._fail(project, consumer, request, error)

        peer.prefetch(file_id, project.group, on_ready)

    def _stream_source(self, file_id: str) -> str | None:
        try:
            replicas = self.catalog.locate(file_id, self.station_id, self.routes)
        except CatalogError:
            return None
        for replica in replicas:
            site = replica.location.site
            if (
                replica.location.is_station
                and site != self.station_id
                and replica.state in (ReplicaState.CACHED, ReplicaState.PINNED_CACHED)
                and self.fabric.has_link(site, self.station_id)
            ):
                return site
        return None

    def _open_stream(self, project: Project, consumer: Consumer, request: DeliveryRequest, server: str) -> None:
        file_id = request.file_id
        try:
            stream = self.fabric.open_stream(file_id, server, self.station_id, project.think_time)
        except (CacheError, FabricError, CatalogError) as exc:
            self._fail(project, consumer, request, StageFailed(f"{file_id}: stream from {server} failed: {exc}"))
            return
        size = self.catalog.get(file_id).size
        self._hand_over(project, consumer, request, Delivery(file_id, size, DeliveryHandle.REMOTE_STREAM, stream))

    def _hand_over(self, project: Project, consumer: Consumer, request: DeliveryRequest, delivery: Delivery) -> None:
        now = self.kernel.now()
        consumer.waiting = None
        consumer.holding = delivery
        consumer.delivered.append(delivery.file_id)
        project.bytes_consumed += delivery.size
        self.metrics.record(EventKind.CONSUMED, self.station_id, delivery.size, files=1, at=now)
        request.resolve(delivery, now)

    def _fail(self, project: Project, consumer: Consumer, request: DeliveryRequest, error: StageFailed) -> None:
        consumer.waiting = None
        project.failed.append(request.file_id)
        logger.warning("%s: %s/%s lost %s: %s", self.station_id, project.project_id, consumer.consumer_id, request.file_id, error)
        request.fail(error, self.kernel.now())
        self._check_done(project)

    def _check_done(self, project: Project) -> None:
        if project.state is ProjectState.DONE or not project.exhausted:
            return
        if all(c.idle for c in project.consumers.values()):
            project.state = ProjectState.DONE
            project.finished_at = self.kernel.now()
            logger.info("%s: project %s done", self.station_id, project.project_id)

    # ------------------------------------------------------------------
    # stage pipeline
    # ------------------------------------------------------------------

    def _request_stage(self, file_id: str, group: str, project: Project | None, waiter: StageWaiter) -> None:
        stage = self._stages.get(file_id)
        if stage is not None:
            stage.waiters.append(waiter)
            return
        stage = _Stage(file_id, self.catalog.get(file_id).size, group, project, [waiter])
        self._stages[file_id] = stage
        self._stage_queue.append(stage)
        self._pump()

    def _pump(self) -> None:
        while self._active < self.config.max_concurrent_stages and self._stage_queue:
            self._start_stage(self._stage_queue.popleft())

    def _retry_space_waits(self) -> None:
        if not self._space_wait:
            return
        self._stage_queue.extendleft(reversed(self._space_wait))
        self._space_wait.clear()
        self._pump()

    def _start_stage(self, stage: _Stage) -> None:
        now = self.kernel.now()
        try:
            admitted = self.cache.admit(stage.file_id, stage.size, stage.group, now)
        except CacheError as exc:
            self._abort(stage, StageFailed(f"{stage.file_id}: cannot cache at {self.station_id}: {exc}"))
            return
        if admitted.rejected:
            logger.debug("%s: %s waits for cache space", self.station_id, stage.file_id)
            self._space_wait.append(stage)
            return

        self.cache.set_pin(stage.file_id, +1)
        node = self.cache.lookup(stage.file_id).resident_node
        self.catalog.add_replica(stage.file_id, self.location, ReplicaState.STAGING, node=node)
        self._active += 1
        self.stages_started += 1
        self.peak_stages = max(self.peak_stages, self._active)

        path = self._source_path(stage.file_id)
        if path is None:
            self._stage_done(stage, None)
            return
        stage.source = path[0]
        archive = self.archives.get(path[0])
        if archive is not None:
            logger.debug("%s: %s fetched from %s", self.station_id, stage.file_id, path[0])
            archive.fetch(stage.file_id, self.station_id, on_complete=lambda _req: self._forward(stage, path))
        else:
            self._forward(stage, path)

    def _source_path(self, file_id: str) -> list[str] | None:
        try:
            replicas = self.catalog.locate(file_id, self.station_id, self.routes)
        except CatalogError:
            return None
        for replica in replicas:
            site = replica.location.site
            if site == self.station_id:
                continue
            if replica.location.kind is LocationKind.MSS and not self.archives[site].is_archived(file_id):
                continue
            try:
                path = self.routes.compute_path(site, self.station_id)
            except RoutingError:
                continue
            if self.fabric.has_links(path):
                return path
        return None

    def _forward(self, stage: _Stage, path: list[str]) -> None:
        self.forwarder.forward_file(
            stage.file_id,
            path,
            on_complete=lambda result: self._stage_done(stage, result),
            group=stage.group,
            fault_profile=self.fault_profile,
        )

    def _stage_done(self, stage: _Stage, result: ForwardResult | None) -> None:
        self._active -= 1
        del self._stages[stage.file_id]
        if result is not None and result.ok and result.landed:
            if stage.project is not None:
                stage.project.bytes_delivered += stage.size
            for waiter in stage.waiters:
                waiter(None)
            self.cache.set_pin(stage.file_id, -1)
        else:
            if result is None:
                error = StageFailed(f"{stage.file_id}: no reachable replica for {self.station_id}")
            else:
                error = result.error or StageFailed(f"{stage.file_id}: data never landed at {self.station_id}")
            self.stages_failed += 1
            self.cache.set_pin(stage.file_id, -1)
            self.cache.discard(stage.file_id)
            self.catalog.remove_replica(stage.file_id, self.location)
            for waiter in stage.waiters:
                waiter(error)
        self._pump()
        self._retry_space_waits()

    def _abort(self, stage: _Stage, error: StageFailed) -> None:
        del self._stages[stage.file_id]
        self.stages_failed += 1
        for waiter in stage.waiters:
            waiter(error)

    # ------------------------------------------------------------------
    # internal helpers
    # ------------------------------------------------------------------

    def _consumer(self, project: Project, consumer_id: str) -> Consumer:
        try:
            return project.consumers[consumer_id]
        except KeyError:
            raise UnknownConsumer(f"{consumer_id!r} is not a consumer of {project.project_id}") from None


def _largest_share(cache: CacheManager) -> str:
    shares = cache.config.group_shares
    return min(shares, key=lambda g: (-shares[g], g))
