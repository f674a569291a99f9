"""Store-and-forward movement of one file along a computed path.

Hops run one after another. A station that sends a hop keeps its cache entry
pinned until the hop finishes. Intermediate stations flagged
``cache_in_transit`` keep a copy when their cache can make room; a full
regional cache never blocks forwarding.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

from cache.cache_manager import CacheManager
from catalog.file_catalog import FileCatalog, Location, ReplicaState
from errors import CacheError, NoLink, NoReplica, StageFailed
from fabric.integrity import FaultProfile
from fabric.network import Fabric, TransferEvent
from metrics.ledger import EventKind, MetricsLedger
from routing.route_table import RouteTable
from storage.mass_storage import MassStorage, TapeRequest

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ForwardResult:
    file_id: str
    path: list[str]
    events: list[TransferEvent] = field(default_factory=list)
    replicas: list[str] = field(default_factory=list)
    store_request: TapeRequest | None = None
    error: StageFailed | None = None
    landed: bool = False
    finished: bool = False

    @property
    def ok(self) -> bool:
        return self.finished and self.error is None


class Forwarder:
    def __init__(
        self,
        routes: RouteTable,
        fabric: Fabric,
        catalog: FileCatalog,
        caches: Mapping[str, CacheManager],
        archives: Mapping[str, MassStorage],
        metrics: MetricsLedger | None = None,
    ):
        self.routes = routes
        self.fabric = fabric
        self.catalog = catalog
        self.caches = caches
        self.archives = archives
        self.metrics = metrics

    def forward_file(
        self,
        file_id: str,
        path: list[str],
        on_complete: Callable[[ForwardResult], None] | None = None,
        group: str | None = None,
        fault_profile: FaultProfile | None = None,
    ) -> ForwardResult:
        """Send ``file_id`` hop by hop from ``path[0]`` to ``path[-1]``.

        The returned result fills in as hops complete; ``on_complete`` fires
        once, after the last hop or the first hop that stays corrupted.
        ``group`` is the cache group charged at the destination station.
        """
        if not path:
            raise ValueError("empty path")
        head = path[0]
        if not any(r.location.site == head for r in self.catalog.replicas(file_id)):
            raise NoReplica(f"{file_id} has no replica at path head {head}")
        for a, b in zip(path, path[1:]):
            if not self.fabric.has_link(a, b):
                raise NoLink(f"no link between {a} and {b} on path {' -> '.join(path)}")

        result = ForwardResult(file_id, list(path))
        if len(path) == 1:
            self._finish(result, on_complete)
            return result
        self._send_hop(result, 0, group, fault_profile, on_complete)
        return result

    # ------------------------------------------------------------------
    # internal helpers
    # ------------------------------------------------------------------

    def _send_hop(
        self,
        result: ForwardResult,
        hop: int,
        group: str | None,
        fault_profile: FaultProfile | None,
        on_complete: Callable[[ForwardResult], None] | None,
    ) -> None:
        src, dst = result.path[hop], result.path[hop + 1]
        pinned = self._pin_source(src, result.file_id)

        def hop_done(event: TransferEvent) -> None:
            if pinned:
                self.caches[src].set_pin(result.file_id, -1)
            result.events.append(event)
            if self.metrics is not None and src in self.caches:
                self.metrics.record(EventKind.SENT_OUT, src, event.size, at=event.t_end)
            if not event.delivered:
                result.error = StageFailed(
                    f"{result.file_id} {src}->{dst} corrupted after {event.attempts} attempts"
                )
                self._finish(result, on_complete)
                return
            last = hop + 2 == len(result.path)
            if last:
                self._arrive(result, event, group)
                self._finish(result, on_complete)
            else:
                self._pass_through(result, event)
                self._send_hop(result, hop + 1, group, fault_profile, on_complete)

        self.fabric.transfer(result.file_id, src, dst, on_complete=hop_done, fault_profile=fault_profile)

    def _pin_source(self, station: str, file_id: str) -> bool:
        cache = self.caches.get(station)
        if cache is None or file_id not in cache:
            return False
        replica = self.catalog.replica(file_id, Location.station(station))
        if replica is None or replica.state is ReplicaState.STAGING:
            return False
        cache.set_pin(file_id, +1)
        return True

    def _pass_through(self, result: ForwardResult, event: TransferEvent) -> None:
        station = event.dst
        cache = self.caches.get(station)
        if cache is None or not self.routes.caches_in_transit(station) or result.file_id in cache:
            return
        group = _transit_group(cache)
        try:
            admitted = cache.admit(result.file_id, event.size, group, event.t_end)
        except CacheError as exc:
            logger.debug("%s: no transit copy of %s (%s)", station, result.file_id, exc)
            return
        if admitted.rejected:
            logger.debug("%s: transit copy of %s rejected, cache full", station, result.file_id)
            return
        self._register_copy(result, event, cache)

    def _arrive(self, result: ForwardResult, event: TransferEvent, group: str | None) -> None:
        dst = event.dst
        archive = self.archives.get(dst)
        if archive is not None:
            if not archive.is_placed(result.file_id):
                result.store_request = archive.store(result.file_id)
            return

        cache = self.caches.get(dst)
        if cache is None:
            return
        location = Location.station(dst)
        replica = self.catalog.replica(result.file_id, location)
        if replica is not None and replica.state is ReplicaState.STAGING:
            entry = cache.lookup(result.file_id)
            pinned = entry is not None and entry.pin_count > 0
            self.catalog.promote_replica(result.file_id, location, pinned=pinned)
            self._count_delivery(result, event)
            return
        if result.file_id in cache or group is None:
            return
        try:
            admitted = cache.admit(result.file_id, event.size, group, event.t_end)
        except CacheError as exc:
            logger.debug("%s: %s not admitted on arrival (%s)", dst, result.file_id, exc)
            return
        if admitted.admitted:
            self._register_copy(result, event, cache)

    def _register_copy(self, result: ForwardResult, event: TransferEvent, cache: CacheManager) -> None:
        entry = cache.lookup(result.file_id)
        location = Location.station(cache.station_id)
        if self.catalog.replica(result.file_id, location) is None:
            self.catalog.add_replica(result.file_id, location, ReplicaState.CACHED, node=entry.resident_node)
        result.replicas.append(cache.station_id)
        self._count_delivery(result, event)

    def _count_delivery(self, result: ForwardResult, event: TransferEvent) -> None:
        event.landed = True
        if event.dst == result.path[-1]:
            result.landed = True
        if self.metrics is not None:
            self.metrics.record(EventKind.DELIVERED_IN, event.dst, event.size, at=event.t_end)

    def _finish(self, result: ForwardResult, on_complete: Callable[[ForwardResult], None] | None) -> None:
        result.finished = True
        if result.error is not None:
            logger.warning("forward of %s failed: %s", result.file_id, result.error)
        if on_complete is not None:
            on_complete(result)


def _transit_group(cache: CacheManager) -> str:
    # transit copies are charged to the group with the largest share
    shares = cache.config.group_shares
    return min(shares, key=lambda g: (-shares[g], g))
