"""The assembled data-handling system and its cross-module audits."""

from dataclasses import dataclass, field

from cache.cache_manager import CacheManager
from catalog.file_catalog import FileCatalog
from fabric.integrity import FaultProfile
from fabric.network import Fabric
from metrics.ledger import Metric, MetricsLedger
from routing.forwarder import Forwarder
from routing.route_table import RouteTable
from simkernel.kernel import Kernel
from station.station_server import StationServer
from storage.mass_storage import RequestKind
from storage.tape_library import TapeLibrary


@dataclass(eq=False)
class DataHandlingSystem:
    kernel: Kernel
    catalog: FileCatalog
    routes: RouteTable
    fabric: Fabric
    forwarder: Forwarder
    metrics: MetricsLedger
    caches: dict[str, CacheManager] = field(default_factory=dict)
    stations: dict[str, StationServer] = field(default_factory=dict)
    archives: dict[str, TapeLibrary] = field(default_factory=dict)
    datasets: dict[str, str] = field(default_factory=dict)
    fault_profile: FaultProfile | None = None

    def node_ids(self) -> list[str]:
        return list(self.stations) + list(self.archives)

    def statistics(self) -> dict[str, int]:
        """Inventory counters in the shape of a deployment overview table."""
        stats = self.catalog.statistics()
        return {
            "stations": len(self.stations),
            "archives": len(self.archives),
            "registered_nodes": sum(len(c.nodes) for c in self.caches.values()),
            "registered_users": stats.users,
            "declared_files": stats.declared,
            "physical_files": stats.physical,
            "virtual_files": stats.virtual,
            "disk_cache_bytes": sum(c.quota for c in self.caches.values()),
            "cached_bytes": sum(c.occupancy for c in self.caches.values()),
            "tape_bytes": sum(a.stored_bytes for a in self.archives.values()),
            **{f"replicas_{state}": count for state, count in stats.replicas_by_state.items()},
        }

    def audit(self) -> list[str]:
        """Conservation checks between the ledger and the transfer and tape logs.

        Returns one message per mismatch; an empty list means every count agrees.
        """
        problems = []
        landed: dict[str, int] = {}
        for event in self.fabric.transfer_log:
            if event.landed:
                landed[event.dst] = landed.get(event.dst, 0) + event.size
        for station in self.stations:
            counted = self.metrics.total(station, Metric.DELIVERED_IN_BYTES)
            if counted != landed.get(station, 0):
                problems.append(f"{station}: delivered_in {counted} != landed transfers {landed.get(station, 0)}")
        for mss_id, archive in self.archives.items():
            for kind, metric in ((RequestKind.STORE, Metric.MSS_WRITTEN_BYTES), (RequestKind.FETCH, Metric.MSS_READ_BYTES)):
                counted = self.metrics.total(mss_id, metric)
                logged = archive.completed_bytes(kind)
                if counted != logged:
                    problems.append(f"{mss_id}: {metric.value} {counted} != completion log {logged}")
        return problems
