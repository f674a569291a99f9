"""Build a DataHandlingSystem and workload profiles from a validated scenario."""

import logging

from cache.cache_manager import CacheConfig, CacheManager
from catalog.file_catalog import DatasetPredicate, FileCatalog, Location
from catalog.replica_sync import CacheReplicaSync
from fabric.integrity import FaultProfile, crc32, synthetic_crc
from fabric.network import Fabric
from metrics.ledger import MetricsLedger
from routing.forwarder import Forwarder
from routing.route_table import RouteTable
from scenario.system import DataHandlingSystem
from simkernel.kernel import Kernel
from simkernel.rng import SplitMix64, derive_seed
from station.project import StationConfig
from station.station_server import StationServer
from storage.tape_library import TapeLibrary, TapeLibraryConfig
from workload.generator import WorkloadProfile

logger = logging.getLogger(__name__)

# seed stream tags
_FAULT_STREAM = 0xFA17


def build_system(config: dict) -> DataHandlingSystem:
    """``config`` must already have passed validate_config."""
    kernel = Kernel()
    catalog = FileCatalog()
    metrics = MetricsLedger()
    routes = RouteTable()
    faults = config["faults"]
    fault_profile = FaultProfile(faults["probability"], tuple(faults["attempt_probabilities"]))

    caches: dict[str, CacheManager] = {}
    archives: dict[str, TapeLibrary] = {}
    fabric = Fabric(
        kernel,
        catalog,
        SplitMix64(derive_seed(config["seed"], _FAULT_STREAM)),
        caches=caches,
        metrics=metrics,
        fault_profile=fault_profile,
        retry_budget=faults["retry_budget"],
    )

    for s in config["stations"]:
        routes.register(s["id"], s["domain"], s["cache_in_transit"])
        cache = s["cache"]
        caches[s["id"]] = CacheManager(
            s["id"],
            CacheConfig(int(cache["quota"]), dict(cache["groups"]), cache["mode"], cache["node_count"]),
            listener=CacheReplicaSync(catalog, s["id"]),
        )
        if s["nfs_server_bandwidth"] is not None:
            fabric.add_server_link(s["id"], s["nfs_server_bandwidth"])
    for a in config["archives"]:
        routes.register(a["id"], a["domain"])
        archives[a["id"]] = TapeLibrary(
            a["id"],
            catalog,
            TapeLibraryConfig(a["drives"], float(a["mount_latency"]), float(a["drive_rate"]), int(a["tape_capacity"])),
            metrics=metrics,
            kernel=kernel,
        )
    for link in config["links"]:
        fabric.add_link(link["a"], link["b"], link["bandwidth"], link["latency"])
    for route in config["routes"]:
        routes.add_route(route["station"], route["domain"], route["next_hop"])

    forwarder = Forwarder(routes, fabric, catalog, caches, archives, metrics)
    system = DataHandlingSystem(
        kernel=kernel,
        catalog=catalog,
        routes=routes,
        fabric=fabric,
        forwarder=forwarder,
        metrics=metrics,
        caches=caches,
        archives=archives,
        fault_profile=fault_profile,
    )
    for s in config["stations"]:
        station_config = StationConfig(
            station_id=s["id"],
            cache=caches[s["id"]].config,
            consumer_slots=s["consumer_slots"],
            delivery_mode=s["delivery_mode"],
            max_concurrent_stages=s["max_concurrent_stages"],
            domain=s["domain"],
            stream_server=s["stream_server"],
            nfs_server_bandwidth=s["nfs_server_bandwidth"],
        )
        system.stations[s["id"]] = StationServer(
            station_config, kernel, catalog, caches[s["id"]], routes, fabric, forwarder, archives, metrics
        )
    for station in system.stations.values():
        station.peers = {sid: peer for sid, peer in system.stations.items() if sid != station.station_id}

    for user in config["users"]:
        catalog.register_user(user["name"], user["group"])
    for ds in config["datasets"]:
        system.datasets[ds["name"]] = _populate_dataset(system, ds)

    logger.info(
        "built %d stations, %d archives, %d links, %d files",
        len(system.stations),
        len(archives),
        len(config["links"]),
        catalog.declared_count,
    )
    return system


def workload_profiles(config: dict) -> list[WorkloadProfile]:
    profiles = []
    for w in config["workloads"]:
        seed = w.get("seed", derive_seed(config["seed"], crc32(w["name"].encode())))
        duration = w.get("duration_days", max(0.0, config["duration_days"] - w["start_day"]))
        profiles.append(
            WorkloadProfile(
                name=w["name"],
                kind=w["kind"],
                station=w.get("station", ""),
                group=w.get("group", ""),
                dataset=w.get("dataset", ""),
                reuse_skew=w["reuse_skew"],
                arrival_rate=w["arrival_rate"],
                consumers_per_project=w["consumers_per_project"],
                think_time=w["think_time"],
                duration_days=duration,
                seed=seed,
                files_per_project=w["files_per_project"],
                diurnal_amplitude=w["diurnal_amplitude"],
                user=w["user"],
                start_day=w["start_day"],
                sources=tuple(w.get("sources", ())),
                archive=w.get("archive", ""),
                file_size=int(w.get("file_size", 0)),
                files_per_day=w.get("files_per_day", 0.0),
            )
        )
    return profiles


def _populate_dataset(system: DataHandlingSystem, ds: dict) -> str:
    catalog = system.catalog
    size = int(ds["file_size"])
    parents = []
    if ds["parent_dataset"] is not None:
        parents = catalog.resolve_dataset(system.datasets[ds["parent_dataset"]])

    names = []
    for i in range(ds["count"]):
        name = f"{ds['prefix']}{i:05d}"
        parent = frozenset([parents[i]]) if parents else frozenset()
        file_id = catalog.declare_file(name, size, synthetic_crc(name, size), ds["tier"], parents=parent)
        names.append(name)
        if ds["archive"] is not None:
            system.archives[ds["archive"]].preload(file_id)
        for station in ds["cached_at"]:
            _precache(system, station, file_id, size)
    return catalog.define_dataset(ds["name"], DatasetPredicate(names=frozenset(names)))


def _precache(system: DataHandlingSystem, station: str, file_id: str, size: int) -> None:
    cache = system.caches[station]
    shares = cache.config.group_shares
    group = min(shares, key=lambda g: (-shares[g], g))
    if cache.free < size:
        logger.debug("%s: pre-cache of %s skipped, cache full", station, file_id)
        return
    cache.admit(file_id, size, group, 0.0)
    system.catalog.add_replica(file_id, Location.station(station), node=cache.lookup(file_id).resident_node)
