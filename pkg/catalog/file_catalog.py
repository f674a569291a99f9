"""Authoritative metadata store: files, replicas, datasets and users.

A file is *physical* while at least one replica is cached, pinned or
archived; a declared file with no such replica is *virtual* (typically a
provenance-only parent that was never materialised).
"""

import fnmatch
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from errors import (
    CatalogError,
    DuplicateName,
    DuplicateReplica,
    InvalidSize,
    NoReplica,
    ReplicaPinned,
    UnknownDataset,
    UnknownFile,
    UnknownParent,
    UnknownReplica,
    UnknownUser,
)

if TYPE_CHECKING:
    from routing.route_table import RouteTable

logger = logging.getLogger(__name__)


class Tier(str, Enum):
    RAW = "raw"
    RECONSTRUCTED = "reconstructed"
    SECONDARY = "secondary"
    MONTECARLO = "montecarlo"


class ReplicaState(str, Enum):
    STAGING = "staging"
    CACHED = "cached"
    PINNED_CACHED = "pinned_cached"
    ARCHIVED = "archived"


_USABLE = (ReplicaState.CACHED, ReplicaState.PINNED_CACHED, ReplicaState.ARCHIVED)


class LocationKind(str, Enum):
    STATION = "station"
    MSS = "mss"


@dataclass(frozen=True, order=True)
class Location:
    kind: LocationKind
    site: str

    @classmethod
    def station(cls, site: str) -> "Location":
        return cls(LocationKind.STATION, site)

    @classmethod
    def mss(cls, site: str) -> "Location":
        return cls(LocationKind.MSS, site)

    @classmethod
    def parse(cls, text: str) -> "Location":
        kind, _, site = text.partition(":")
        if not site:
            raise ValueError(f"location {text!r} must look like 'station:<id>' or 'mss:<id>'")
        return cls(LocationKind(kind), site)

    @property
    def key(self) -> str:
        return f"{self.kind.value}:{self.site}"

    @property
    def is_station(self) -> bool:
        return self.kind is LocationKind.STATION

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class FileRecord:
    file_id: str
    logical_name: str
    size: int
    crc: int
    tier: Tier
    parents: frozenset[str] = frozenset()
    declared_at: float = 0.0


@dataclass
class Replica:
    file_id: str
    location: Location
    state: ReplicaState
    node: str | None = None


@dataclass(frozen=True)
class DatasetPredicate:
    """Conjunction of optional clauses; an empty predicate matches every file.

    ``declared_until`` is exclusive. ``parents_any`` matches files with at
    least one parent in the set.
    """

    tiers: frozenset[Tier] | None = None
    name_glob: str | None = None
    declared_from: float | None = None
    declared_until: float | None = None
    parents_any: frozenset[str] | None = None
    names: frozenset[str] | None = None

    def matches(self, record: FileRecord) -> bool:
        if self.tiers is not None and record.tier not in self.tiers:
            return False
        if self.name_glob is not None and not fnmatch.fnmatchcase(record.logical_name, self.name_glob):
            return False
        if self.declared_from is not None and record.declared_at < self.declared_from:
            return False
        if self.declared_until is not None and record.declared_at >= self.declared_until:
            return False
        if self.parents_any is not None and not (record.parents & self.parents_any):
            return False
        if self.names is not None and record.logical_name not in self.names:
            return False
        return True


@dataclass(frozen=True)
class DatasetDef:
    dataset_id: str
    name: str
    predicate: DatasetPredicate


@dataclass
class CatalogStatistics:
    users: int
    declared: int
    physical: int
    virtual: int
    replicas_by_state: dict[str, int] = field(default_factory=dict)


class FileCatalog:
    def __init__(self) -> None:
        self._files: dict[str, FileRecord] = {}
        self._by_name: dict[str, str] = {}
        self._replicas: dict[str, dict[Location, Replica]] = {}
        self._physical: set[str] = set()
        self._datasets: dict[str, DatasetDef] = {}
        self._dataset_names: dict[str, str] = {}
        self._users: dict[str, str] = {}
        self._file_seq = 0
        self._dataset_seq = 0

    # ------------------------------------------------------------------
    # files
    # ------------------------------------------------------------------

    def declare_file(
        self,
        logical_name: str,
        size: int,
        crc: int,
        tier: Tier | str,
        parents: frozenset[str] | set[str] | tuple[str, ...] = (),
        declared_at: float = 0.0,
    ) -> str:
        if not logical_name:
            raise CatalogError("logical_name must be non-empty")
        if logical_name in self._by_name:
            raise DuplicateName(f"logical name {logical_name!r} already declared")
        if size <= 0:
            raise InvalidSize(f"{logical_name}: size must be > 0, got {size}")
        missing = [p for p in parents if p not in self._files]
        if missing:
            raise UnknownParent(f"{logical_name}: unknown parent(s) {sorted(missing)}")

        self._file_seq += 1
        file_id = f"F{self._file_seq:07d}"
        self._files[file_id] = FileRecord(
            file_id=file_id,
            logical_name=logical_name,
            size=int(size),
            crc=crc,
            tier=Tier(tier),
            parents=frozenset(parents),
            declared_at=declared_at,
        )
        self._by_name[logical_name] = file_id
        self._replicas[file_id] = {}
        return file_id

    def get(self, file_id: str) -> FileRecord:
        try:
            return self._files[file_id]
        except KeyError:
            raise UnknownFile(f"unknown file {file_id!r}") from None

    def file_id_for(self, logical_name: str) -> str:
        try:
            return self._by_name[logical_name]
        except KeyError:
            raise UnknownFile(f"unknown logical name {logical_name!r}") from None

    def has_name(self, logical_name: str) -> bool:
        return logical_name in self._by_name

    def files(self) -> list[FileRecord]:
        """All files in declaration order."""
        return list(self._files.values())

    def is_physical(self, file_id: str) -> bool:
        self.get(file_id)
        return file_id in self._physical

    # ------------------------------------------------------------------
    # replicas
    # ------------------------------------------------------------------

    def add_replica(
        self,
        file_id: str,
        location: Location,
        state: ReplicaState | None = None,
        node: str | None = None,
    ) -> Replica:
        replicas = self._replicas_of(file_id)
        if location in replicas:
            raise DuplicateReplica(f"{file_id} already has a replica at {location}")
        if state is None:
            state = ReplicaState.CACHED if location.is_station else ReplicaState.ARCHIVED
        replica = Replica(file_id, location, state, node)
        replicas[location] = replica
        self._refresh(file_id)
        return replica

    def remove_replica(self, file_id: str, location: Location) -> None:
        replicas = self._replicas.get(file_id, {})
        replica = replicas.get(location)
        if replica is None:
            raise UnknownReplica(f"{file_id} has no replica at {location}")
        if replica.state is ReplicaState.PINNED_CACHED:
            raise ReplicaPinned(f"{file_id} is pinned at {location}")
        del replicas[location]
        self._refresh(file_id)

    def replica(self, file_id: str, location: Location) -> Replica | None:
        return self._replicas_of(file_id).get(location)

    def replicas(self, file_id: str) -> list[Replica]:
        return sorted(self._replicas_of(file_id).values(), key=lambda r: r.location.key)

    def set_replica_pinned(self, file_id: str, location: Location, pinned: bool) -> None:
        """Mirror a cache pin; staging and archived replicas are left alone."""
        replica = self._replicas_of(file_id).get(location)
        if replica is None or replica.state not in (ReplicaState.CACHED, ReplicaState.PINNED_CACHED):
            return
        replica.state = ReplicaState.PINNED_CACHED if pinned else ReplicaState.CACHED

    def promote_replica(self, file_id: str, location: Location, pinned: bool = False) -> Replica:
        """Complete a staging replica once its data has arrived."""
        replica = self._replicas_of(file_id).get(location)
        if replica is None:
            raise UnknownReplica(f"{file_id} has no replica at {location}")
        replica.state = ReplicaState.PINNED_CACHED if pinned else ReplicaState.CACHED
        self._refresh(file_id)
        return replica

    def locate(
        self,
        file_id: str,
        requesting_station: str,
        routes: "RouteTable | None" = None,
    ) -> list[Replica]:
        """Usable replicas, cheapest first.

        Cost is the local cache, then remote station caches by route hop
        count toward the requester, then mass storage; ties go to the
        lexicographically smaller location id. With a route table, replicas
        that cannot reach the requester are left out.
        """
        usable = [r for r in self._replicas_of(file_id).values() if r.state in _USABLE]
        if not usable:
            raise NoReplica(f"{file_id} is virtual (no replica)")

        ranked: list[tuple[int, int, str, Replica]] = []
        for replica in usable:
            site = replica.location.site
            if replica.location.is_station and site == requesting_station:
                ranked.append((0, 0, replica.location.key, replica))
                continue
            hops = 1
            if routes is not None:
                found = routes.hop_count(site, requesting_station)
                if found is None:
                    continue
                hops = found
            band = 0 if replica.location.is_station else 1
            ranked.append((band, hops, replica.location.key, replica))

        if not ranked:
            raise NoReplica(f"{file_id}: no replica can reach station {requesting_station!r}")
        ranked.sort(key=lambda item: item[:3])
        return [item[3] for item in ranked]

    # ------------------------------------------------------------------
    # datasets
    # ------------------------------------------------------------------

    def define_dataset(self, name: str, predicate: DatasetPredicate) -> str:
        if name in self._dataset_names:
            raise DuplicateName(f"dataset {name!r} already defined")
        self._dataset_seq += 1
        dataset_id = f"D{self._dataset_seq:05d}"
        self._datasets[dataset_id] = DatasetDef(dataset_id, name, predicate)
        self._dataset_names[name] = dataset_id
        return dataset_id

    def dataset(self, dataset_id: str) -> DatasetDef:
        try:
            return self._datasets[dataset_id]
        except KeyError:
            raise UnknownDataset(f"unknown dataset {dataset_id!r}") from None

    def dataset_id_for(self, name: str) -> str:
        try:
            return self._dataset_names[name]
        except KeyError:
            raise UnknownDataset(f"unknown dataset name {name!r}") from None

    def has_dataset_name(self, name: str) -> bool:
        return name in self._dataset_names

    def datasets(self) -> list[DatasetDef]:
        return list(self._datasets.values())

    def resolve_dataset(self, dataset_id: str) -> list[str]:
        predicate = self.dataset(dataset_id).predicate
        if predicate.names is not None:
            candidates = [self._files[self._by_name[n]] for n in predicate.names if n in self._by_name]
        else:
            candidates = list(self._files.values())
        matched = [r for r in candidates if predicate.matches(r)]
        matched.sort(key=lambda r: (r.declared_at, r.logical_name))
        return [r.file_id for r in matched]

    # ------------------------------------------------------------------
    # users
    # ------------------------------------------------------------------

    def register_user(self, name: str, group: str) -> None:
        if name in self._users:
            raise DuplicateName(f"user {name!r} already registered")
        self._users[name] = group

    def user_group(self, name: str) -> str:
        try:
            return self._users[name]
        except KeyError:
            raise UnknownUser(f"unknown user {name!r}") from None

    def users(self) -> dict[str, str]:
        return dict(self._users)

    # ------------------------------------------------------------------
    # counters
    # ------------------------------------------------------------------

    @property
    def declared_count(self) -> int:
        return len(self._files)

    @property
    def physical_count(self) -> int:
        return len(self._physical)

    @property
    def virtual_count(self) -> int:
        return len(self._files) - len(self._physical)

    def statistics(self) -> CatalogStatistics:
        by_state = {state.value: 0 for state in ReplicaState}
        for replicas in self._replicas.values():
            for replica in replicas.values():
                by_state[replica.state.value] += 1
        return CatalogStatistics(
            users=len(self._users),
            declared=self.declared_count,
            physical=self.physical_count,
            virtual=self.virtual_count,
            replicas_by_state=by_state,
        )

    # ------------------------------------------------------------------
    # internal helpers
    # ------------------------------------------------------------------

    def _replicas_of(self, file_id: str) -> dict[Location, Replica]:
        try:
            return self._replicas[file_id]
        except KeyError:
            raise UnknownFile(f"unknown file {file_id!r}") from None

    def _refresh(self, file_id: str) -> None:
        if any(r.state in _USABLE for r in self._replicas[file_id].values()):
            self._physical.add(file_id)
        else:
            self._physical.discard(file_id)
