"""Station disk cache: byte quota, group fair-share, pins and eviction.

Victim selection when space is short: among groups that still have an
unpinned entry, take the group furthest above its share (largest
``occupancy - quota * share``, ties by group name), and from it the least
recently accessed entry (ties by file id). Groups may borrow idle share;
eviction only starts once the whole quota is used.
"""

import csv
import io
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Protocol

from cache.placement import rendezvous_node
from errors import AlreadyCached, CacheError, NotCached, PinUnderflow, TooLarge, UnknownGroup

logger = logging.getLogger(__name__)

_SHARE_TOLERANCE = 1e-9


class CacheMode(str, Enum):
    DISTRIBUTED = "distributed"
    NFS_SHARED = "nfs_shared"


@dataclass(frozen=True)
class CacheConfig:
    quota: int
    group_shares: dict[str, float]
    mode: CacheMode = CacheMode.DISTRIBUTED
    node_count: int = 1

    def __post_init__(self) -> None:
        if self.quota <= 0:
            raise CacheError(f"cache quota must be > 0, got {self.quota}")
        if self.node_count < 1:
            raise CacheError(f"node_count must be >= 1, got {self.node_count}")
        if not self.group_shares:
            raise CacheError("at least one group share is required")
        if any(share <= 0 for share in self.group_shares.values()):
            raise CacheError(f"group shares must be > 0: {self.group_shares}")
        total = sum(self.group_shares.values())
        if abs(total - 1.0) > _SHARE_TOLERANCE:
            raise CacheError(f"group shares sum to {total}, expected 1.0")
        object.__setattr__(self, "mode", CacheMode(self.mode))


@dataclass
class CacheEntry:
    file_id: str
    size: int
    group: str
    last_access: float
    pin_count: int = 0
    resident_node: str = ""


@dataclass(frozen=True)
class AdmitResult:
    admitted: bool
    evicted: tuple[str, ...] = ()

    @property
    def rejected(self) -> bool:
        return not self.admitted


REJECTED = AdmitResult(admitted=False)


class CacheListener(Protocol):
    def pin_changed(self, file_id: str, pinned: bool) -> None: ...

    def evicted(self, file_id: str) -> None: ...


class CacheManager:
    def __init__(self, station_id: str, config: CacheConfig, listener: CacheListener | None = None):
        self.station_id = station_id
        self.config = config
        self.listener = listener
        if config.mode is CacheMode.NFS_SHARED:
            # one logical volume behind the shared server
            self.nodes = [f"{station_id}-nfs"]
        else:
            self.nodes = [f"{station_id}-n{i:02d}" for i in range(config.node_count)]
        self._entries: dict[str, CacheEntry] = {}
        self._group_bytes: dict[str, int] = {g: 0 for g in config.group_shares}
        self._used = 0

    @property
    def quota(self) -> int:
        return self.config.quota

    @property
    def occupancy(self) -> int:
        return self._used

    @property
    def free(self) -> int:
        return self.config.quota - self._used

    def group_occupancy(self, group: str) -> int:
        return self._group_bytes.get(group, 0)

    def __contains__(self, file_id: str) -> bool:
        return file_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    # ------------------------------------------------------------------
    # operations
    # ------------------------------------------------------------------

    def admit(self, file_id: str, size: int, group: str, now: float) -> AdmitResult:
        if file_id in self._entries:
            raise AlreadyCached(f"{file_id} already cached at {self.station_id}")
        if group not in self.config.group_shares:
            raise UnknownGroup(f"group {group!r} has no share at {self.station_id}")
        if size > self.config.quota:
            raise TooLarge(f"{file_id}: {size} B exceeds quota {self.config.quota} B")

        victims = self.plan_eviction(size)
        if victims is None:
            logger.debug("%s: admit %s rejected, nothing evictable", self.station_id, file_id)
            return REJECTED

        for victim in victims:
            self._drop(victim)
        self._entries[file_id] = CacheEntry(
            file_id=file_id,
            size=size,
            group=group,
            last_access=now,
            resident_node=rendezvous_node(file_id, self.nodes),
        )
        self._group_bytes[group] += size
        self._used += size

        if victims:
            logger.debug("%s: admit %s evicted %s", self.station_id, file_id, victims)
            if self.listener is not None:
                for victim in victims:
                    self.listener.evicted(victim)
        return AdmitResult(admitted=True, evicted=tuple(victims))

    def plan_eviction(self, size: int) -> list[str] | None:
        """Victims that would make room for ``size`` bytes, or None if impossible.

        Pure: the cache is not modified.
        """
        free = self.free
        if free >= size:
            return []
        occupancy = dict(self._group_bytes)
        candidates: dict[str, list[CacheEntry]] = {}
        for entry in self._entries.values():
            if entry.pin_count == 0:
                candidates.setdefault(entry.group, []).append(entry)
        for entries in candidates.values():
            # popped from the end: least recent last
            entries.sort(key=lambda e: (e.last_access, e.file_id), reverse=True)

        victims: list[str] = []
        quota = self.config.quota
        shares = self.config.group_shares
        while free < size:
            groups = [g for g, entries in candidates.items() if entries]
            if not groups:
                return None
            group = min(groups, key=lambda g: (-(occupancy[g] - quota * shares[g]), g))
            victim = candidates[group].pop()
            victims.append(victim.file_id)
            occupancy[group] -= victim.size
            free += victim.size
        return victims

    def set_pin(self, file_id: str, delta: int) -> int:
        entry = self._entry(file_id)
        if delta not in (1, -1):
            raise ValueError(f"pin delta must be +1 or -1, got {delta}")
        if entry.pin_count + delta < 0:
            raise PinUnderflow(f"{file_id} is not pinned at {self.station_id}")
        entry.pin_count += delta
        if self.listener is not None and (entry.pin_count == 0 or (delta == 1 and entry.pin_count == 1)):
            self.listener.pin_changed(file_id, entry.pin_count > 0)
        return entry.pin_count

    def touch(self, file_id: str, now: float) -> None:
        self._entry(file_id).last_access = now

    def lookup(self, file_id: str) -> CacheEntry | None:
        entry = self._entries.get(file_id)
        return replace(entry) if entry is not None else None

    def discard(self, file_id: str) -> None:
        """Remove an unpinned entry without an eviction notice (aborted stage)."""
        entry = self._entry(file_id)
        if entry.pin_count:
            raise CacheError(f"{file_id} is pinned at {self.station_id}")
        self._drop(file_id)

    def entries(self) -> list[CacheEntry]:
        return [replace(e) for _, e in sorted(self._entries.items())]

    def dump_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["file_id", "size", "group", "last_access", "pin_count", "node"])
        for entry in self.entries():
            writer.writerow(
                [entry.file_id, entry.size, entry.group, f"{entry.last_access:.6f}", entry.pin_count, entry.resident_node]
            )
        return out.getvalue()

    # ------------------------------------------------------------------
    # internal helpers
    # ------------------------------------------------------------------

    def _entry(self, file_id: str) -> CacheEntry:
        try:
            return self._entries[file_id]
        except KeyError:
            raise NotCached(f"{file_id} not cached at {self.station_id}") from None

    def _drop(self, file_id: str) -> None:
        entry = self._entries.pop(file_id)
        self._group_bytes[entry.group] -= entry.size
        self._used -= entry.size
