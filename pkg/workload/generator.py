"""Deterministic synthetic workloads.

Three usage patterns are produced:

* ``analysis``: projects pick files with Zipf(s) popularity over the dataset
  snapshot, so a small head of files is read again and again;
* ``reconstruction``: the snapshot is cut into consecutive chunks and every
  file is read exactly once;
* ``mc_import``: files produced at remote sites are imported and routed to
  the archive.

Project (or import) arrivals form a Poisson process, optionally modulated over
the day and produced by thinning. All randomness comes from a SplitMix64
generator seeded with the profile seed.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from catalog.file_catalog import FileCatalog
from errors import EmptyDataset, WorkloadError
from metrics.ledger import DAY_SECONDS
from simkernel.rng import SplitMix64
from workload.trace import TraceAction, TraceRecord, format_extra, sort_trace

logger = logging.getLogger(__name__)

# extra draws allowed per wanted file before an analysis subset is cut short
_DRAWS_PER_FILE = 50


class WorkloadKind(str, Enum):
    ANALYSIS = "analysis"
    RECONSTRUCTION = "reconstruction"
    MC_IMPORT = "mc_import"


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    kind: WorkloadKind
    station: str = ""
    group: str = ""
    dataset: str = ""
    reuse_skew: float = 0.0
    arrival_rate: float = 1.0
    consumers_per_project: int = 1
    think_time: float = 0.0
    duration_days: float = 1.0
    seed: int = 0
    files_per_project: int = 1
    diurnal_amplitude: float = 0.0
    user: str | None = None
    start_day: float = 0.0
    # mc_import
    sources: tuple[str, ...] = field(default=())
    archive: str = ""
    file_size: int = 0
    files_per_day: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", WorkloadKind(self.kind))
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.reuse_skew < 0:
            raise WorkloadError(f"{self.name}: reuse_skew must be >= 0")
        if not 0.0 <= self.diurnal_amplitude < 1.0:
            raise WorkloadError(f"{self.name}: diurnal_amplitude must be in [0, 1)")
        if self.duration_days < 0:
            raise WorkloadError(f"{self.name}: duration_days must be >= 0")
        if self.kind is WorkloadKind.MC_IMPORT:
            if not self.sources or not self.archive or self.file_size <= 0 or self.files_per_day <= 0:
                raise WorkloadError(f"{self.name}: mc_import needs sources, archive, file_size and files_per_day")
        else:
            if not self.station or not self.group or not self.dataset:
                raise WorkloadError(f"{self.name}: {self.kind.value} needs station, group and dataset")
            if self.arrival_rate <= 0 or self.files_per_project < 1 or self.consumers_per_project < 1:
                raise WorkloadError(f"{self.name}: arrival_rate, files_per_project and consumers must be positive")

    @property
    def rate_per_day(self) -> float:
        return self.files_per_day if self.kind is WorkloadKind.MC_IMPORT else self.arrival_rate


class ZipfSampler:
    """Inverse-CDF sampling of ranks 0..n-1 with weight (rank+1) ** -s."""

    def __init__(self, n: int, s: float):
        if n < 1:
            raise ValueError("Zipf population must be non-empty")
        weights = np.arange(1, n + 1, dtype=np.float64) ** -s
        self.pmf = weights / weights.sum()
        self._cdf = np.cumsum(self.pmf)
        self._cdf[-1] = 1.0

    def draw(self, rng: SplitMix64) -> int:
        return int(np.searchsorted(self._cdf, rng.random(), side="right"))


def arrival_times(profile: WorkloadProfile, rng: SplitMix64) -> list[float]:
    """Poisson arrivals over the profile window, thinned for the daily cycle."""
    base = profile.rate_per_day / DAY_SECONDS
    peak = base * (1.0 + profile.diurnal_amplitude)
    start = profile.start_day * DAY_SECONDS
    end = start + profile.duration_days * DAY_SECONDS
    times = []
    t = start
    while True:
        t += rng.expovariate(peak)
        if t >= end:
            return times
        rate = base * (1.0 + profile.diurnal_amplitude * math.sin(2 * math.pi * t / DAY_SECONDS))
        if rng.random() * peak < rate:
            times.append(round(t, 6))


def generate(profile: WorkloadProfile, catalog: FileCatalog | None = None) -> list[TraceRecord]:
    rng = SplitMix64(profile.seed)
    arrivals = arrival_times(profile, rng.spawn(1))
    picker = rng.spawn(2)

    if profile.kind is WorkloadKind.MC_IMPORT:
        records = _imports(profile, arrivals, picker)
    else:
        if catalog is None:
            raise WorkloadError(f"{profile.name}: a catalog is needed to resolve {profile.dataset!r}")
        snapshot = [
            catalog.get(f).logical_name for f in catalog.resolve_dataset(catalog.dataset_id_for(profile.dataset))
        ]
        if not snapshot:
            raise EmptyDataset(f"{profile.name}: dataset {profile.dataset!r} is empty")
        if profile.kind is WorkloadKind.ANALYSIS:
            subsets = _analysis_subsets(profile, snapshot, len(arrivals), picker)
        else:
            subsets = _reconstruction_chunks(profile, snapshot, len(arrivals))
        records = []
        for number, (t0, files) in enumerate(zip(arrivals, subsets), 1):
            records.extend(_project_records(profile, f"{profile.name}-{number:04d}", t0, files))

    logger.debug("%s: %d trace records", profile.name, len(records))
    return sort_trace(records)


def generate_all(profiles: list[WorkloadProfile], catalog: FileCatalog | None = None) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    for profile in profiles:
        records.extend(generate(profile, catalog))
    return sort_trace(records)


def _analysis_subsets(profile: WorkloadProfile, snapshot: list[str], count: int, rng: SplitMix64) -> list[list[str]]:
    sampler = ZipfSampler(len(snapshot), profile.reuse_skew)
    wanted = min(profile.files_per_project, len(snapshot))
    subsets = []
    for _ in range(count):
        picked: set[int] = set()
        draws = 0
        while len(picked) < wanted and draws < wanted * _DRAWS_PER_FILE:
            picked.add(sampler.draw(rng))
            draws += 1
        subsets.append([snapshot[i] for i in sorted(picked)])
    return subsets


def _reconstruction_chunks(profile: WorkloadProfile, snapshot: list[str], count: int) -> list[list[str]]:
    size = profile.files_per_project
    chunks = [snapshot[i : i + size] for i in range(0, len(snapshot), size)]
    return chunks[:count]


def _project_records(profile: WorkloadProfile, label: str, t0: float, files: list[str]) -> list[TraceRecord]:
    consumers = profile.consumers_per_project
    think = profile.think_time
    extra = {"group": profile.group, "consumers": consumers, "think": float(think), "files": files}
    if profile.user:
        extra["user"] = profile.user
    records = [TraceRecord(t0, TraceAction.START_PROJECT, profile.station, label, extra=format_extra(**extra))]
    # nominal schedule: round-robin assignment, zero delivery latency
    for index in range(consumers):
        consumer = f"c{index + 1}"
        for m, name in enumerate(files[index::consumers]):
            requested = round(t0 + m * think, 6)
            released = round(t0 + (m + 1) * think, 6)
            records.append(
                TraceRecord(
                    requested, TraceAction.NEXT_FILE, profile.station, label, consumer, name, format_extra(step=2 * m)
                )
            )
            records.append(
                TraceRecord(
                    released, TraceAction.RELEASE_FILE, profile.station, label, consumer, name, format_extra(step=2 * m + 1)
                )
            )
    return records


def _imports(profile: WorkloadProfile, arrivals: list[float], rng: SplitMix64) -> list[TraceRecord]:
    records = []
    for number, t in enumerate(arrivals, 1):
        source = profile.sources[rng.randrange(len(profile.sources))]
        records.append(
            TraceRecord(
                t,
                TraceAction.IMPORT_FILE,
                source,
                file=f"{profile.name}-{number:06d}",
                extra=format_extra(archive=profile.archive, size=profile.file_size),
            )
        )
    return records
