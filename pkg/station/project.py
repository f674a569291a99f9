"""Station-side records: configuration, projects, consumers and deliveries."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from cache.cache_manager import CacheConfig
from errors import StationError
from fabric.network import StreamHandle


class DeliveryMode(str, Enum):
    COPY_TO_CACHE = "copy_to_cache"
    NETWORK_ATTACHED = "network_attached"


class ProjectState(str, Enum):
    RUNNING = "running"
    DRAINING = "draining"
    DONE = "done"


class DeliveryHandle(str, Enum):
    LOCAL = "local"
    REMOTE_STREAM = "remote_stream"


@dataclass(frozen=True)
class StationConfig:
    station_id: str
    cache: CacheConfig
    consumer_slots: int = 8
    delivery_mode: DeliveryMode = DeliveryMode.COPY_TO_CACHE
    max_concurrent_stages: int = 4
    domain: str | None = None
    # network_attached readers stage through this station when no cached copy is reachable
    stream_server: str | None = None
    # shared server link of an nfs_shared cache, bytes/s
    nfs_server_bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.consumer_slots < 1:
            raise StationError(f"{self.station_id}: consumer_slots must be >= 1")
        if self.max_concurrent_stages < 1:
            raise StationError(f"{self.station_id}: max_concurrent_stages must be >= 1")
        object.__setattr__(self, "delivery_mode", DeliveryMode(self.delivery_mode))


@dataclass(frozen=True)
class Delivery:
    file_id: str
    size: int
    handle: DeliveryHandle
    stream: StreamHandle | None = None


class EndOfStream:
    def __repr__(self) -> str:
        return "END_OF_STREAM"


END_OF_STREAM = EndOfStream()


class DeliveryRequest:
    """Pending answer to one ``next_file`` call.

    Resolves to a Delivery or END_OF_STREAM, or fails with a StationError.
    Callbacks added after resolution run immediately.
    """

    def __init__(self, project_id: str, consumer_id: str):
        self.project_id = project_id
        self.consumer_id = consumer_id
        self.file_id: str | None = None
        self.result: Delivery | EndOfStream | None = None
        self.error: StationError | None = None
        self.resolved_at: float | None = None
        self._callbacks: list[Callable[["DeliveryRequest"], None]] = []

    @property
    def done(self) -> bool:
        return self.result is not None or self.error is not None

    @property
    def end_of_stream(self) -> bool:
        return self.result is END_OF_STREAM

    def add_callback(self, callback: Callable[["DeliveryRequest"], None]) -> None:
        if self.done:
            callback(self)
        else:
            self._callbacks.append(callback)

    def resolve(self, result: Delivery | EndOfStream, at: float) -> None:
        self.result = result
        self.resolved_at = at
        self._run_callbacks()

    def fail(self, error: StationError, at: float) -> None:
        self.error = error
        self.resolved_at = at
        self._run_callbacks()

    def _run_callbacks(self) -> None:
        callbacks, self._callbacks = self._callbacks, []
        for callback in callbacks:
            callback(self)


@dataclass(eq=False)
class Consumer:
    consumer_id: str
    holding: Delivery | None = None
    waiting: DeliveryRequest | None = None
    delivered: list[str] = field(default_factory=list)

    @property
    def idle(self) -> bool:
        return self.holding is None and self.waiting is None


@dataclass(eq=False)
class Project:
    project_id: str
    station_id: str
    dataset_id: str
    group: str
    files: list[str]
    consumers: dict[str, Consumer]
    think_time: float = 0.0
    user: str | None = None
    state: ProjectState = ProjectState.RUNNING
    started_at: float = 0.0
    finished_at: float | None = None
    cursor: int = 0
    bytes_consumed: int = 0
    bytes_delivered: int = 0
    failed: list[str] = field(default_factory=list)

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.files)

    def delivered_files(self) -> list[str]:
        return [f for c in self.consumers.values() for f in c.delivered]

    def wall_seconds(self, now: float) -> float:
        end = self.finished_at if self.finished_at is not None else now
        return end - self.started_at
