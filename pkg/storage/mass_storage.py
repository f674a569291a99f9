from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Callable


class RequestKind(str, Enum):
    STORE = "store"
    FETCH = "fetch"


@dataclass(eq=False)
class TapeRequest:
    kind: RequestKind
    file_id: str
    size: int
    tape_id: str
    enqueued_at: float
    dst_station: str | None = None
    started_at: float | None = None
    completed_at: float | None = None
    mounted: bool = False
    drive: int | None = None
    on_complete: Callable[["TapeRequest"], None] | None = None

    @property
    def done(self) -> bool:
        return self.completed_at is not None


class MassStorage(ABC):
    """
    Abstract interface for an archival store behind the stations.

    The rest of the system only depends on this interface; the tape library
    emulation is injected as the concrete implementation.
    """

    mss_id: str

    @abstractmethod
    def store(
        self, file_id: str, on_complete: Callable[[TapeRequest], None] | None = None
    ) -> TapeRequest:
        """
        Queue a write of a declared file. On completion the archived replica is
        registered in the catalog and the day's written bytes are counted.
        """
        ...

    @abstractmethod
    def fetch(
        self,
        file_id: str,
        dst_station: str,
        on_complete: Callable[[TapeRequest], None] | None = None,
    ) -> TapeRequest:
        """Queue a read of an archived file bound for ``dst_station``."""
        ...

    @abstractmethod
    def drain(self, until: float) -> list[TapeRequest]:
        """Advance the queues and return requests completed by ``until``, in order."""
        ...

    @abstractmethod
    def preload(self, file_id: str) -> str:
        """Place pre-existing archive content; no time passes and nothing is counted."""
        ...

    @abstractmethod
    def is_archived(self, file_id: str) -> bool:
        ...

    @abstractmethod
    def is_placed(self, file_id: str) -> bool:
        """True once a store is queued for the file or it was preloaded."""
        ...

    @abstractmethod
    def completion_log_csv(self) -> str:
        ...
