"""Exception hierarchy for the data-handling system.

Every error raised by the library derives from DataHandlingError so the CLI
can catch one type at the command boundary.
"""


class DataHandlingError(Exception):
    """Root of all library errors."""


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

class CatalogError(DataHandlingError):
    pass


class DuplicateName(CatalogError):
    pass


class UnknownParent(CatalogError):
    pass


class InvalidSize(CatalogError):
    pass


class UnknownFile(CatalogError):
    pass


class DuplicateReplica(CatalogError):
    pass


class UnknownReplica(CatalogError):
    pass


class ReplicaPinned(CatalogError):
    pass


class UnknownDataset(CatalogError):
    pass


class NoReplica(CatalogError):
    pass


class UnknownUser(CatalogError):
    pass


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

class CacheError(DataHandlingError):
    pass


class AlreadyCached(CacheError):
    pass


class TooLarge(CacheError):
    pass


class NotCached(CacheError):
    pass


class PinUnderflow(CacheError):
    pass


class UnknownGroup(CacheError):
    pass


# ---------------------------------------------------------------------------
# station
# ---------------------------------------------------------------------------

class StationError(DataHandlingError):
    pass


class UnknownProject(StationError):
    pass


class UnknownConsumer(StationError):
    pass


class TooManyConsumers(StationError):
    pass


class ConsumerBusy(StationError):
    pass


class NotHeld(StationError):
    pass


class StageFailed(StationError):
    pass


# ---------------------------------------------------------------------------
# routing / fabric / mass storage
# ---------------------------------------------------------------------------

class RoutingError(DataHandlingError):
    pass


class UnknownStation(RoutingError):
    pass


class WouldCreateLoop(RoutingError):
    pass


class NoRoute(RoutingError):
    pass


class FabricError(DataHandlingError):
    pass


class NoLink(FabricError):
    pass


class MassStorageError(DataHandlingError):
    pass


class AlreadyArchived(MassStorageError):
    pass


class NotArchived(MassStorageError):
    pass


# ---------------------------------------------------------------------------
# kernel / metrics / workload / config
# ---------------------------------------------------------------------------

class SimulationError(DataHandlingError):
    pass


class NegativeDelay(SimulationError):
    pass


class MetricsError(DataHandlingError):
    pass


class NegativeAmount(MetricsError):
    pass


class WorkloadError(DataHandlingError):
    pass


class EmptyDataset(WorkloadError):
    pass


class UnknownEntity(WorkloadError):
    def __init__(self, index: int, message: str):
        super().__init__(f"trace record {index}: {message}")
        self.index = index


class ConfigError(DataHandlingError):
    pass


class ConfigInvalid(ConfigError):
    """Raised with every problem found; each problem is (field path, message)."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        first = problems[0] if problems else ("", "invalid configuration")
        suffix = f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""
        super().__init__(f"{first[0] or '<root>'}: {first[1]}{suffix}")

    def to_dict(self) -> dict:
        return {
            "error": "ConfigInvalid",
            "problems": [{"path": path, "message": msg} for path, msg in self.problems],
        }
