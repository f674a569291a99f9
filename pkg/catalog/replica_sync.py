from catalog.file_catalog import FileCatalog, Location


class CacheReplicaSync:
    """Mirrors one station cache's pins and evictions into the catalog."""

    def __init__(self, catalog: FileCatalog, station_id: str):
        self._catalog = catalog
        self._location = Location.station(station_id)

    def pin_changed(self, file_id: str, pinned: bool) -> None:
        self._catalog.set_replica_pinned(file_id, self._location, pinned)

    def evicted(self, file_id: str) -> None:
        if self._catalog.replica(file_id, self._location) is not None:
            self._catalog.remove_replica(file_id, self._location)
