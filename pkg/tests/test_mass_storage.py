import pytest

from catalog.file_catalog import FileCatalog, Location, ReplicaState, Tier
from errors import AlreadyArchived, MassStorageError, NotArchived, UnknownFile
from metrics.ledger import Metric, MetricsLedger
from simkernel.kernel import Kernel
from storage.mass_storage import MassStorage, RequestKind
from storage.tape_library import TapeLibrary, TapeLibraryConfig

CAPACITY = 10**9


@pytest.fixture
def catalog():
    return FileCatalog()


@pytest.fixture
def library(catalog):
    return TapeLibrary("enstore", catalog)


def _declare(catalog, name, size):
    return catalog.declare_file(name, size, 0, Tier.RAW)


def test_tape_library_is_a_mass_storage(library):
    assert isinstance(library, MassStorage)


def test_config_defaults_and_validation():
    config = TapeLibraryConfig()
    assert (config.drives, config.mount_latency, config.drive_rate, config.tape_capacity) == (2, 60.0, 30e6, CAPACITY)
    with pytest.raises(MassStorageError):
        TapeLibraryConfig(drives=0)
    with pytest.raises(MassStorageError):
        TapeLibraryConfig(drive_rate=0)


# ---------------------------------------------------------------------------
# store / placement
# ---------------------------------------------------------------------------


def test_first_fit_append_placement(catalog, library):
    files = [_declare(catalog, f"f{i}", int(0.4 * CAPACITY)) for i in range(3)]
    requests = [library.store(f) for f in files]
    assert [r.tape_id for r in requests] == ["enstore-T0001", "enstore-T0001", "enstore-T0002"]
    assert library.tape_of(files[1]).offset == int(0.4 * CAPACITY)
    assert library.tapes() == {"enstore-T0001": int(0.8 * CAPACITY), "enstore-T0002": int(0.4 * CAPACITY)}


def test_store_twice(catalog, library):
    f = _declare(catalog, "f", 100)
    library.store(f)
    with pytest.raises(AlreadyArchived):
        library.store(f)


def test_store_unknown_file(library):
    with pytest.raises(UnknownFile):
        library.store("F0000099")


def test_store_larger_than_a_tape(catalog, library):
    f = _declare(catalog, "huge", CAPACITY + 1)
    with pytest.raises(MassStorageError):
        library.store(f)


def test_store_waits_for_busy_drive(catalog):
    library = TapeLibrary("enstore", catalog, TapeLibraryConfig(drives=1))
    first = library.store(_declare(catalog, "a", int(0.3 * CAPACITY)))
    second = library.store(_declare(catalog, "b", int(0.3 * CAPACITY)))
    library.drain(float("inf"))
    assert second.started_at >= first.completed_at
    assert not second.mounted


def test_store_completion_archives_and_counts(catalog):
    metrics = MetricsLedger()
    library = TapeLibrary("enstore", catalog, metrics=metrics)
    f = _declare(catalog, "f", CAPACITY)
    request = library.store(f)
    assert not library.is_archived(f)
    assert library.is_placed(f)

    assert library.drain(float("inf")) == [request]

    assert library.is_archived(f)
    assert catalog.replica(f, Location.mss("enstore")).state is ReplicaState.ARCHIVED
    assert metrics.counter(0, "enstore", Metric.MSS_WRITTEN_BYTES) == CAPACITY
    assert library.completed_bytes(RequestKind.STORE) == CAPACITY


# ---------------------------------------------------------------------------
# fetch
# ---------------------------------------------------------------------------


def test_cold_fetch_service_time(catalog, library):
    f = _declare(catalog, "f", CAPACITY)
    library.preload(f)
    request = library.fetch(f, "central")
    library.drain(float("inf"))
    assert request.mounted
    assert request.completed_at - request.started_at == pytest.approx(93.333, abs=1e-3)


def test_second_fetch_from_mounted_tape_skips_mount(catalog, library):
    a, b = _declare(catalog, "a", 1000), _declare(catalog, "b", 1000)
    library.preload(a)
    library.preload(b)
    first = library.fetch(a, "central")
    library.drain(float("inf"))
    second = library.fetch(b, "central")
    library.drain(float("inf"))
    assert first.mounted
    assert not second.mounted
    assert second.completed_at - second.started_at == pytest.approx(1000 / 30e6)


def test_fetch_virtual_file(catalog, library):
    f = _declare(catalog, "f", 100)
    with pytest.raises(NotArchived):
        library.fetch(f, "central")


def test_fetch_before_store_completes(catalog, library):
    f = _declare(catalog, "f", 100)
    library.store(f)
    with pytest.raises(NotArchived):
        library.fetch(f, "central")


def test_preload_is_silent(catalog):
    metrics = MetricsLedger()
    library = TapeLibrary("enstore", catalog, metrics=metrics)
    f = _declare(catalog, "f", 100)
    assert library.preload(f) == "enstore-T0001"
    assert library.is_archived(f)
    assert catalog.is_physical(f)
    assert metrics.is_empty()
    assert library.drain(float("inf")) == []


# ---------------------------------------------------------------------------
# drain
# ---------------------------------------------------------------------------


def test_drain_empty(library):
    assert library.drain(1e9) == []


def test_two_drives_three_cold_fetches(catalog, library):
    files = [_declare(catalog, f"f{i}", CAPACITY) for i in range(3)]
    for f in files:
        library.preload(f)
    requests = [library.fetch(f, "central") for f in files]

    completed = library.drain(float("inf"))

    service = 60 + CAPACITY / 30e6
    assert completed == requests
    assert requests[0].completed_at == pytest.approx(service)
    assert requests[1].completed_at == pytest.approx(service)
    assert requests[2].completed_at == pytest.approx(2 * service)
    assert {requests[0].drive, requests[1].drive} == {0, 1}


def test_drain_stops_at_horizon(catalog, library):
    f = _declare(catalog, "f", CAPACITY)
    library.preload(f)
    library.fetch(f, "central")
    assert library.drain(50.0) == []
    assert library.pending() == 1
    assert len(library.drain(100.0)) == 1
    assert library.pending() == 0


def test_interleaved_requests_follow_fifo_with_batching(catalog):
    library = TapeLibrary("enstore", catalog, TapeLibraryConfig(drives=1))
    size = int(0.4 * CAPACITY)
    a, b, c = (_declare(catalog, name, size) for name in "abc")
    for f in (a, b, c):
        library.preload(f)
    d = _declare(catalog, "d", size)

    fetch_a = library.fetch(a, "central")
    fetch_c = library.fetch(c, "central")
    fetch_b = library.fetch(b, "central")
    store_d = library.store(d)
    assert fetch_c.tape_id == store_d.tape_id == "enstore-T0002"

    completed = library.drain(float("inf"))

    read = size / 30e6
    assert completed == [fetch_a, fetch_b, fetch_c, store_d]
    assert [r.mounted for r in completed] == [True, False, True, False]
    assert [r.completed_at for r in completed] == pytest.approx(
        [60 + read, 60 + 2 * read, 120 + 3 * read, 120 + 4 * read]
    )


def test_completion_log_csv(catalog, library):
    f = _declare(catalog, "f", CAPACITY)
    library.preload(f)
    library.fetch(f, "central")
    library.drain(float("inf"))
    lines = library.completion_log_csv().splitlines()
    assert lines[0] == "t_complete,kind,file_id,tape_id,mounted"
    assert lines[1] == f"93.333333,fetch,{f},enstore-T0001,1"


# ---------------------------------------------------------------------------
# kernel binding
# ---------------------------------------------------------------------------


def test_library_wakes_itself_on_the_kernel(catalog):
    kernel = Kernel()
    metrics = MetricsLedger()
    library = TapeLibrary("enstore", catalog, metrics=metrics, kernel=kernel)
    f = _declare(catalog, "f", CAPACITY)
    library.preload(f)
    done = []
    kernel.run_until(1000.0)
    library.fetch(f, "central", on_complete=lambda r: done.append(kernel.now()))

    kernel.run()

    assert done == [pytest.approx(1000.0 + 93.333, abs=1e-3)]
    assert metrics.total("enstore", Metric.MSS_READ_BYTES) == CAPACITY
    assert library.completed_bytes(RequestKind.FETCH) == CAPACITY
