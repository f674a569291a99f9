import pytest

from catalog.bootstrap import HEADER, dump_catalog_csv, load_catalog_csv
from catalog.file_catalog import DatasetPredicate, FileCatalog, Location, ReplicaState, Tier
from catalog.replica_sync import CacheReplicaSync
from errors import (
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
from routing.route_table import RouteTable

ENSTORE = Location.mss("enstore")
GRIDKA = Location.station("gridka")


@pytest.fixture
def catalog():
    return FileCatalog()


@pytest.fixture
def f1(catalog):
    return catalog.declare_file("raw/run1/evt001", 250_000, 0x1234, Tier.RAW)


# ---------------------------------------------------------------------------
# declare_file
# ---------------------------------------------------------------------------


def test_declared_file_starts_virtual(catalog, f1):
    record = catalog.get(f1)
    assert record.logical_name == "raw/run1/evt001"
    assert record.size == 250_000
    assert record.tier is Tier.RAW
    assert catalog.replicas(f1) == []
    assert not catalog.is_physical(f1)
    assert catalog.virtual_count == 1


def test_declare_duplicate_name(catalog, f1):
    with pytest.raises(DuplicateName):
        catalog.declare_file("raw/run1/evt001", 1, 0, Tier.RAW)


def test_declare_unknown_parent(catalog):
    with pytest.raises(UnknownParent):
        catalog.declare_file("reco/evt001", 10, 0, Tier.RECONSTRUCTED, parents={"F9999999"})


def test_declare_zero_size(catalog):
    with pytest.raises(InvalidSize):
        catalog.declare_file("empty", 0, 0, Tier.RAW)


def test_parents_recorded(catalog, f1):
    child = catalog.declare_file("reco/evt001", 10, 0, "reconstructed", parents={f1})
    assert catalog.get(child).parents == frozenset({f1})
    assert catalog.get(child).tier is Tier.RECONSTRUCTED


def test_get_unknown_file(catalog):
    with pytest.raises(UnknownFile):
        catalog.get("F0000042")


def test_file_id_for_name(catalog, f1):
    assert catalog.file_id_for("raw/run1/evt001") == f1
    with pytest.raises(UnknownFile):
        catalog.file_id_for("nope")


# ---------------------------------------------------------------------------
# replicas
# ---------------------------------------------------------------------------


def test_first_archived_replica_makes_file_physical(catalog, f1):
    replica = catalog.add_replica(f1, ENSTORE)
    assert replica.state is ReplicaState.ARCHIVED
    assert catalog.is_physical(f1)


def test_second_replica(catalog, f1):
    catalog.add_replica(f1, ENSTORE)
    catalog.add_replica(f1, GRIDKA)
    assert len(catalog.replicas(f1)) == 2
    assert catalog.replica(f1, GRIDKA).state is ReplicaState.CACHED


def test_duplicate_replica(catalog, f1):
    catalog.add_replica(f1, ENSTORE)
    with pytest.raises(DuplicateReplica):
        catalog.add_replica(f1, ENSTORE)


def test_remove_cached_replica_keeps_archived_copy_physical(catalog, f1):
    catalog.add_replica(f1, ENSTORE)
    catalog.add_replica(f1, GRIDKA)
    catalog.remove_replica(f1, GRIDKA)
    assert catalog.is_physical(f1)


def test_remove_only_replica_makes_file_virtual(catalog, f1):
    catalog.add_replica(f1, GRIDKA)
    catalog.remove_replica(f1, GRIDKA)
    assert not catalog.is_physical(f1)


def test_remove_pinned_replica(catalog, f1):
    catalog.add_replica(f1, GRIDKA, ReplicaState.PINNED_CACHED)
    with pytest.raises(ReplicaPinned):
        catalog.remove_replica(f1, GRIDKA)


def test_remove_missing_replica(catalog, f1):
    with pytest.raises(UnknownReplica):
        catalog.remove_replica(f1, GRIDKA)


def test_staging_replica_is_not_physical_until_promoted(catalog, f1):
    catalog.add_replica(f1, GRIDKA, ReplicaState.STAGING)
    assert not catalog.is_physical(f1)
    catalog.promote_replica(f1, GRIDKA, pinned=True)
    assert catalog.replica(f1, GRIDKA).state is ReplicaState.PINNED_CACHED
    assert catalog.is_physical(f1)


def test_set_replica_pinned_ignores_archived(catalog, f1):
    catalog.add_replica(f1, ENSTORE)
    catalog.set_replica_pinned(f1, ENSTORE, True)
    assert catalog.replica(f1, ENSTORE).state is ReplicaState.ARCHIVED


def test_partition_property_over_mixed_operations(catalog):
    ids = [catalog.declare_file(f"f{i}", 10, i, Tier.SECONDARY) for i in range(20)]
    for i, file_id in enumerate(ids):
        if i % 2 == 0:
            catalog.add_replica(file_id, ENSTORE)
        if i % 3 == 0:
            catalog.add_replica(file_id, GRIDKA)
        if i % 6 == 0:
            catalog.remove_replica(file_id, GRIDKA)
        assert catalog.physical_count + catalog.virtual_count == catalog.declared_count


def test_location_parse():
    assert Location.parse("mss:enstore") == ENSTORE
    assert str(GRIDKA) == "station:gridka"
    with pytest.raises(ValueError):
        Location.parse("enstore")


# ---------------------------------------------------------------------------
# locate
# ---------------------------------------------------------------------------


def test_locate_prefers_local_copy(catalog, f1):
    catalog.add_replica(f1, ENSTORE)
    catalog.add_replica(f1, Location.station("central"))
    assert [r.location for r in catalog.locate(f1, "central")] == [Location.station("central"), ENSTORE]


def test_locate_ranks_remote_station_before_mss(catalog, f1):
    routes = RouteTable()
    routes.register("gridka", "de")
    routes.register("central", "fnal")
    routes.register("farm", "fnal")
    routes.register("enstore", "fnal")
    routes.add_route("gridka", "fnal", "central")
    catalog.add_replica(f1, ENSTORE)
    catalog.add_replica(f1, GRIDKA)

    located = catalog.locate(f1, "farm", routes)

    assert routes.hop_count("gridka", "farm") == 2
    assert [r.location for r in located] == [GRIDKA, ENSTORE]


def test_locate_skips_unreachable_replica(catalog, f1):
    routes = RouteTable()
    routes.register("gridka", "de")
    routes.register("central", "fnal")
    catalog.add_replica(f1, GRIDKA)
    with pytest.raises(NoReplica):
        catalog.locate(f1, "central", routes)


def test_locate_virtual_file(catalog, f1):
    with pytest.raises(NoReplica):
        catalog.locate(f1, "central")


def test_locate_ignores_staging(catalog, f1):
    catalog.add_replica(f1, GRIDKA, ReplicaState.STAGING)
    catalog.add_replica(f1, ENSTORE)
    assert [r.location for r in catalog.locate(f1, "gridka")] == [ENSTORE]


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def test_dataset_tier_filter(catalog):
    raw = catalog.declare_file("raw1", 10, 0, Tier.RAW)
    catalog.declare_file("mc1", 10, 0, Tier.MONTECARLO)
    ds = catalog.define_dataset("raws", DatasetPredicate(tiers=frozenset({Tier.RAW})))
    assert catalog.resolve_dataset(ds) == [raw]


def test_dataset_empty_match(catalog, f1):
    ds = catalog.define_dataset("none", DatasetPredicate(name_glob="mc/*"))
    assert catalog.resolve_dataset(ds) == []


def test_dataset_resolution_is_stable(catalog):
    for i in range(10):
        catalog.declare_file(f"thumb/{9 - i}", 10, 0, Tier.SECONDARY)
    ds = catalog.define_dataset("thumbs", DatasetPredicate(name_glob="thumb/*"))
    first = catalog.resolve_dataset(ds)
    assert first == catalog.resolve_dataset(ds)
    assert [catalog.get(f).logical_name for f in first] == [f"thumb/{i}" for i in range(10)]


def test_dataset_orders_by_declaration_time(catalog):
    late = catalog.declare_file("a", 10, 0, Tier.RAW, declared_at=5.0)
    early = catalog.declare_file("b", 10, 0, Tier.RAW, declared_at=1.0)
    ds = catalog.define_dataset("all", DatasetPredicate())
    assert catalog.resolve_dataset(ds) == [early, late]


def test_dataset_names_and_parent_clauses(catalog, f1):
    child = catalog.declare_file("reco/1", 10, 0, Tier.RECONSTRUCTED, parents={f1})
    catalog.declare_file("reco/2", 10, 0, Tier.RECONSTRUCTED)
    by_parent = catalog.define_dataset("children", DatasetPredicate(parents_any=frozenset({f1})))
    by_name = catalog.define_dataset("picked", DatasetPredicate(names=frozenset({"reco/1", "missing"})))
    assert catalog.resolve_dataset(by_parent) == [child]
    assert catalog.resolve_dataset(by_name) == [child]


def test_dataset_declared_window_is_half_open(catalog):
    a = catalog.declare_file("a", 10, 0, Tier.RAW, declared_at=1.0)
    catalog.declare_file("b", 10, 0, Tier.RAW, declared_at=2.0)
    ds = catalog.define_dataset("window", DatasetPredicate(declared_from=1.0, declared_until=2.0))
    assert catalog.resolve_dataset(ds) == [a]


def test_dataset_duplicate_and_unknown(catalog):
    catalog.define_dataset("x", DatasetPredicate())
    with pytest.raises(DuplicateName):
        catalog.define_dataset("x", DatasetPredicate())
    with pytest.raises(UnknownDataset):
        catalog.resolve_dataset("D99999")
    assert catalog.has_dataset_name("x")
    assert [d.name for d in catalog.datasets()] == ["x"]


# ---------------------------------------------------------------------------
# users / statistics
# ---------------------------------------------------------------------------


def test_register_user(catalog):
    catalog.register_user("alice", "analysis")
    assert catalog.user_group("alice") == "analysis"
    assert catalog.users() == {"alice": "analysis"}
    with pytest.raises(DuplicateName):
        catalog.register_user("alice", "mc")
    with pytest.raises(UnknownUser):
        catalog.user_group("bob")


def test_statistics(catalog, f1):
    catalog.declare_file("virtual", 10, 0, Tier.RAW)
    catalog.add_replica(f1, ENSTORE)
    catalog.add_replica(f1, GRIDKA, ReplicaState.PINNED_CACHED)
    catalog.register_user("alice", "analysis")

    stats = catalog.statistics()

    assert (stats.users, stats.declared, stats.physical, stats.virtual) == (1, 2, 1, 1)
    assert stats.replicas_by_state == {"staging": 0, "cached": 0, "pinned_cached": 1, "archived": 1}


# ---------------------------------------------------------------------------
# bootstrap CSV
# ---------------------------------------------------------------------------

_BOOTSTRAP = (
    "logical_name,size,crc_hex,tier,parent_names\n"
    "raw/1,250000,cbf43926,raw,\n"
    "# comment\n"
    "\n"
    "reco/1,100000,0x0000abcd,reconstructed,raw/1\n"
)


def test_load_catalog_csv_from_text(catalog):
    ids = load_catalog_csv(catalog, _BOOTSTRAP)
    assert len(ids) == 2
    raw, reco = (catalog.get(i) for i in ids)
    assert raw.crc == 0xCBF43926
    assert reco.parents == frozenset({ids[0]})
    assert reco.crc == 0xABCD


def test_load_catalog_csv_from_path(catalog, tmp_path):
    path = tmp_path / "catalog.csv"
    path.write_text(_BOOTSTRAP)
    assert len(load_catalog_csv(catalog, path)) == 2


def test_load_catalog_csv_parent_must_come_first(catalog):
    text = "reco/1,10,0,reconstructed,raw/1\nraw/1,10,0,raw,\n"
    with pytest.raises(UnknownParent):
        load_catalog_csv(catalog, text)


def test_load_catalog_csv_wrong_field_count(catalog):
    with pytest.raises(ValueError):
        load_catalog_csv(catalog, "raw/1,10,0\n")


def test_dump_catalog_csv_reloads(catalog):
    load_catalog_csv(catalog, _BOOTSTRAP)
    dumped = dump_catalog_csv(catalog)
    assert dumped.splitlines()[0] == ",".join(HEADER)

    other = FileCatalog()
    load_catalog_csv(other, dumped)
    assert dump_catalog_csv(other) == dumped


# ---------------------------------------------------------------------------
# cache listener
# ---------------------------------------------------------------------------


def test_replica_sync_mirrors_pins_and_evictions(catalog, f1):
    catalog.add_replica(f1, GRIDKA)
    sync = CacheReplicaSync(catalog, "gridka")

    sync.pin_changed(f1, True)
    assert catalog.replica(f1, GRIDKA).state is ReplicaState.PINNED_CACHED
    sync.pin_changed(f1, False)
    sync.evicted(f1)

    assert catalog.replica(f1, GRIDKA) is None
    sync.evicted(f1)
