import math
import random

import pytest

from catalog.file_catalog import DatasetPredicate, FileCatalog, Location, Tier
from config import validate_config
from errors import EmptyDataset, UnknownEntity, WorkloadError
from metrics.ledger import DAY_SECONDS, Metric
from metrics.report import MetricsReport
from scenario.builder import build_system, workload_profiles
from simkernel.rng import SplitMix64
from station.project import ProjectState
from workload.generator import WorkloadProfile, ZipfSampler, arrival_times, generate, generate_all
from workload.replay import TraceReplayer, replay
from workload.trace import (
    TRACE_HEADER,
    TraceAction,
    TraceRecord,
    format_extra,
    parse_extra,
    read_trace_csv,
    sort_trace,
    trace_to_csv,
    write_trace_csv,
)


def _catalog(count: int, name: str = "thumbs") -> FileCatalog:
    catalog = FileCatalog()
    names = [f"{name}-{i:03d}" for i in range(count)]
    for n in names:
        catalog.declare_file(n, 100, 0, Tier.SECONDARY)
    catalog.define_dataset(name, DatasetPredicate(names=frozenset(names)))
    return catalog


def _profile(**overrides) -> WorkloadProfile:
    options = dict(
        name="physics",
        kind="analysis",
        station="central",
        group="analysis",
        dataset="thumbs",
        reuse_skew=0.8,
        arrival_rate=20,
        consumers_per_project=2,
        think_time=60,
        duration_days=3,
        seed=11,
        files_per_project=4,
    )
    options.update(overrides)
    return WorkloadProfile(**options)


def _by_action(records, action):
    return [r for r in records if r.action is action]


# ---------------------------------------------------------------------------
# profiles and sampling
# ---------------------------------------------------------------------------


def test_profile_validation():
    with pytest.raises(WorkloadError):
        _profile(reuse_skew=-1)
    with pytest.raises(WorkloadError):
        _profile(diurnal_amplitude=1.0)
    with pytest.raises(WorkloadError):
        _profile(dataset="")
    with pytest.raises(WorkloadError):
        WorkloadProfile(name="mc", kind="mc_import", sources=("lancaster",))
    with pytest.raises(ValueError):
        _profile(kind="bogus")


def test_zipf_pmf():
    sampler = ZipfSampler(3, 1.0)
    total = 1 + 1 / 2 + 1 / 3
    assert list(sampler.pmf) == pytest.approx([1 / total, 0.5 / total, (1 / 3) / total])


def test_zipf_with_zero_skew_is_uniform():
    sampler = ZipfSampler(10, 0.0)
    rng = SplitMix64(5)
    draws = 100_000
    counts = [0] * 10
    for _ in range(draws):
        counts[sampler.draw(rng)] += 1
    expected = draws / 10
    sigma = math.sqrt(draws * 0.1 * 0.9)
    assert all(abs(c - expected) <= 4 * sigma for c in counts)


def test_zipf_skew_favours_low_ranks():
    sampler = ZipfSampler(100, 0.8)
    rng = SplitMix64(6)
    counts = [0] * 100
    for _ in range(20_000):
        counts[sampler.draw(rng)] += 1
    assert counts[0] > counts[10] > counts[99]


def test_zipf_needs_population():
    with pytest.raises(ValueError):
        ZipfSampler(0, 1.0)


def test_arrivals_stay_in_window_and_ordered():
    profile = _profile(arrival_rate=24, duration_days=10, start_day=2)
    times = arrival_times(profile, SplitMix64(1))
    assert times == sorted(times)
    assert all(2 * DAY_SECONDS <= t < 12 * DAY_SECONDS for t in times)
    assert abs(len(times) - 240) <= 4 * math.sqrt(240)


def test_diurnal_cycle_shifts_arrivals_into_the_day_peak():
    profile = _profile(arrival_rate=100, duration_days=50, diurnal_amplitude=0.9)
    times = arrival_times(profile, SplitMix64(2))
    first_half = sum(1 for t in times if (t % DAY_SECONDS) < DAY_SECONDS / 2)
    assert first_half > 0.65 * len(times)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def test_analysis_projects_are_consistent():
    catalog = _catalog(30)
    records = generate(_profile(), catalog)
    snapshot = [catalog.get(f).logical_name for f in catalog.resolve_dataset(catalog.dataset_id_for("thumbs"))]

    starts = _by_action(records, TraceAction.START_PROJECT)
    assert starts
    for start in starts:
        options = start.options
        files = options["files"].split("|")
        assert len(files) == 4
        assert files == sorted(files, key=snapshot.index)
        assert options["group"] == "analysis"
        assert options["consumers"] == "2"
        requested = [r.file for r in _by_action(records, TraceAction.NEXT_FILE) if r.project == start.project]
        assert sorted(requested) == sorted(files)
        c1 = [r.file for r in records if r.project == start.project and r.consumer == "c1" and r.action is TraceAction.NEXT_FILE]
        assert c1 == files[0::2]


def test_analysis_reuses_popular_files():
    catalog = _catalog(200)
    records = generate(_profile(files_per_project=10, arrival_rate=50), catalog)
    counts: dict[str, int] = {}
    for r in _by_action(records, TraceAction.NEXT_FILE):
        counts[r.file] = counts.get(r.file, 0) + 1
    assert counts.get("thumbs-000", 0) > counts.get("thumbs-199", 0)


def test_reconstruction_reads_every_file_once_in_order():
    catalog = _catalog(23)
    profile = _profile(kind="reconstruction", files_per_project=5, arrival_rate=100, duration_days=1, consumers_per_project=1)

    records = generate(profile, catalog)

    starts = _by_action(records, TraceAction.START_PROJECT)
    assert len(starts) == 5
    chunks = [s.options["files"].split("|") for s in sorted(starts, key=lambda s: s.t)]
    read = [name for chunk in chunks for name in chunk]
    assert read == [f"thumbs-{i:03d}" for i in range(23)]


def test_empty_dataset_is_rejected():
    catalog = _catalog(0)
    with pytest.raises(EmptyDataset):
        generate(_profile(), catalog)


def test_analysis_needs_catalog():
    with pytest.raises(WorkloadError):
        generate(_profile())


def test_mc_import_records():
    profile = WorkloadProfile(
        name="mc",
        kind="mc_import",
        sources=("lancaster", "in2p3"),
        archive="enstore",
        file_size=500,
        files_per_day=10,
        duration_days=5,
        seed=3,
    )
    records = generate(profile)
    assert records
    assert all(r.action is TraceAction.IMPORT_FILE for r in records)
    assert {r.station for r in records} <= {"lancaster", "in2p3"}
    assert records[0].file == "mc-000001"
    assert records[0].options == {"archive": "enstore", "size": "500"}


def test_generation_is_deterministic():
    catalog = _catalog(30)
    assert generate(_profile(), catalog) == generate(_profile(), catalog)
    assert generate(_profile(), catalog) != generate(_profile(seed=12), catalog)


def test_generate_all_merges_in_time_order():
    catalog = _catalog(30)
    records = generate_all([_profile(), _profile(name="other", seed=99)], catalog)
    assert records == sort_trace(records)
    assert {r.project.split("-")[0] for r in _by_action(records, TraceAction.START_PROJECT)} == {"physics", "other"}


# ---------------------------------------------------------------------------
# trace format
# ---------------------------------------------------------------------------


def test_extra_field():
    extra = format_extra(group="mc", think=1.5, files=["a", "b"])
    assert extra == "group=mc;think=1.500000;files=a|b"
    assert parse_extra(extra) == {"group": "mc", "think": "1.500000", "files": "a|b"}
    assert parse_extra("") == {}
    with pytest.raises(WorkloadError):
        parse_extra("novalue")


def test_negative_time_rejected():
    with pytest.raises(WorkloadError):
        TraceRecord(-1.0, TraceAction.NEXT_FILE, "central")


def test_sort_puts_start_before_consumer_steps():
    start = TraceRecord(5.0, TraceAction.START_PROJECT, "central", "p")
    release = TraceRecord(5.0, TraceAction.RELEASE_FILE, "central", "p", "c1", "a", "step=1")
    request = TraceRecord(5.0, TraceAction.NEXT_FILE, "central", "p", "c1", "b", "step=2")
    earlier = TraceRecord(1.0, TraceAction.NEXT_FILE, "central", "p", "c1", "a", "step=0")
    assert sort_trace([request, release, start, earlier]) == [earlier, start, release, request]


def test_trace_csv_file_roundtrip(tmp_path):
    catalog = _catalog(10)
    records = generate(_profile(duration_days=1), catalog)
    path = tmp_path / "trace.csv"

    write_trace_csv(records, path)

    assert path.read_text().splitlines()[0] == ",".join(TRACE_HEADER)
    assert read_trace_csv(path) == records
    assert read_trace_csv(trace_to_csv(records)) == records


def test_read_trace_rejects_bad_input(tmp_path):
    with pytest.raises(WorkloadError):
        read_trace_csv("a,b\n1,2\n")
    header = ",".join(TRACE_HEADER)
    with pytest.raises(WorkloadError):
        read_trace_csv(f"{header}\n1.0,next_file,central\n")
    with pytest.raises(WorkloadError):
        read_trace_csv(f"{header}\n1.0,teleport,central,p,c1,f,\n")


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


@pytest.fixture
def config(small_scenario):
    return validate_config(small_scenario)


@pytest.fixture
def system(config):
    return build_system(config)


def _import(t: float, name: str = "mc-000001") -> TraceRecord:
    return TraceRecord(t, TraceAction.IMPORT_FILE, "lancaster", file=name, extra="archive=enstore;size=10000")


def test_empty_trace(system):
    replayer = TraceReplayer(system)
    stats = replayer.replay([])
    assert stats.events_fired == 0
    assert stats.final_time == 0.0
    assert system.metrics.is_empty()


def test_single_import_is_routed_to_the_archive(system):
    replayer = replay(system, [_import(10.0)])

    (result,) = replayer.imports
    assert result.ok
    assert result.path == ["lancaster", "central", "enstore"]
    file_id = system.catalog.file_id_for("mc-000001")
    assert system.catalog.get(file_id).declared_at == 10.0
    assert system.archives["enstore"].is_archived(file_id)
    assert system.catalog.replica(file_id, Location.station("lancaster")) is not None
    assert system.metrics.total("enstore", Metric.MSS_WRITTEN_BYTES) == 10_000
    assert system.metrics.total("lancaster", Metric.SENT_OUT_BYTES) == 10_000
    assert system.metrics.total("central", Metric.DELIVERED_IN_BYTES) == 0
    assert len(system.fabric.transfer_log) == 2
    assert system.audit() == []


def test_unknown_station_names_record(system):
    records = [
        _import(1.0),
        TraceRecord(2.0, TraceAction.START_PROJECT, "cern", "p", extra="group=analysis;files=thumb-00000"),
    ]
    with pytest.raises(UnknownEntity) as info:
        TraceReplayer(system).load(records)
    assert info.value.index == 1


def test_step_before_project_start(system):
    records = [TraceRecord(0.0, TraceAction.NEXT_FILE, "central", "p", "c1", "thumb-00000", "step=0")]
    with pytest.raises(UnknownEntity):
        TraceReplayer(system).load(records)


def test_unknown_file_and_group(system):
    unknown_file = TraceRecord(0.0, TraceAction.START_PROJECT, "central", "p", extra="group=analysis;files=nope")
    unknown_group = TraceRecord(0.0, TraceAction.START_PROJECT, "central", "p", extra="group=cms;files=thumb-00000")
    for record in (unknown_file, unknown_group):
        with pytest.raises(UnknownEntity):
            TraceReplayer(system).load([record])


def test_generated_trace_replays_every_project(config, system):
    trace = generate_all(workload_profiles(config), system.catalog)

    replayer = replay(system, trace)

    central = system.stations["central"]
    assert central.projects
    for project in central.projects.values():
        assert project.state is ProjectState.DONE
        assert sorted(project.delivered_files()) == sorted(project.files)
    assert replayer.failed_requests == []
    assert len(replayer.imports) == len(_by_action(trace, TraceAction.IMPORT_FILE))
    assert system.audit() == []


def test_shuffled_trace_gives_identical_run(config):
    first = build_system(config)
    trace = generate_all(workload_profiles(config), first.catalog)
    replay(first, trace)

    shuffled = list(trace)
    random.Random(4).shuffle(shuffled)
    second = build_system(config)
    replay(second, shuffled)

    assert second.fabric.transfer_log_csv() == first.fabric.transfer_log_csv()
    assert MetricsReport(second.metrics).to_csv() == MetricsReport(first.metrics).to_csv()
