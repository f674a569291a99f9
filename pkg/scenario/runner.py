"""End-to-end scenario runs: generate, replay, report, write the output files."""

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from config import apply_overrides, load_config, validate_config
from metrics.ledger import DAY_SECONDS
from metrics.report import MetricsReport
from scenario.builder import build_system, workload_profiles
from scenario.system import DataHandlingSystem
from simkernel.kernel import RunStats
from station.station_server import PROJECT_REPORT_HEADER
from workload.generator import generate_all
from workload.replay import TraceReplayer
from workload.trace import TraceRecord, trace_to_csv

logger = logging.getLogger(__name__)

OUTPUT_FILES = ("trace.csv", "transfers.csv", "mss.csv", "metrics.csv", "summary.txt", "projects.csv")


@dataclass
class ScenarioResult:
    config: dict
    system: DataHandlingSystem
    trace: list[TraceRecord]
    replayer: TraceReplayer
    report: MetricsReport
    stats: RunStats
    out_dir: Path | None = None


def prepare_config(source: str | Path | dict, seed: int | None = None, until_days: float | None = None) -> dict:
    doc = source if isinstance(source, dict) else load_config(source)
    return validate_config(apply_overrides(doc, seed, until_days))


def generate_trace(config: dict) -> tuple[DataHandlingSystem, list[TraceRecord]]:
    system = build_system(config)
    return system, generate_all(workload_profiles(config), system.catalog)


def simulate(config: dict, on_day: Callable[[int, int], None] | None = None) -> ScenarioResult:
    """Run a validated scenario in memory, one simulated day at a time."""
    system, trace = generate_trace(config)
    replayer = TraceReplayer(system)
    replayer.load(trace)

    horizon = config["duration_days"] * DAY_SECONDS
    days = math.ceil(config["duration_days"])
    fired = 0
    for day in range(days):
        step = system.kernel.run_until(min((day + 1) * DAY_SECONDS, horizon))
        fired += step.events_fired
        if on_day is not None:
            on_day(day + 1, days)
    stats = RunStats(fired, system.kernel.now())

    report = MetricsReport(system.metrics, system.node_ids(), range(days))
    logger.info(
        "scenario %s finished: %d events, %d transfers",
        config["name"],
        stats.events_fired,
        len(system.fabric.transfer_log),
    )
    return ScenarioResult(config, system, trace, replayer, report, stats)


def run_scenario(
    config_path: str | Path | dict,
    out_dir: str | Path,
    seed: int | None = None,
    until_days: float | None = None,
    on_day: Callable[[int, int], None] | None = None,
    plot_dir: str | Path | None = None,
) -> ScenarioResult:
    config = prepare_config(config_path, seed, until_days)
    result = simulate(config, on_day)
    result.out_dir = write_outputs(result, Path(out_dir))
    if plot_dir is not None:
        result.report.write_plot_files(Path(plot_dir))
    return result


def write_outputs(result: ScenarioResult, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    system = result.system
    (out_dir / "trace.csv").write_text(trace_to_csv(result.trace))
    (out_dir / "transfers.csv").write_text(system.fabric.transfer_log_csv())
    (out_dir / "mss.csv").write_text(mss_log_csv(system))
    (out_dir / "metrics.csv").write_text(result.report.to_csv())
    (out_dir / "projects.csv").write_text(projects_csv(system))
    (out_dir / "summary.txt").write_text(summary_text(result))
    logger.info("outputs written to %s", out_dir)
    return out_dir


def mss_log_csv(system: DataHandlingSystem) -> str:
    """Completion logs of every archive, merged in completion order."""
    rows = []
    for order, archive in enumerate(system.archives.values()):
        lines = archive.completion_log_csv().splitlines()[1:]
        rows.extend((req.completed_at, order, seq, line) for seq, (req, line) in enumerate(zip(archive.completions, lines)))
    rows.sort(key=lambda r: r[:3])
    return "t_complete,kind,file_id,tape_id,mounted\n" + "".join(f"{r[3]}\n" for r in rows)


def projects_csv(system: DataHandlingSystem) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PROJECT_REPORT_HEADER)
    for station in system.stations.values():
        writer.writerows(station.project_report())
    return out.getvalue()


def summary_text(result: ScenarioResult) -> str:
    system = result.system
    config = result.config
    lines = [
        f"scenario {config['name']}",
        f"seed {config['seed']}",
        f"duration_days {config['duration_days']}",
        f"events_fired {result.stats.events_fired}",
        f"final_time {result.stats.final_time:.6f}",
        "",
        "[inventory]",
    ]
    lines += [f"{key} {value}" for key, value in system.statistics().items()]

    verdicts: dict[str, int] = {}
    for event in system.fabric.transfer_log:
        verdicts[event.verdict.value] = verdicts.get(event.verdict.value, 0) + 1
    lines += ["", "[transfers]", f"total {len(system.fabric.transfer_log)}"]
    lines += [f"{verdict} {count}" for verdict, count in sorted(verdicts.items())]

    lines += ["", "[projects]"]
    for station in system.stations.values():
        if not station.projects:
            continue
        done = sum(1 for p in station.projects.values() if p.state.value == "done")
        lines.append(
            f"{station.station_id} started={len(station.projects)} done={done} "
            f"stages={station.stages_started} failed_stages={station.stages_failed} peak_stages={station.peak_stages}"
        )

    lines += ["", "[stations]"]
    lines += result.report.summary_text().splitlines()

    audit = system.audit()
    lines += ["", "[audit]"]
    lines += audit or ["ok"]
    return "\n".join(lines) + "\n"
