import argparse
import json
import logging
import sys
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from config import bundled_scenarios
from errors import ConfigInvalid, DataHandlingError
from metrics.report import MetricsReport
from scenario.runner import OUTPUT_FILES, ScenarioResult, generate_trace, prepare_config, run_scenario
from workload.trace import write_trace_csv

console = Console()
err_console = Console(stderr=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samsim",
        description="Desk-scale simulator for a distributed data-handling grid.",
        epilog=f"bundled scenarios: {', '.join(bundled_scenarios()) or 'none'}",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    validate = sub.add_parser("validate", help="check a scenario document")
    validate.add_argument("--config", required=True, help="scenario file or bundled scenario name")

    run = sub.add_parser("run", help="generate, replay and report a scenario")
    run.add_argument("--config", required=True, help="scenario file or bundled scenario name")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--until", type=float, metavar="DAYS", help="override the run duration in days")
    run.add_argument("--plot-dir", type=Path, help="also write per-day plot series here")
    run.add_argument("--quiet", action="store_true", help="warnings only, no progress bar")

    report = sub.add_parser("report", help="summarise the metrics.csv of a finished run")
    report.add_argument("--out", required=True, type=Path, help="output directory of a previous run")
    report.add_argument("--plot-dir", type=Path, help="write per-day plot series here")

    trace = sub.add_parser("trace-gen", help="write the workload trace without simulating")
    trace.add_argument("--config", required=True, help="scenario file or bundled scenario name")
    trace.add_argument("--out", required=True, type=Path, help="output directory")
    trace.add_argument("--seed", type=int, help="override the master seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args)
    try:
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_trace_gen(args)
    except ConfigInvalid as e:
        _print_error(e, e.to_dict())
        return 2
    except (DataHandlingError, OSError) as e:
        _print_error(e, {"error": type(e).__name__, "message": str(e)})
        return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_validate(args: argparse.Namespace) -> int:
    config = prepare_config(args.config)
    console.print(
        f"[green]Valid.[/green] [cyan]{config['name']}[/cyan]  "
        f"[dim]{len(config['stations'])} stations, {len(config['archives'])} archives, "
        f"{len(config['workloads'])} workloads[/dim]"
    )
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    if args.quiet:
        result = run_scenario(args.config, args.out, args.seed, args.until, plot_dir=args.plot_dir)
    else:
        with Progress(
            TextColumn("[cyan]{task.description}[/cyan]"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=console,
        ) as progress:
            task = progress.add_task("Simulated days", total=None)

            def on_day(day: int, days: int) -> None:
                progress.update(task, completed=day, total=days)

            result = run_scenario(args.config, args.out, args.seed, args.until, on_day=on_day, plot_dir=args.plot_dir)
        _print_run_summary(result)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    path = args.out / "metrics.csv"
    report = MetricsReport.from_report_csv(path.read_text())
    _render_report(report, f"[bold cyan]{path}[/bold cyan]")
    if args.plot_dir is not None:
        written = report.write_plot_files(args.plot_dir)
        console.print(f"[green]Wrote {len(written)} plot series[/green] to [cyan]{args.plot_dir}[/cyan]")
    return 0


def _cmd_trace_gen(args: argparse.Namespace) -> int:
    config = prepare_config(args.config, args.seed)
    _, records = generate_trace(config)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "trace.csv"
    write_trace_csv(records, path)
    console.print(f"[green]Wrote {len(records)} trace records[/green] to [cyan]{path}[/cyan]")
    return 0


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _print_run_summary(result: ScenarioResult) -> None:
    config = result.config
    audit = result.system.audit()
    status = "[green]audits ok[/green]" if not audit else f"[red]{len(audit)} audit mismatch(es)[/red]"
    console.print(
        Panel.fit(
            f"[bold cyan]{config['name']}[/bold cyan]  [dim]seed {config['seed']}, "
            f"{config['duration_days']} days[/dim]\n"
            f"{result.stats.events_fired} events, {len(result.system.fabric.transfer_log)} transfers, {status}",
            border_style="cyan",
            padding=(1, 4),
        )
    )
    _render_report(result.report, "[bold cyan]Stations[/bold cyan]")
    for problem in audit:
        console.print(f"  [red]✗[/red] {problem}")
    files = ", ".join(OUTPUT_FILES)
    console.print(f"[dim]Outputs in {result.out_dir}: {files}[/dim]\n")


def _render_report(report: MetricsReport, title: str) -> None:
    table = Table(show_header=True, header_style="bold cyan", box=None, padding=(0, 2))
    table.add_column("Station", style="cyan")
    table.add_column("Consumed", justify="right")
    table.add_column("Files", justify="right")
    table.add_column("Delivered in", justify="right")
    table.add_column("Sent out", justify="right")
    table.add_column("MSS written", justify="right")
    table.add_column("MSS read", justify="right")
    table.add_column("Factor", justify="right", style="bold")
    table.add_column("Peak day", justify="right", style="dim")

    for s in report.summaries():
        table.add_row(
            s.station,
            _fmt_size(s.consumed_bytes),
            str(s.consumed_files),
            _fmt_size(s.delivered_in),
            _fmt_size(s.sent_out),
            _fmt_size(s.mss_written),
            _fmt_size(s.mss_read),
            s.factor,
            "-" if s.peak_day is None else f"{s.peak_day} ({s.peak_factor})",
        )
    console.print(Panel(table, title=title, border_style="cyan", padding=(1, 2)))


def _print_error(exc: Exception, payload: dict) -> None:
    err_console.print(f"[red]{type(exc).__name__}:[/red] {exc}")
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _setup_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "quiet", False):
        level = logging.WARNING
    elif args.verbose:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def _fmt_size(size: int) -> str:
    if size < 1000:
        return f"{size} B"
    elif size < 1000 ** 2:
        return f"{size / 1000:.1f} KB"
    elif size < 1000 ** 3:
        return f"{size / 1000 ** 2:.1f} MB"
    else:
        return f"{size / 1000 ** 3:.2f} GB"
