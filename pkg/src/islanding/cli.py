import asyncio
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from src.islanding.config import (
    ConfigLoader,
    ConfigMerger,
    IslandingConfig,
    create_example_config,
)
from src.islanding.grid_model import parse_fault
from src.islanding.reachability import adjacency_matrix, reachability_matrix
from src.islanding.reporter import FORMATS, Reporter, compress_ranges, expand_ranges, regions_dot
from src.islanding.runner import (
    IslandSpec,
    PartitionRunner,
    RunSettings,
    evaluate_partition,
)


console = Console()
err_console = Console(stderr=True)


app = typer.Typer(
    name="grid-islanding",
    help="Islanding partition of radial distribution networks after line faults."
)

config_app = typer.Typer(
    name="config",
    help="Create and inspect configuration files."
)
app.add_typer(config_app)


def setup_logging(verbose: bool) -> None:
    """Route library logs to stderr through rich."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def case_name(case: Path) -> str:
    return case.name.split(".")[0]


def parse_faults(values: Optional[List[str]]) -> List[Tuple[int, int]]:
    return [parse_fault(v) for v in values or []]


def load_settings(config: Optional[Path], case: Path, overrides: dict) -> Tuple[IslandingConfig, RunSettings]:
    """Config file (or defaults) merged with case-specific and CLI values."""
    loaded = ConfigLoader.load(config) if config else IslandingConfig()
    merged = ConfigMerger.merge(loaded, overrides, case_name=case_name(case))
    return loaded, RunSettings(**merged)


def default_faults(loaded: IslandingConfig, case: Path) -> List[str]:
    specific = loaded.case_specific.get(case_name(case))
    return list(specific.faults or []) if specific else []


def check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        console.print(f"[red]Unsupported format '{fmt}'. Choose one of: {', '.join(FORMATS)}[/red]")
        raise typer.Exit(code=1)


@app.command("run")
def run(
    case: Path = typer.Argument(..., help="Case file (.case) describing the network."),
    fault: Optional[List[str]] = typer.Option(
        None, "--fault", "-f", help="Faulted branch as A-B. Can be repeated."
    ),
    granularity: Optional[float] = typer.Option(
        None, "--granularity", "-g", help="Power rounding step in kW (default 1)."
    ),
    no_correction: bool = typer.Option(
        False, "--no-correction", help="Skip region correction (knapsack on root paths only)."
    ),
    oracle: bool = typer.Option(
        False, "--oracle", help="Cross-check small regions by exhaustive enumeration."
    ),
    fmt: Optional[str] = typer.Option(
        None, "--format", help="Output format: table, json or dot."
    ),
    umin: Optional[float] = typer.Option(None, "--umin", help="Lower voltage limit in pu."),
    umax: Optional[float] = typer.Option(None, "--umax", help="Upper voltage limit in pu."),
    workers: Optional[int] = typer.Option(
        None, "--workers", "-w", help="Regions solved concurrently."
    ),
    config: Optional[Path] = typer.Option(
        None, "--config", "-c", help="JSON or YAML configuration file."
    ),
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Directory to save the JSON report in."
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug logs."),
):
    """
    Compute the islanding partition of a case under the given faults.
    """
    setup_logging(verbose)
    try:
        loaded, settings = load_settings(config, case, {
            "granularity": granularity,
            "correction": False if no_correction else None,
            "oracle": True if oracle else None,
            "umin": umin,
            "umax": umax,
            "workers": workers,
        })
        fmt = fmt or loaded.output_settings.format
        check_format(fmt)
        faults = parse_faults(fault or default_faults(loaded, case))

        runner = PartitionRunner(settings)
        report = asyncio.run(runner.run(case, faults))

        net = runner.prepare(case, faults) if fmt == "dot" else None
        typer.echo(Reporter.emit(report, fmt, net), nl=False)
        if output:
            saved = runner.save_report(report, output, indent=loaded.output_settings.json_indent)
            err_console.print(f"[green]Report saved to {saved}[/green]")
    except FileNotFoundError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    except ValueError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)

    if report.exit_code:
        raise typer.Exit(code=report.exit_code)


@app.command("evaluate")
def evaluate(
    case: Path = typer.Argument(..., help="Case file (.case) describing the network."),
    island: List[str] = typer.Option(
        ..., "--island", "-i", help="Island as 'DG1,DG4=4-9,36-37'. Can be repeated."
    ),
    shed: Optional[str] = typer.Option(
        None, "--shed", help="Buses serving only their fixed load, e.g. 21,43,48."
    ),
    fault: Optional[List[str]] = typer.Option(
        None, "--fault", "-f", help="Faulted branch as A-B. Can be repeated."
    ),
    granularity: Optional[float] = typer.Option(
        None, "--granularity", "-g", help="Power rounding step in kW (default 1)."
    ),
    fmt: str = typer.Option("table", "--format", help="Output format: table, json or dot."),
    config: Optional[Path] = typer.Option(
        None, "--config", "-c", help="JSON or YAML configuration file."
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug logs."),
):
    """
    Score a given partition with the solver's objective and checks.
    """
    setup_logging(verbose)
    check_format(fmt)
    try:
        _, settings = load_settings(config, case, {"granularity": granularity})
        specs = [IslandSpec.parse(text) for text in island]
        faults = parse_faults(fault)
        runner = PartitionRunner(settings)
        net = runner.prepare(case, faults)
        report = evaluate_partition(
            net, specs, shed=expand_ranges(shed or ""), settings=settings, scenario=faults,
        )
        typer.echo(Reporter.emit(report, fmt, net), nl=False)
    except FileNotFoundError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    except ValueError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)

    if report.exit_code:
        raise typer.Exit(code=report.exit_code)


@app.command("regions")
def show_regions(
    case: Path = typer.Argument(..., help="Case file (.case) describing the network."),
    fault: Optional[List[str]] = typer.Option(
        None, "--fault", "-f", help="Faulted branch as A-B. Can be repeated."
    ),
    granularity: Optional[float] = typer.Option(
        None, "--granularity", "-g", help="Power rounding step in kW (default 1)."
    ),
    fmt: str = typer.Option("table", "--format", help="Output format: table or dot."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug logs."),
):
    """
    List reachable regions and the final supply regions without solving.
    """
    setup_logging(verbose)
    if fmt not in ("table", "dot"):
        console.print(f"[red]Unsupported format '{fmt}'. Choose table or dot.[/red]")
        raise typer.Exit(code=1)
    try:
        _, settings = load_settings(None, case, {"granularity": granularity})
        runner = PartitionRunner(settings)
        net = runner.prepare(case, parse_faults(fault))
        found, supply = runner.supply_regions(net)
    except FileNotFoundError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    except ValueError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)

    if fmt == "dot":
        typer.echo(regions_dot(net, supply), nl=False)
        return

    reachable = Table(title="Reachable regions")
    reachable.add_column("Region", justify="right")
    reachable.add_column("Buses")
    reachable.add_column("Slack")
    reachable.add_column("DGs")
    for k, region in enumerate(found, start=1):
        reachable.add_row(
            str(k),
            compress_ranges(region.members),
            "yes" if region.contains_slack else "no",
            ", ".join(region.dgs) or "-",
        )
    console.print(reachable)

    table = Table(title="Supply regions")
    table.add_column("DGs")
    table.add_column("Capacity kW", justify="right")
    table.add_column("Committed kW", justify="right")
    table.add_column("Surplus kW", justify="right")
    table.add_column("Buses")
    for region in supply:
        table.add_row(
            region.label(),
            f"{region.capacity:.1f}",
            f"{region.committed_load:.1f}",
            f"{region.surplus:.1f}",
            compress_ranges(region.members),
        )
    console.print(table)


@app.command("matrix")
def matrix(
    case: Path = typer.Argument(..., help="Case file (.case) describing the network."),
    kind: str = typer.Option(
        "reachability", "--kind", "-k", help="Matrix to print: adjacency or reachability."
    ),
    fault: Optional[List[str]] = typer.Option(
        None, "--fault", "-f", help="Faulted branch as A-B. Can be repeated."
    ),
):
    """
    Print the adjacency or reachability matrix as a P1 bitmap.
    """
    if kind not in ("adjacency", "reachability"):
        console.print(f"[red]Unknown matrix kind '{kind}'. Choose adjacency or reachability.[/red]")
        raise typer.Exit(code=1)
    try:
        net = PartitionRunner().prepare(case, parse_faults(fault))
    except FileNotFoundError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    except ValueError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)

    bits = adjacency_matrix(net)
    if kind == "reachability":
        bits = reachability_matrix(bits)
    typer.echo(bits.to_pbm(), nl=False)


@config_app.command("example")
def config_example(
    output: Path = typer.Argument(Path("config.example.json"), help="File to write."),
    fmt: str = typer.Option("json", "--format", help="json or yaml."),
):
    """
    Write an example configuration file.
    """
    try:
        create_example_config(output, format=fmt)
    except (ValueError, ImportError) as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    console.print(f"[green]Example configuration written to {output}[/green]")


@config_app.command("show")
def config_show(
    config: Path = typer.Argument(..., help="JSON or YAML configuration file."),
    case: Optional[str] = typer.Option(None, "--case", help="Apply overrides of this case name."),
):
    """
    Print the effective solver and flow settings.
    """
    try:
        loaded = ConfigLoader.load(config)
    except FileNotFoundError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    except (ValueError, ImportError) as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(code=1)

    merged = ConfigMerger.merge(loaded, {}, case_name=case)
    table = Table(title=f"Effective settings{f' for {case}' if case else ''}")
    table.add_column("Setting")
    table.add_column("Value")
    for key in sorted(merged):
        table.add_row(key, str(merged[key]))
    console.print(table)


# Main entry point for the CLI
def main():
    app()

if __name__ == "__main__":
    main()
