"""
Desk-scale Monte Carlo comparison of the proposed method against the oracle
and semi-oracle baselines, followed by the qualitative checks the full
experiment is expected to satisfy.

    python scripts/reproduce_sweep.py --trials 50 --workers 4
    python scripts/reproduce_sweep.py --trials 5          # smoke run
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from otsep.core.bcd import BcdOptions
from otsep.core.config import METHODS, settings
from otsep.synth.simulate import SimConfig
from otsep.synth.sweep import (
    AggregateRow,
    aggregate_sweep,
    monte_carlo_sweep,
    write_aggregate_csv,
    write_sweep_csv,
    write_timing_csv,
)

SIGMA2_GRID = [1e-5, 1e-3, 1e-1]
LOW_NOISE = [1e-5, 1e-3]
ORACLE_FACTOR = 10.0
MIN_ACCURACY = 0.9

console = Console()


def _medians(rows: List[AggregateRow], metric: str) -> Dict[str, Dict[float, float]]:
    table: Dict[str, Dict[float, float]] = {}
    for row in rows:
        if row.metric == metric:
            table.setdefault(row.method, {})[row.sigma2] = row.median
    return table


def check(rows: List[AggregateRow]) -> List[str]:
    """Returns the failed checks; empty when everything holds."""
    failures = []
    errors = _medians(rows, "param_sq_error")
    accuracy = _medians(rows, "classification_accuracy")

    for s in LOW_NOISE:
        proposed, oracle = errors["proposed"][s], errors["oracle"][s]
        if proposed > ORACLE_FACTOR * max(oracle, 1e-300):
            failures.append(f"sigma2={s:g}: proposed error {proposed:.3g} not within x{ORACLE_FACTOR:g} of oracle {oracle:.3g}")
        if accuracy["proposed"][s] < MIN_ACCURACY:
            failures.append(f"sigma2={s:g}: proposed accuracy {accuracy['proposed'][s]:.3f} < {MIN_ACCURACY}")

    for method, by_sigma in errors.items():
        values = [by_sigma[s] for s in sorted(by_sigma)]
        if any(b < a for a, b in zip(values, values[1:])):
            failures.append(f"{method}: median error does not grow with sigma2 ({values})")
    return failures


def _summary(rows: List[AggregateRow]) -> Table:
    table = Table(title="Median (p5 / p95)")
    table.add_column("sigma2", justify="right")
    table.add_column("method", style="cyan")
    table.add_column("param_sq_error")
    table.add_column("accuracy")
    errors = {(r.sigma2, r.method): r for r in rows if r.metric == "param_sq_error"}
    accuracy = {(r.sigma2, r.method): r for r in rows if r.metric == "classification_accuracy"}
    for key, row in errors.items():
        acc = accuracy[key]
        table.add_row(
            f"{key[0]:g}", key[1],
            f"{row.median:.3g} ({row.p5:.3g} / {row.p95:.3g})",
            f"{acc.median:.3f} ({acc.p5:.3f} / {acc.p95:.3f})",
        )
    return table


def main(
    trials: int = typer.Option(50, "--trials"),
    workers: int = typer.Option(1, "--workers"),
    seed: int = typer.Option(0, "--seed"),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", "-o", help="Keep raw and aggregated CSVs here"),
):
    logging.basicConfig(level=logging.INFO, format="%(message)s", handlers=[RichHandler(console=console)], force=True)

    base = SimConfig.from_settings(seed=seed)
    records = monte_carlo_sweep(
        base, SIGMA2_GRID, trials, list(METHODS),
        bcd_opts=BcdOptions.from_settings(workers=1),
        kmeans_restarts=settings.sweep.kmeans_restarts,
        workers=workers,
        solver_config=settings.solver,
    )
    rows = aggregate_sweep(records)
    console.print(_summary(rows))

    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(records, output_dir / "sweep.csv")
        write_aggregate_csv(rows, output_dir / "summary.csv")
        write_timing_csv(records, output_dir / "timings.csv")

    failures = check(rows)
    for failure in failures:
        console.print(f"[red]FAIL[/red] {failure}")
    if failures:
        raise typer.Exit(code=1)
    console.print("[green]All checks passed[/green]")


if __name__ == "__main__":
    typer.run(main)
