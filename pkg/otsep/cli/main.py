import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.json import JSON
from rich.logging import RichHandler
from rich.table import Table

from otsep.core.bcd import BcdOptions, multi_start, save_solution, load_solution
from otsep.core.config import METHODS, settings
from otsep.core.exceptions import ConfigurationError, OtsepError
from otsep.core.measures import load_dataset, save_dataset
from otsep.dynamics.affine import AffineModel, ModelKind
from otsep.evaluation.metrics import evaluate as evaluate_models
from otsep.synth.gmm import GmmConfig, gmm_example
from otsep.synth.simulate import SimConfig, load_truth, sample_instance, save_truth, truth_path
from otsep.synth.sweep import aggregate_sweep, monte_carlo_sweep, write_aggregate_csv, write_sweep_csv, write_timing_csv
from otsep.transport.classic import solve_classic_ot
from otsep.transport.lp import build_costs, build_coupled_lp, dump_lp, interpolate_plan

app = typer.Typer()
# Messages go to stderr so CSV written to stdout stays clean
console = Console(stderr=True)
stdout = Console()


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug logging")):
    """
    Separate ensembles in aggregate snapshots and identify their affine dynamics.
    """
    level = logging.DEBUG if verbose else getattr(logging, settings.logging.level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _echo_config(command: str, values: dict) -> None:
    console.print(f"[bold blue]{command}[/bold blue] effective configuration:")
    console.print(JSON.from_data(values))


def _fail(error: Exception) -> None:
    if isinstance(error, ValidationError):
        console.print(f"[red]Invalid configuration:[/red] {error}")
        raise typer.Exit(code=ConfigurationError.exit_code)
    console.print(f"[red]{type(error).__name__}:[/red] {error}")
    raise typer.Exit(code=getattr(error, "exit_code", 1))


def _parse_ints(text: Optional[str], name: str) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"--{name} must be a comma-separated list of integers, got {text!r}")


def _print_models(title: str, models: List[AffineModel]) -> None:
    table = Table(title=title)
    table.add_column("k", justify="right", style="cyan")
    table.add_column("A")
    table.add_column("b")
    for k, model in enumerate(models):
        A = "I" if model.kind is ModelKind.SHIFT else str(np.round(model.A, 6).tolist())
        table.add_row(str(k), A, str(np.round(model.b, 6).tolist()))
    console.print(table)


@app.command()
def simulate(
    output: Path = typer.Option(..., "--output", "-o", help="Dataset CSV to write"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    sigma2: Optional[float] = typer.Option(None, "--sigma2", help="State noise variance"),
    d: Optional[int] = typer.Option(None, "--d", help="State dimension"),
    k: Optional[int] = typer.Option(None, "--k", help="Number of ensembles"),
    sizes: Optional[str] = typer.Option(None, "--sizes", help="Comma-separated ensemble sizes, e.g. 10,12,15"),
    t: Optional[int] = typer.Option(None, "--t", help="Number of observation times"),
    dynamics_scale: Optional[float] = typer.Option(None, "--dynamics-scale"),
    init_scale: Optional[float] = typer.Option(None, "--init-scale"),
):
    """
    Sample ensembles of noisy affine systems and write the aggregate snapshots.
    """
    try:
        cfg = SimConfig.from_settings(
            seed=seed, sigma2=sigma2, d=d, K=k, N=_parse_ints(sizes, "sizes"), T=t,
            dynamics_scale=dynamics_scale, init_scale=init_scale,
        )
        _echo_config("simulate", cfg.model_dump())
        seq, _ = sample_instance(cfg)
        save_dataset(seq, output)
        save_truth(list(seq.true_models), truth_path(output))
    except (OtsepError, ValidationError) as e:
        _fail(e)
    console.print(f"[green]Wrote {output} ({seq.T} times, {sum(cfg.N)} points each)[/green]")


@app.command()
def fit(
    data: Path = typer.Option(..., "--data", help="Dataset CSV"),
    output: Path = typer.Option(..., "--output", "-o", help="Solution JSON to write"),
    k: int = typer.Option(3, "--k", help="Number of ensembles"),
    kind: ModelKind = typer.Option(ModelKind.AFFINE, "--kind", help="Model family"),
    restarts: Optional[int] = typer.Option(None, "--restarts", help="Random initializations"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Relative decrease that stops the descent"),
    max_iters: Optional[int] = typer.Option(None, "--max-iters"),
    init_scale: Optional[float] = typer.Option(None, "--init-scale"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Parallel restart processes"),
    include_plans: bool = typer.Option(False, "--include-plans", help="Store transport plans in the solution"),
    lp_dump: Optional[Path] = typer.Option(None, "--dump-lp", help="Write the final LP as text"),
):
    """
    Fit K ensembles to a dataset by block coordinate descent with random restarts.
    """
    try:
        opts = BcdOptions.from_settings(
            restarts=restarts, seed=seed, rel_tol=tol, max_iters=max_iters, init_scale=init_scale, workers=workers
        )
        _echo_config("fit", {"data": str(data), "k": k, "kind": kind.value, **opts.model_dump()})
        seq = load_dataset(data)
        with console.status("[bold green]Separating ensembles...[/bold green]"):
            solution = multi_start(seq, k, kind, opts, settings.solver)
        save_solution(solution, output, include_plans=include_plans)
        if lp_dump is not None:
            dump_lp(build_coupled_lp(seq, build_costs(solution.models, seq)), lp_dump)
    except (OtsepError, ValidationError) as e:
        _fail(e)

    _print_models("Identified dynamics", solution.models)
    status = "converged" if solution.converged else "[yellow]iteration cap[/yellow]"
    console.print(
        f"objective {solution.objective:.6g} ({status}, {solution.iterations} iterations, "
        f"restart {solution.restart_index})"
    )


@app.command()
def evaluate(
    solution: Path = typer.Option(..., "--solution", help="Solution JSON from fit"),
    data: Path = typer.Option(..., "--data", help="Dataset CSV with true labels"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="True models JSON (default: dataset sidecar)"),
):
    """
    Compare a solution against ground truth; prints one CSV row.
    """
    truth = truth or truth_path(data)
    try:
        _echo_config("evaluate", {"solution": str(solution), "data": str(data), "truth": str(truth)})
        fitted = load_solution(solution)
        seq = load_dataset(data)
        true_models = load_truth(truth)
        report = evaluate_models(fitted.models, true_models, fitted.labels, seq.labels)
    except (OtsepError, ValidationError) as e:
        _fail(e)

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["param_sq_error", "classification_accuracy", "objective", "permutation"])
    accuracy = "" if report.classification_accuracy is None else repr(report.classification_accuracy)
    writer.writerow(
        [repr(report.param_sq_error), accuracy, repr(fitted.objective), " ".join(map(str, report.permutation))]
    )


@app.command()
def sweep(
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Raw records CSV (default: stdout)"),
    aggregate: Optional[Path] = typer.Option(None, "--aggregate", help="Also write median/p5/p95 per cell"),
    timings: Optional[Path] = typer.Option(None, "--timings", help="Also write per-method wall-clock times"),
    trials: Optional[int] = typer.Option(None, "--trials"),
    sigma2: Optional[List[float]] = typer.Option(None, "--sigma2", help="Noise level; repeat for a grid"),
    methods: Optional[str] = typer.Option(None, "--methods", help=f"Comma-separated subset of {','.join(METHODS)}"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    restarts: Optional[int] = typer.Option(None, "--restarts", help="BCD restarts per trial"),
    kmeans_restarts: Optional[int] = typer.Option(None, "--kmeans-restarts"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Parallel trial processes"),
):
    """
    Monte Carlo comparison of the proposed method, the oracle and the semi-oracle.
    """
    try:
        base = SimConfig.from_settings(seed=seed)
        opts = BcdOptions.from_settings(restarts=restarts, workers=1)
        grid = list(sigma2) if sigma2 else list(settings.sweep.sigma2_grid)
        chosen = [m.strip() for m in methods.split(",")] if methods else list(settings.sweep.methods)
        n_trials = trials if trials is not None else settings.sweep.trials
        n_kmeans = kmeans_restarts if kmeans_restarts is not None else settings.sweep.kmeans_restarts
        n_workers = workers if workers is not None else settings.sweep.workers
        _echo_config(
            "sweep",
            {
                "simulation": base.model_dump(), "sigma2_grid": grid, "trials": n_trials, "methods": chosen,
                "restarts": opts.restarts, "kmeans_restarts": n_kmeans, "workers": n_workers,
            },
        )
        records = monte_carlo_sweep(
            base, grid, n_trials, chosen,
            bcd_opts=opts, kmeans_restarts=n_kmeans, workers=n_workers, solver_config=settings.solver,
        )
    except (OtsepError, ValidationError) as e:
        _fail(e)

    write_sweep_csv(records, output if output is not None else sys.stdout)
    if aggregate is not None:
        write_aggregate_csv(aggregate_sweep(records), aggregate)
    if timings is not None:
        write_timing_csv(records, timings)


def _write_plan_support(path: Path, plans: List[np.ndarray], source, target) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "x", "y", "mass"])
        for k, plan in enumerate(plans):
            for i, j in zip(*np.nonzero(plan > 0)):
                writer.writerow([k, repr(float(source.points[i, 0])), repr(float(target.points[j, 0])),
                                 repr(float(plan[i, j]))])


def _write_frames(path: Path, plans: List[np.ndarray], source, target, frames: int) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "s", "k", "x", "mass"])
        for frame, s in enumerate(np.linspace(0.0, 1.0, frames)):
            for k, plan in enumerate(plans):
                snapshot = interpolate_plan(plan, source, target, float(s))
                for x, mass in zip(snapshot.points[:, 0], snapshot.masses):
                    writer.writerow([frame, repr(float(s)), k, repr(float(x)), repr(float(mass))])


@app.command("example-gmm")
def example_gmm(
    output_dir: Path = typer.Option(Path("gmm_example"), "--output-dir", "-o"),
    k: int = typer.Option(2, "--k", help="1 for classical transport, 2 for separation"),
    restarts: Optional[int] = typer.Option(None, "--restarts"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    init_scale: Optional[float] = typer.Option(None, "--init-scale", help="Default: |a' - a|"),
    frames: int = typer.Option(0, "--frames", help="Interpolated snapshots to write"),
    p: Optional[float] = typer.Option(None, "--p"),
    p_prime: Optional[float] = typer.Option(None, "--p-prime"),
    a: Optional[float] = typer.Option(None, "--a"),
    a_prime: Optional[float] = typer.Option(None, "--a-prime"),
    sigma: Optional[float] = typer.Option(None, "--sigma"),
    sigma_prime: Optional[float] = typer.Option(None, "--sigma-prime"),
    grid_points: Optional[int] = typer.Option(None, "--grid-points"),
):
    """
    Two Gaussian mixtures whose modes swap places: classical transport (K=1) or separation (K=2).
    """
    try:
        if k not in (1, 2):
            raise ConfigurationError(f"--k must be 1 or 2 for this example, got {k}")
        if frames < 0:
            raise ConfigurationError("--frames must be nonnegative")
        gmm = GmmConfig.from_settings(p=p, p_prime=p_prime, a=a, a_prime=a_prime, sigma=sigma, sigma_prime=sigma_prime)
        if grid_points is not None:
            gmm = GmmConfig(**{**gmm.model_dump(), "grid": (gmm.grid[0], gmm.grid[1], grid_points)})
        scale = init_scale if init_scale is not None else max(abs(gmm.a_prime - gmm.a), 1.0)
        opts = BcdOptions.from_settings(restarts=restarts, seed=seed, init_scale=scale)
        _echo_config("example-gmm", {"k": k, "frames": frames, "gmm": gmm.model_dump(), **opts.model_dump()})

        seq = gmm_example(gmm)
        output_dir.mkdir(parents=True, exist_ok=True)
        save_dataset(seq, output_dir / "data.csv")
        source, target = seq.measures

        if k == 1:
            cost = AffineModel.identity(1, ModelKind.SHIFT).cost_matrix(source, target)
            plans = [solve_classic_ot(cost, source, target, settings.solver).plan]
            objective = float(np.sum(cost * plans[0]))
        else:
            save_truth(list(seq.true_models), output_dir / "data.truth.json")
            with console.status("[bold green]Separating ensembles...[/bold green]"):
                solution = multi_start(seq, 2, ModelKind.SHIFT, opts, settings.solver)
            save_solution(solution, output_dir / "solution.json", include_plans=True)
            plans = [solution.plans.plans[kk][0] for kk in range(2)]
            objective = solution.objective
            _print_models("Identified shifts", solution.models)
            console.print(f"expected shifts: {gmm.expected_shifts}")

        _write_plan_support(output_dir / "plan_support.csv", plans, source, target)
        if frames:
            _write_frames(output_dir / "frames.csv", plans, source, target, frames)
    except (OtsepError, ValidationError) as e:
        _fail(e)

    console.print(f"[green]objective {objective:.6g}; wrote results to {output_dir}[/green]")


@app.command()
def config():
    """
    Show current configuration.
    """
    stdout.print(settings.model_dump())


if __name__ == "__main__":
    app()
