import csv

import numpy as np
import pytest
from typer.testing import CliRunner

from otsep.cli.main import app
from otsep.core.bcd import BcdOptions, SeparationSolution, bcd_fit, save_solution
from otsep.core.measures import load_dataset
from otsep.dynamics.affine import ModelKind
from otsep.synth.simulate import load_truth, truth_path

runner = CliRunner()

SMALL = ["--sizes", "3,4", "--k", "2", "--t", "3"]


def metrics_row(output: str) -> dict:
    lines = output.splitlines()
    start = next(i for i, line in enumerate(lines) if line.startswith("param_sq_error,"))
    return next(csv.DictReader(lines[start:start + 2]))


def simulate(path, *extra):
    result = runner.invoke(app, ["simulate", "-o", str(path), *extra])
    assert result.exit_code == 0, result.output
    return result


def test_simulate_writes_dataset_and_truth(tmp_path):
    path = tmp_path / "data.csv"
    simulate(path, "--seed", "7")
    seq = load_dataset(path)
    assert seq.sizes == [37] * 7
    assert len(load_truth(truth_path(path))) == 3


def test_simulate_is_deterministic(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    simulate(first, "--seed", "3", *SMALL)
    simulate(second, "--seed", "3", *SMALL)
    assert first.read_bytes() == second.read_bytes()


def test_simulate_infers_k_from_sizes(tmp_path):
    path = tmp_path / "data.csv"
    simulate(path, "--sizes", "4,5", "--t", "3")
    seq = load_dataset(path)
    assert seq.sizes == [9] * 3
    assert len(load_truth(truth_path(path))) == 2


def test_simulate_rejects_bad_config(tmp_path):
    result = runner.invoke(app, ["simulate", "-o", str(tmp_path / "x.csv"), "--sigma2", "-1"])
    assert result.exit_code == 2
    result = runner.invoke(app, ["simulate", "-o", str(tmp_path / "x.csv"), "--sizes", "3,x"])
    assert result.exit_code == 2
    result = runner.invoke(app, ["simulate", "-o", str(tmp_path / "x.csv"), "--no-such-flag"])
    assert result.exit_code != 0


def test_fit_is_reproducible(tmp_path):
    data = tmp_path / "data.csv"
    simulate(data, "--seed", "1", "--sigma2", "0", *SMALL)
    outputs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        result = runner.invoke(
            app, ["fit", "--data", str(data), "-o", str(out), "--k", "2", "--restarts", "1", "--seed", "4"]
        )
        assert result.exit_code == 0, result.output
        outputs.append(out.read_text())
    assert outputs[0] == outputs[1]


def test_fit_dump_lp(tmp_path):
    data = tmp_path / "data.csv"
    simulate(data, "--seed", "2", *SMALL)
    lp_path = tmp_path / "lp.txt"
    result = runner.invoke(
        app,
        ["fit", "--data", str(data), "-o", str(tmp_path / "s.json"), "--k", "2", "--restarts", "1",
         "--dump-lp", str(lp_path)],
    )
    assert result.exit_code == 0, result.output
    assert lp_path.read_text().startswith("# coupled OT LP: K=2")


def test_fit_missing_dataset(tmp_path):
    result = runner.invoke(app, ["fit", "--data", str(tmp_path / "none.csv"), "-o", str(tmp_path / "s.json")])
    assert result.exit_code == 2


def test_fit_too_many_ensembles(tmp_path):
    data = tmp_path / "data.csv"
    simulate(data, *SMALL)
    result = runner.invoke(app, ["fit", "--data", str(data), "-o", str(tmp_path / "s.json"), "--k", "9"])
    assert result.exit_code == 2


def test_evaluate_perfect_and_swapped(tmp_path):
    data = tmp_path / "data.csv"
    simulate(data, "--seed", "5", "--sigma2", "0", *SMALL)
    seq = load_dataset(data)
    truth = load_truth(truth_path(data))
    solution = bcd_fit(seq, 2, ModelKind.AFFINE, truth, BcdOptions(max_iters=5))
    perfect = tmp_path / "perfect.json"
    save_solution(solution, perfect)

    swapped = SeparationSolution(
        models=solution.models[::-1],
        plans=None,
        objective_trace=solution.objective_trace,
        labels=[1 - lab for lab in solution.labels],
        converged=solution.converged,
    )
    swapped_path = tmp_path / "swapped.json"
    save_solution(swapped, swapped_path)

    rows = []
    for path in (perfect, swapped_path):
        result = runner.invoke(app, ["evaluate", "--solution", str(path), "--data", str(data)])
        assert result.exit_code == 0, result.output
        rows.append(metrics_row(result.stdout))
    assert float(rows[0]["classification_accuracy"]) == 1.0
    assert float(rows[0]["param_sq_error"]) <= 1e-12
    assert rows[0]["permutation"] == "0 1"
    assert rows[1]["permutation"] == "1 0"
    assert rows[0]["classification_accuracy"] == rows[1]["classification_accuracy"]
    assert rows[0]["param_sq_error"] == rows[1]["param_sq_error"]


def test_evaluate_half_wrong_labels(tmp_path):
    data = tmp_path / "data.csv"
    simulate(data, "--seed", "6", "--sigma2", "0", *SMALL)
    seq = load_dataset(data)
    truth = load_truth(truth_path(data))
    labels = []
    for t, lab in enumerate(seq.labels):
        lab = lab.copy()
        if t == 0:
            lab = 1 - lab
        labels.append(lab)
    # every label wrong at the first time, right at the other two
    path = tmp_path / "half.json"
    save_solution(SeparationSolution(models=truth, plans=None, objective_trace=[0.0], labels=labels, converged=True), path)
    result = runner.invoke(app, ["evaluate", "--solution", str(path), "--data", str(data)])
    assert result.exit_code == 0, result.output
    assert float(metrics_row(result.stdout)["classification_accuracy"]) == pytest.approx(2.0 / 3.0)


def test_sweep_writes_records_and_aggregate(tmp_path):
    out, agg = tmp_path / "sweep.csv", tmp_path / "agg.csv"
    result = runner.invoke(
        app,
        ["sweep", "--trials", "2", "--methods", "oracle", "--sigma2", "0.001", "--sigma2", "0.01",
         "-o", str(out), "--aggregate", str(agg)],
    )
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert lines[0] == "sigma2,trial,method,param_sq_error,classification_accuracy,objective"
    assert len(lines) == 1 + 2 * 2
    assert agg.read_text().splitlines()[0] == "sigma2,method,metric,median,p5,p95,n"


def test_sweep_records_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out, timings = tmp_path / f"{name}.csv", tmp_path / f"{name}_timings.csv"
        result = runner.invoke(
            app,
            ["sweep", "--trials", "2", "--methods", "oracle,semi-oracle", "--sigma2", "0.001", "--seed", "3",
             "--kmeans-restarts", "3", "-o", str(out), "--timings", str(timings)],
        )
        assert result.exit_code == 0, result.output
        outputs.append(out.read_bytes())
        lines = timings.read_text().splitlines()
        assert lines[0] == "sigma2,trial,method,wall_ms"
        assert len(lines) == 1 + 2 * 2
    assert outputs[0] == outputs[1]


def test_sweep_rejects_unknown_method(tmp_path):
    result = runner.invoke(app, ["sweep", "--trials", "1", "--methods", "magic", "-o", str(tmp_path / "s.csv")])
    assert result.exit_code == 2


def test_example_gmm_classic(tmp_path):
    result = runner.invoke(app, ["example-gmm", "-o", str(tmp_path), "--k", "1", "--grid-points", "41"])
    assert result.exit_code == 0, result.output
    with open(tmp_path / "plan_support.csv") as f:
        rows = list(csv.DictReader(f))
    assert {row["k"] for row in rows} == {"0"}
    shifts = np.array([float(r["y"]) - float(r["x"]) for r in rows])
    assert np.ptp(shifts) > 1.0


def test_example_gmm_separation(tmp_path):
    result = runner.invoke(
        app, ["example-gmm", "-o", str(tmp_path), "--grid-points", "41", "--frames", "3", "--restarts", "10"]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "solution.json").exists()
    with open(tmp_path / "frames.csv") as f:
        frames = {row["frame"] for row in csv.DictReader(f)}
    assert frames == {"0", "1", "2"}


def test_example_gmm_degenerate_grid(tmp_path):
    result = runner.invoke(app, ["example-gmm", "-o", str(tmp_path), "--grid-points", "1"])
    assert result.exit_code == 2
    result = runner.invoke(app, ["example-gmm", "-o", str(tmp_path), "--k", "3"])
    assert result.exit_code == 2


def test_config_command():
    result = runner.invoke(app, ["config"])
    assert result.exit_code == 0
    assert "bcd" in result.stdout
