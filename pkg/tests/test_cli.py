import csv
import json

import pytest

from ris_see.cli import main
from ris_see.experiments import EXPERIMENTS, RESULT_COLUMNS, parse_seeds, summarize

SMALL = ["--set", "num_bs=1", "--set", "num_ris=1", "--set", "num_users=1", "--set", "num_eves=1"]


def run(tmp, *extra):
    return main(["--experiment", "power_sweep", "--schemes", "perfect,maxmin_sse", "--seeds", "0..1",
                 "--out", str(tmp), *SMALL, *extra])


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    assert run(out, "--no-timing") == 0
    return out


def test_outputs(sweep_dir):
    rows = list(csv.DictReader(open(sweep_dir / "power_sweep.csv")))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 6 * 2 * 2
    assert {r["scheme"] for r in rows} == {"perfect", "maxmin_sse"}
    assert all(r["secs"] == "" for r in rows)
    manifest = json.loads((sweep_dir / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1]
    assert manifest["sweep"]["values"] == [5, 10, 15, 20, 25, 30]
    assert len(manifest["config_hash"]) == 64
    traces = sorted(p.name for p in (sweep_dir / "traces").iterdir())
    assert "perfect_15_seed1.csv" in traces and len(traces) == 24
    head = (sweep_dir / "traces" / "perfect_15_seed1.csv").read_text().splitlines()[0]
    assert head.startswith("iter,z_p4,z_p6,min_see_true,status_p4,status_p6,secs")


def test_byte_identical(sweep_dir, tmp_path):
    assert run(tmp_path, "--no-timing") == 0
    for rel in ["power_sweep.csv", "manifest.json", "traces/perfect_20_seed0.csv", "traces/maxmin_sse_5_seed1.csv"]:
        assert (tmp_path / rel).read_bytes() == (sweep_dir / rel).read_bytes()


def test_summarize(sweep_dir, capsys):
    assert main(["--summarize", str(sweep_dir / "power_sweep.csv")]) == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0].startswith("scheme,sweep_value,n,n_ok,min_see_mean")
    assert len(lines) == 1 + 12
    assert (sweep_dir / "power_sweep_summary.csv").read_text() == out
    assert summarize(sweep_dir / "power_sweep.csv") == out


def test_nonconverged_rows_exit_one(tmp_path, capsys):
    rc = main(["--experiment", "power_sweep", "--schemes", "perfect", "--seeds", "1", "--max-iters", "1",
               "--out", str(tmp_path), *SMALL])
    assert rc == 1
    assert "max_iters" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--experiment", "power_sweep", "--set", "num_bs=-1"],
    ["--experiment", "power_sweep", "--schemes", "nope"],
    ["--experiment", "power_sweep", "--seeds", "5..2"],
    ["--experiment", "power_sweep", "--set", "novalue"],
    ["--experiment", "power_sweep", "--outage-samples", "10"],
])
def test_input_errors(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == 2


def test_unknown_experiment():
    with pytest.raises(SystemExit) as exc:
        main(["--experiment", "figure9"])
    assert exc.value.code == 2


def test_experiment_required():
    with pytest.raises(SystemExit):
        main([])


def test_parse_seeds():
    assert parse_seeds("3") == [3]
    assert parse_seeds("0..4") == [0, 1, 2, 3, 4]
    assert parse_seeds("1,4,7") == [1, 4, 7]
    with pytest.raises(ValueError):
        parse_seeds("x")


def test_experiment_catalogue():
    assert set(EXPERIMENTS) == {"convergence", "power_sweep", "ris_elements", "num_eves", "num_bs",
                                "error_level", "fairness"}
    assert EXPERIMENTS["power_sweep"].values == (5, 10, 15, 20, 25, 30)
