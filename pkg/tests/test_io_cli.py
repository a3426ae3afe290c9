import csv

import numpy as np
import pytest

from occlearn import io
from occlearn.cli import EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from occlearn.datagen import GenConfig, gen_dp_mixture
from occlearn.dpmeans import serial_dpmeans
from occlearn.experiments import ScalingRow


def test_dataset_round_trip(tmp_path):
    X = np.random.default_rng(0).normal(size=(25, 3)) * 1e-7 + np.pi
    path = tmp_path / "d.csv"
    io.save_dataset(path, X)
    assert path.read_text().splitlines()[0] == "# occ-learn v1 dim=3 n=25"
    assert io.load_dataset(path).tobytes() == X.tobytes()


@pytest.mark.parametrize("text", [
    "dim=2 n=1\n1,2\n",
    "# occ-learn v1 dim=2 n=1\n1,2,3\n",
    "# occ-learn v1 dim=2 n=2\n1,2\n",
    "# occ-learn v1 dim=1 n=1\nabc\n",
])
def test_dataset_format_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(io.DatasetFormatError):
        io.load_dataset(path)


def test_scaling_csv_schema(tmp_path):
    path = tmp_path / "s.csv"
    io.write_scaling(path, [ScalingRow(2, 8, 0, 1, 5, 8, 1.23456)])
    assert path.read_text() == "p,b,iteration,epoch,master_points,worker_points_max,wall_ms\n2,8,0,1,5,8,1.235\n"


def test_generate_then_load(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert main(["generate", "-n", "40", "--dim", "5", "--seed", "3", "--output", str(out)]) == EXIT_OK
    X = io.load_dataset(out)
    assert X.shape == (40, 5)
    assert np.array_equal(X, gen_dp_mixture(GenConfig(40, dim=5, seed=3)).points)


def test_run_summary_matches_serial_for_single_block(tmp_path, capsys):
    data = tmp_path / "d.csv"
    X = gen_dp_mixture(GenConfig(60, dim=2, seed=1)).points
    io.save_dataset(data, X)
    assert main(["run", "--algorithm", "dpmeans", "--data", str(data), "--iters", "1",
                 "--output", str(tmp_path / "c.csv")]) == EXIT_OK
    ref = serial_dpmeans(X, 1.0, max_iters=1)
    assert io.load_dataset(tmp_path / "c.csv").tobytes() == ref.centers.tobytes()
    assert f"K={ref.n_centers}" in capsys.readouterr().out


@pytest.mark.parametrize("alg", ["dpmeans", "ofl", "bpmeans"])
def test_run_is_deterministic_and_checks_serial(alg, tmp_path, capsys):
    argv = ["run", "--algorithm", alg, "-n", "120", "--dim", "3", "--processors", "4", "--block-size", "5",
            "--seed", "7", "--check-serial", "--trace", str(tmp_path / "t.csv")]
    assert main(argv) == EXIT_OK
    first = capsys.readouterr().out
    assert main(argv) == EXIT_OK
    assert capsys.readouterr().out == first
    assert "\nPASS " in first
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(io.TRACE_FIELDS)
    assert len(rows) % 120 == 0


def test_verify_exit_codes(capsys):
    base = ["verify", "--algorithm", "dpmeans", "-n", "200", "--dim", "2", "--processors", "4", "--block-size", "5"]
    assert main(base) == EXIT_OK
    assert capsys.readouterr().out.startswith("PASS")
    assert main(base + ["--skip-validation"]) == EXIT_VERIFY
    assert capsys.readouterr().out.startswith("FAIL")


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--algorithm", "kmeans"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["run", "--algorithm", "ofl", "--lambda", "-1"])
    assert exc.value.code == EXIT_USAGE
    assert main(["run", "--algorithm", "ofl", "--data", str(tmp_path / "missing.csv")]) == EXIT_USAGE
    assert main(["experiment", "scaling", "--algorithm", "ofl", "--pb", "10", "--processors", "1,4"]) == EXIT_USAGE


def test_rejections_csv(tmp_path):
    out = tmp_path / "r.csv"
    argv = ["experiment", "rejections", "--algorithm", "ofl", "--n-values", "32,64,96", "--pb-values", "16",
            "--trials", "2", "--dim", "2", "--output", str(out)]
    assert main(argv) == EXIT_OK
    text = out.read_text()
    assert text.splitlines()[0] == "algorithm,n,pb,trial,proposed,accepted,rejected"
    recs = io.read_rejections(out)
    assert len(recs) == 6 and all(r.rejected == r.proposed - r.accepted for r in recs)
    assert main(argv) == EXIT_OK and out.read_text() == text


def test_scaling_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["experiment", "scaling", "--algorithm", "dpmeans", "-n", "256", "--dim", "2", "--pb", "32",
                 "--processors", "1,2,4", "--iters", "2", "--output", str(out)]) == EXIT_OK
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    by_p = {p: [(r["iteration"], r["epoch"], r["master_points"]) for r in rows if r["p"] == p] for p in "124"}
    assert by_p["1"] == by_p["2"] == by_p["4"]
    assert {r["b"] for r in rows if r["p"] == "4"} == {"8"}
