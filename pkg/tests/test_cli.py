import csv
import json
import subprocess

import numpy as np
import pytest

from scotoma.cli import main
from scotoma.dataset import write_dataset
from scotoma.fitting import fit_initial
from scotoma.matcher import greedy_match


@pytest.fixture
def toy_csv(tmp_path, toy_dataset):
    path = tmp_path / "data.csv"
    write_dataset(toy_dataset, path)
    return path


def write_config(tmp_path, name="cfg.json", **cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestFitCommand:
    def test_initial_fit_outputs(self, tmp_path, toy_csv, toy_dataset):
        cfg = write_config(tmp_path, mode="initial")
        out = tmp_path / "out"
        assert main(["fit", "--config", str(cfg), "--data", str(toy_csv),
                     "--out", str(out)]) == 0
        with open(out / "beta.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["coordinate"] for r in rows] == ["x1", "x2"]
        vec = np.array([float(r["weight"]) for r in rows])
        assert np.linalg.norm(vec) == pytest.approx(1.0)
        beta, _ = fit_initial(toy_dataset)
        np.testing.assert_array_equal(vec, beta.beta)
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["mode"] == "initial"
        assert set(diag["manifest"]) == {"beta.csv", "trajectory.csv"}

    def test_self_taught_writes_object_matching(self, tmp_path, toy_csv):
        cfg = write_config(tmp_path, mode="self_taught", tau1=1, tau2=1,
                           delta0=0.0, max_iters=1, epsilon=1e9)
        out = tmp_path / "out"
        assert main(["fit", "--config", str(cfg), "--data", str(toy_csv),
                     "--out", str(out)]) == 0
        assert (out / "object_matching.csv").exists()
        diag = json.loads((out / "diagnostics.json").read_text())
        assert "object_matching.csv" in diag["manifest"]

    def test_tau2_without_self_taught_mode(self, tmp_path, toy_csv, capsys):
        cfg = write_config(tmp_path, mode="canonical", tau2=1)
        assert main(["fit", "--config", str(cfg), "--data", str(toy_csv),
                     "--out", str(tmp_path / "o")]) == 1
        assert "tau2 requires self_taught" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, toy_csv, capsys):
        cfg = write_config(tmp_path, mode="initial", taul=2)
        assert main(["fit", "--config", str(cfg), "--data", str(toy_csv),
                     "--out", str(tmp_path / "o")]) == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_bad_data_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mode="initial")
        bad = tmp_path / "bad.csv"
        bad.write_text("id,group,pair_id,role,x1\na,c,P1,train,0.0\n")
        assert main(["fit", "--config", str(cfg), "--data", str(bad),
                     "--out", str(tmp_path / "o")]) == 2
        assert "data error" in capsys.readouterr().err

    def test_numeric_failure_exit_3(self, tmp_path, capsys):
        # a single training pair cannot identify a weight vector
        cfg = write_config(tmp_path, mode="initial")
        data = tmp_path / "one.csv"
        data.write_text("id,group,pair_id,role,x1\n"
                        "a,c,P1,train,0.0\nb,t,P1,train,1.0\n")
        assert main(["fit", "--config", str(cfg), "--data", str(data),
                     "--out", str(tmp_path / "o")]) == 3
        assert "insufficient pairs" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tmp_path, toy_csv):
        cfg = write_config(tmp_path, mode="canonical", tau1=1)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["fit", "--config", str(cfg), "--data", str(toy_csv),
                         "--out", str(out)]) == 0
        for name in ("beta.csv", "trajectory.csv", "diagnostics.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestMatchCommand:
    def fit_beta(self, tmp_path, toy_csv):
        cfg = write_config(tmp_path, mode="initial")
        out = tmp_path / "fit"
        assert main(["fit", "--config", str(cfg), "--data", str(toy_csv),
                     "--out", str(out)]) == 0
        return out / "beta.csv"

    def test_round_trip_matches_in_process(self, tmp_path, toy_csv, toy_dataset):
        beta_path = self.fit_beta(tmp_path, toy_csv)
        out = tmp_path / "match"
        assert main(["match", "--beta", str(beta_path), "--data", str(toy_csv),
                     "--out", str(out)]) == 0
        with open(out / "matching.csv") as fh:
            rows = list(csv.DictReader(fh))
        beta, _ = fit_initial(toy_dataset)
        expected = greedy_match(beta, list(toy_dataset.object_control),
                                list(toy_dataset.object_treatment))
        got = [(r["control_id"], r["treatment_id"], float(r["score"]))
               for r in rows]
        assert got == [(c, t, s) for c, t, s in expected.pairs]

    def test_epsilon_below_minimum_empty_matching(self, tmp_path, toy_csv):
        beta_path = self.fit_beta(tmp_path, toy_csv)
        out = tmp_path / "match"
        assert main(["match", "--beta", str(beta_path), "--data", str(toy_csv),
                     "--epsilon", "1e-12", "--out", str(out)]) == 0
        lines = (out / "matching.csv").read_text().strip().splitlines()
        assert lines == ["control_id,treatment_id,score,rank"]
        with open(out / "unmatched.csv") as fh:
            unmatched = list(csv.DictReader(fh))
        assert len(unmatched) == 4

    def test_epsilon_inf_means_no_gate(self, tmp_path, toy_csv):
        beta_path = self.fit_beta(tmp_path, toy_csv)
        out = tmp_path / "match"
        assert main(["match", "--beta", str(beta_path), "--data", str(toy_csv),
                     "--epsilon", "inf", "--out", str(out)]) == 0
        lines = (out / "matching.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + both object pairs

    def test_invalid_epsilon(self, tmp_path, toy_csv, capsys):
        beta_path = self.fit_beta(tmp_path, toy_csv)
        assert main(["match", "--beta", str(beta_path), "--data", str(toy_csv),
                     "--epsilon", "verytight", "--out", str(tmp_path / "m")]) == 1
        assert "epsilon" in capsys.readouterr().err

    def test_beta_dimension_mismatch(self, tmp_path, toy_csv, capsys):
        beta_path = tmp_path / "beta.csv"
        beta_path.write_text("coordinate,weight\nx1,1.0\nx2,0.0\nx3,0.0\n")
        assert main(["match", "--beta", str(beta_path), "--data", str(toy_csv),
                     "--out", str(tmp_path / "m")]) == 2
        assert "3 coordinates" in capsys.readouterr().err


class TestSimulateCommand:
    def test_random_table(self, tmp_path):
        cfg = write_config(tmp_path, protocol="random_table",
                           n_pairs=[5, 10], replicates=20000, seed=0)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["n_pairs"]) for r in rows] == [5, 10]
        for r in rows:
            n = int(r["n_pairs"])
            assert float(r["mean_accuracy"]) == pytest.approx(1 / n, abs=0.01)
            assert float(r["prob_no_correct"]) == pytest.approx(
                (1 - 1 / n) ** n, abs=0.02)
        assert (out / "random_table.png").exists()

    def test_no_figures_flag(self, tmp_path):
        cfg = write_config(tmp_path, protocol="random_table", n_pairs=[4],
                           replicates=100)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--no-figures"]) == 0
        assert not (out / "random_table.png").exists()
        manifest = json.loads((out / "diagnostics.json").read_text())["manifest"]
        assert set(manifest) == {"results.csv", "summary.json"}

    def test_grid_protocol_renders_figure(self, tmp_path):
        cfg = write_config(
            tmp_path, protocol="linear_grid",
            dgp={"p": 5, "n_train_pairs": 5, "n_test_pairs": 5},
            methods=["euclidean"], replicates=2, seed=0)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "results.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 2
        assert (out / "accuracy_boxplot.png").stat().st_size > 0

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(
            tmp_path, protocol="linear_grid",
            dgp={"p": 5, "n_train_pairs": 5, "n_test_pairs": 5},
            methods=["euclidean", "scotoma_initial"], replicates=3, seed=7)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["simulate", "--config", str(cfg), "--out", str(out),
                         "--no-figures"]) == 0
        for name in ("results.csv", "summary.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_unknown_protocol(self, tmp_path, capsys):
        cfg = write_config(tmp_path, protocol="quantum_table")
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "s")]) == 1
        assert "unknown protocol" in capsys.readouterr().err

    def test_interaction_table(self, tmp_path):
        cfg = write_config(tmp_path, protocol="interaction_table",
                           n_pairs=[8], n_interactions=[1], p=6,
                           replicates=3, seed=0)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["n_pairs"] == "8" and rows[0]["n_interactions"] == "1"

    def test_self_taught_gain(self, tmp_path):
        cfg = write_config(
            tmp_path, protocol="self_taught_gain",
            dgp={"p": 5, "n_train_pairs": 5, "n_unpaired": 5,
                 "n_test_pairs": 6},
            replicates=4, iterations=2, seed=0)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert "mean_gain" in summary
        assert len(summary["quadratic_coefficients"]) == 3
        assert (out / "gain_scatter.png").exists()


class TestEvaluateCommand:
    def test_accuracy(self, tmp_path, capsys):
        matching = tmp_path / "m.csv"
        matching.write_text("control_id,treatment_id,score,rank\n"
                            "c1,t1,0.1,1\nc2,t9,0.2,2\n")
        truth = tmp_path / "t.csv"
        truth.write_text("control_id,treatment_id\nc1,t1\nc2,t2\n")
        out = tmp_path / "eval.json"
        assert main(["evaluate", "--matching", str(matching),
                     "--truth", str(truth), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload == {"accuracy": 0.5, "n_predicted": 2, "n_truth": 2}
        assert json.loads(capsys.readouterr().out) == payload

    def test_missing_file(self, tmp_path, capsys):
        assert main(["evaluate", "--matching", str(tmp_path / "nope.csv"),
                     "--truth", str(tmp_path / "nope2.csv")]) == 2
        assert "data error" in capsys.readouterr().err


def test_console_script_installed(tmp_path):
    proc = subprocess.run(["scotoma", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "fit" in proc.stdout and "simulate" in proc.stdout
