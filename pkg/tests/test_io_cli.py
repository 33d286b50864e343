import json

import numpy as np
import pytest

from tsvc.algorithm import FitConfig, fit_tsvc
from tsvc.cli import main
from tsvc.data import Dataset, predict
from tsvc.datasets import write_dataset
from tsvc.errors import MissingValue, ParseError, SchemaError
from tsvc.io import ColumnSpec, dumps_model, load_csv, loads_model, read_schema, tree_to_dot
from tsvc.simbench import ScenarioSpec, generate

SCHEMA = [ColumnSpec("y", "response"), ColumnSpec("a"), ColumnSpec("b", scale="binary")]


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def illustrative_files(tmp_path):
    data, _ = generate(ScenarioSpec("illustrative", 300), 2)
    write_dataset(data, tmp_path / "d.csv", tmp_path / "d.schema.json")
    return data, tmp_path / "d.csv", tmp_path / "d.schema.json"


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        d = load_csv(write(tmp_path / "x.csv", "y,a,b\n1,0.5,0\n2,1.5,1\n3,-2,1\n"), SCHEMA)
        assert d.n == 3 and d.names == ["a", "b"] and d.scales == ["continuous", "binary"]

    def test_ignored_columns(self, tmp_path):
        schema = SCHEMA + [ColumnSpec("id", "ignore")]
        d = load_csv(write(tmp_path / "x.csv", "id,y,a,b\nq,1,0.5,0\nr,2,1.5,1\n"), schema)
        assert d.names == ["a", "b"]

    def test_non_numeric(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_csv(write(tmp_path / "x.csv", "y,a,b\n1,0.5,0\n2,abc,1\n"), SCHEMA)
        assert exc.value.row == 2 and exc.value.column == "a"

    def test_missing(self, tmp_path):
        with pytest.raises(MissingValue) as exc:
            load_csv(write(tmp_path / "x.csv", "y,a,b\n1,,0\n"), SCHEMA)
        assert exc.value.row == 1

    def test_bad_binary(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(write(tmp_path / "x.csv", "y,a,b\n1,0.5,2\n"), SCHEMA)

    def test_missing_column(self, tmp_path):
        with pytest.raises(SchemaError):
            load_csv(write(tmp_path / "x.csv", "y,a\n1,0.5\n"), SCHEMA)

    def test_two_responses(self, tmp_path):
        with pytest.raises(SchemaError):
            load_csv(write(tmp_path / "x.csv", "y,a,b\n1,0.5,0\n"), [ColumnSpec("y", "response"),
                                                                    ColumnSpec("a", "response")])

    def test_swiss_extract(self, tmp_path, swiss):
        write_dataset(swiss, tmp_path / "s.csv", tmp_path / "s.json")
        d = load_csv(tmp_path / "s.csv", read_schema(tmp_path / "s.json"))
        assert d.n == 872 and d.p == 6
        assert d.scales[d.index_of("foreign")] == "binary"
        assert int(d.response.sum()) == 401


class TestSerialization:
    def test_round_trip_bytes(self, illustrative_files):
        data = illustrative_files[0]
        model = fit_tsvc(data, "gaussian", FitConfig(n_perm=99))
        text = dumps_model(model)
        assert dumps_model(loads_model(text)) == text
        np.testing.assert_array_equal(predict(loads_model(text), data), predict(model, data))

    def test_dot_node_count(self, illustrative_files):
        data = illustrative_files[0]
        model = fit_tsvc(data, "gaussian", FitConfig(n_perm=99))
        assert model.trees
        for tree in model.trees.values():
            dot = tree_to_dot(tree, model.names)
            assert dot.count("[shape=") == 2 * len(tree.leaves()) - 1
            assert "≤" in dot and "> " in dot


class TestCli:
    def test_fit_and_predict(self, illustrative_files, tmp_path):
        data, csv_path, schema = illustrative_files
        out = tmp_path / "fit"
        assert main(["fit", "--csv", str(csv_path), "--schema", str(schema), "--nperm", "99",
                     "--seed", "3", "--out-dir", str(out), "--threads", "1"]) == 0
        model = json.loads((out / "model.json").read_text())
        assert model["seed"] == 3 and model["schema"] == "tsvc-model/1"
        assert "deviance" in (out / "report.txt").read_text()
        assert (out / "tree_x1.dot").exists()
        pred = tmp_path / "pred.csv"
        assert main(["predict", "--model", str(out / "model.json"), "--csv", str(csv_path), "--out", str(pred)]) == 0
        rows = np.genfromtxt(pred, delimiter=",", names=True)
        fitted = predict(loads_model((out / "model.json").read_text()), data)
        np.testing.assert_allclose(rows["mu_hat"], fitted, atol=1e-10)

    def test_fit_seed_bit_identical(self, illustrative_files, tmp_path):
        _, csv_path, schema = illustrative_files
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            main(["fit", "--csv", str(csv_path), "--schema", str(schema), "--nperm", "49", "--seed", "8",
                  "--out-dir", str(out)])
            outs.append((out / "model.json").read_bytes())
        assert outs[0] == outs[1]

    def test_max_splits_zero(self, illustrative_files, tmp_path):
        _, csv_path, schema = illustrative_files
        main(["fit", "--csv", str(csv_path), "--schema", str(schema), "--nperm", "49", "--max-splits", "0",
              "--out-dir", str(tmp_path)])
        assert json.loads((tmp_path / "model.json").read_text())["trees"] == []

    def test_scenario_one_report_has_no_trees(self, tmp_path):
        data, _ = generate(ScenarioSpec("1", 250), 0)
        write_dataset(data, tmp_path / "s1.csv", tmp_path / "s1.json")
        main(["fit", "--csv", str(tmp_path / "s1.csv"), "--schema", str(tmp_path / "s1.json"), "--nperm", "199",
              "--out-dir", str(tmp_path)])
        assert "tr(" not in (tmp_path / "report.txt").read_text()

    def test_predict_hand_built_model(self, tmp_path):
        model = {"schema": "tsvc-model/1", "family": {"distribution": "poisson", "link": "log"},
                 "columns": [{"name": "a", "scale": "continuous"}, {"name": "b", "scale": "binary"}],
                 "intercept": 0.1, "trees": [], "excluded": [],
                 "linear": [{"predictor": 0, "coefficient": 0.5}, {"predictor": 1, "coefficient": -0.2}]}
        write(tmp_path / "m.json", json.dumps(model))
        write(tmp_path / "x.csv", "a,b\n1.0,0\n-2.0,1\n")
        assert main(["predict", "--model", str(tmp_path / "m.json"), "--csv", str(tmp_path / "x.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 0
        rows = np.genfromtxt(tmp_path / "p.csv", delimiter=",", names=True)
        np.testing.assert_allclose(rows["mu_hat"], np.exp([0.1 + 0.5, 0.1 - 1.0 - 0.2]), rtol=1e-14)

    def test_predict_empty_input(self, illustrative_files, tmp_path):
        _, csv_path, schema = illustrative_files
        main(["fit", "--csv", str(csv_path), "--schema", str(schema), "--nperm", "19", "--max-splits", "0",
              "--out-dir", str(tmp_path)])
        write(tmp_path / "empty.csv", "")
        assert main(["predict", "--model", str(tmp_path / "model.json"), "--csv", str(tmp_path / "empty.csv"),
                     "--out", str(tmp_path / "o.csv")]) == 0
        assert (tmp_path / "o.csv").read_text() == ""

    def test_predict_schema_mismatch(self, illustrative_files, tmp_path, capsys):
        _, csv_path, schema = illustrative_files
        main(["fit", "--csv", str(csv_path), "--schema", str(schema), "--nperm", "19", "--max-splits", "0",
              "--out-dir", str(tmp_path)])
        write(tmp_path / "bad.csv", "x1,x2\n1,2\n")
        code = main(["predict", "--model", str(tmp_path / "model.json"), "--csv", str(tmp_path / "bad.csv"),
                     "--out", str(tmp_path / "o.csv")])
        assert code == 3
        assert json.loads(capsys.readouterr().err)["error"]

    def test_simulate_smoke_and_determinism(self, tmp_path):
        args = ["simulate", "--scenario", "1", "--n", "100", "--sigma", "1", "--preset", "smoke", "--reps", "1",
                "--seed", "4", "--threads", "1"]
        assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes()
        lines = a.decode().strip().splitlines()
        assert len(lines) == 1 + 5
        assert lines[1].split(",")[-2] == "tpr_c" and lines[1].endswith(",")

    def test_simulate_checkpoint_resume(self, tmp_path):
        args = ["simulate", "--scenario", "3", "--n", "100", "--sigma", "1", "--preset", "smoke",
                "--checkpoint-dir", str(tmp_path / "ck"), "--threads", "1"]
        main(args + ["--out", str(tmp_path / "a.csv")])
        assert len(list((tmp_path / "ck").iterdir())) == 2
        main(args + ["--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    @pytest.mark.parametrize("argv,code", [
        (["fit"], 2),
        (["simulate", "--scenario", "9", "--out", "x.csv"], 2),
        (["simulate", "--scenario", "1", "--n", "0", "--out", "x.csv"], 2),
        (["fit", "--csv", "missing.csv", "--schema", "missing.json"], 3),
    ])
    def test_exit_codes(self, argv, code, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == code

    def test_fit_data_error(self, tmp_path):
        write(tmp_path / "x.csv", "y,a,b\n1,0.5,0\n2,oops,1\n")
        (tmp_path / "s.json").write_text(json.dumps({"columns": [
            {"name": "y", "role": "response"}, {"name": "a"}, {"name": "b", "scale": "binary"}]}))
        assert main(["fit", "--csv", str(tmp_path / "x.csv"), "--schema", str(tmp_path / "s.json"),
                     "--out-dir", str(tmp_path)]) == 3

    def test_datasets_command(self, tmp_path):
        pytest.importorskip("rdatasets")
        assert main(["datasets", "--out-dir", str(tmp_path)]) == 0
        assert read_schema(tmp_path / "ahs.schema.json")[0].name == "visits"
