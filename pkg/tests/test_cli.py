import json

import numpy as np
import pytest

from dope.cli import (
    EXECUTION_KEYS,
    REPORT_COLUMNS,
    canonical_json,
    config_hash,
    main,
    read_config_file,
    resolve_config,
)
from dope.data import ContrastSpec, IngestionOptions, load_csv, standardize, write_csv
from dope.estimators import ClipRange
from dope.inference import bootstrap, bootstrap_interval
from dope.pipeline import ALL_METHODS, MethodSettings, compute_methods
from dope.regressors.network import TrainConfig
from dope.simulation import PAPER_RMSE_GRID

from conftest import make_table


def _csv_body(text):
    lines = text.splitlines()
    assert lines[0].startswith("# config=")
    return lines[1:]


def _stderr_payload(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


@pytest.fixture
def data_csv(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(make_table(n=500, d=3, seed=11), path)
    return path


class TestConfig:

    def test_precedence(self, tmp_path):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"N": 7, "d": 5, "preset": "paper-rmse"}))
        cfg = resolve_config("simulate", {"config": str(cfg_file), "d": "4"})
        assert cfg["N"] == 7
        assert cfg["d"] == 4
        assert cfg["ns"] == list(PAPER_RMSE_GRID.ns)

    def test_paper_preset(self):
        cfg = resolve_config("simulate", {"preset": "paper-rmse"})
        assert cfg["ns"] == [300, 900, 2700]
        assert cfg["links"] == ["lin", "square", "cbrt", "sin"]
        assert cfg["modes"] == ["stratified", "joint"]
        assert cfg["N"] == 900
        assert set(cfg["methods"]) >= {"reg-ols", "aipw-ols", "dope-ols", "reg-nn", "aipw-nn", "dope-idx",
                                       "dope-bcl"}

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ValueError):
            resolve_config("oracle-check", {"config": str(path)})

    def test_hash_is_git_blob(self):
        assert config_hash({}) == "9e26dfeeb6e641a33dae4961196235bdb965b21b"

    def test_canonical_json_sorted(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_list_values_from_strings(self):
        cfg = resolve_config("simulate", {"ns": "300, 900", "clip": "0.05,0.95"})
        assert cfg["ns"] == [300, 900]
        assert cfg["clip"] == [0.05, 0.95]


class TestEstimate:

    def test_naive_single_row(self, data_csv, capsys):
        code = main(["estimate", "--data", str(data_csv), "--treatment-col", "T", "--outcome-col", "Y",
                     "--methods", "naive", "--bootstrap", "0"])
        assert code == 0
        body = _csv_body(capsys.readouterr().out)
        assert body[0] == ",".join(REPORT_COLUMNS)
        assert len(body) == 2
        fields = body[1].split(",")
        assert fields[0] == "naive"
        assert fields[2:5] == ["", "", ""]

    def test_json_nulls_without_bootstrap(self, data_csv, capsys):
        main(["estimate", "--data", str(data_csv), "--treatment-col", "T", "--outcome-col", "Y",
              "--methods", "naive,ipw", "--bootstrap", "0", "--format", "json"])
        doc = json.loads(capsys.readouterr().out)
        assert [r["estimator"] for r in doc["rows"]] == ["naive", "ipw"]
        assert all(r["bs_se"] is None and r["bs_ci_lo"] is None for r in doc["rows"])

    def test_matches_library(self, data_csv, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["estimate", "--data", str(data_csv), "--treatment-col", "T", "--outcome-col", "Y",
                     "--methods", ",".join(ALL_METHODS), "--bootstrap", "3", "--iterations", "40",
                     "--seed", "5", "--out-dir", str(out)])
        assert code == 0
        capsys.readouterr()
        doc = json.loads((out / "report.json").read_text())
        rows = {r["estimator"]: r for r in doc["rows"]}

        table = standardize(load_csv(data_csv, IngestionOptions("T", "Y")))
        target = ContrastSpec.difference(table.label_id("1"), table.label_id("0"))
        settings = MethodSettings.for_mode("stratified", TrainConfig(iterations=40), ClipRange())
        point = compute_methods(table, ALL_METHODS, target, settings, 5)

        def closure(resampled, child_seed):
            res = compute_methods(resampled, ALL_METHODS, target, settings, child_seed)
            return np.array([res[m].value for m in ALL_METHODS])

        boot = bootstrap(table, closure, 3, 5)
        for k, m in enumerate(ALL_METHODS):
            assert rows[m]["estimate"] == pytest.approx(point[m].value, abs=1e-12)
            assert rows[m]["asym_se"] == pytest.approx(point[m].se, abs=1e-12)
            assert rows[m]["bs_se"] == pytest.approx(boot.se[k], abs=1e-12)
            iv = bootstrap_interval(point[m].value, boot, 0.95, "bootstrap_percentile", k)
            assert rows[m]["bs_ci_lo"] == pytest.approx(iv.lo, abs=1e-12)
        ses = [r["bs_se"] for r in doc["rows"]]
        assert ses == sorted(ses)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == config_hash(doc["config"])
        assert not set(EXECUTION_KEYS) & set(doc["config"])

    def test_missing_required(self, capsys):
        assert main(["estimate", "--treatment-col", "T"]) == 2
        payload = _stderr_payload(capsys)
        assert payload["exit_code"] == 2
        assert payload["error"] == "ConfigError"

    def test_missing_file(self, tmp_path, capsys):
        code = main(["estimate", "--data", str(tmp_path / "nope.csv"), "--treatment-col", "T",
                     "--outcome-col", "Y", "--bootstrap", "0"])
        assert code == 3
        assert _stderr_payload(capsys)["exit_code"] == 3

    def test_missing_column(self, data_csv, capsys):
        code = main(["estimate", "--data", str(data_csv), "--treatment-col", "T", "--outcome-col", "Z",
                     "--bootstrap", "0"])
        assert code == 3
        assert _stderr_payload(capsys)["error"] == "MissingColumn"

    def test_unknown_method(self, data_csv, capsys):
        code = main(["estimate", "--data", str(data_csv), "--treatment-col", "T", "--outcome-col", "Y",
                     "--methods", "magic"])
        assert code == 2

    def test_bootstrap_one_rejected(self, data_csv, capsys):
        code = main(["estimate", "--data", str(data_csv), "--treatment-col", "T", "--outcome-col", "Y",
                     "--bootstrap", "1"])
        assert code == 2


class TestSimulate:

    ARGS = ["simulate", "--ns", "60", "--links", "lin,cbrt", "--methods", "naive,aipw-ols,dope-ols",
            "--modes", "stratified,joint", "--N", "3", "--d", "3", "--truth-draws", "100000"]

    def test_minimal_grid(self, tmp_path, capsys):
        out = tmp_path / "a"
        assert main(self.ARGS + ["--out-dir", str(out)]) == 0
        body = _csv_body(capsys.readouterr().out)
        assert body[0] == "method,link,n,regression_mode,sqrt_n_rmse,clt_halfwidth,n_replicates"
        assert len(body) == 1 + 2 * (1 + 2 * 2)
        assert {p.name for p in out.iterdir()} == {"rmse.csv", "rmse.json", "manifest.json"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["flagged_cells"] == []
        assert manifest["seed"] == 0

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        main(self.ARGS + ["--out-dir", str(a)])
        main(self.ARGS + ["--out-dir", str(b), "--threads", "2"])
        main(["simulate", "--config", str(a / "rmse.csv"), "--out-dir", str(c)])
        capsys.readouterr()
        first = (a / "rmse.csv").read_bytes()
        assert (b / "rmse.csv").read_bytes() == first
        assert (c / "rmse.csv").read_bytes() == first
        assert (c / "rmse.json").read_bytes() == (a / "rmse.json").read_bytes()

    def test_config_round_trip_from_outputs(self, tmp_path, capsys):
        out = tmp_path / "a"
        main(self.ARGS + ["--out-dir", str(out)])
        capsys.readouterr()
        from_csv = read_config_file(out / "rmse.csv")
        assert from_csv == read_config_file(out / "rmse.json")
        assert from_csv == read_config_file(out / "manifest.json")

    def test_seed_changes_results(self, tmp_path, capsys):
        main(self.ARGS + ["--out-dir", str(tmp_path / "a")])
        main(self.ARGS + ["--out-dir", str(tmp_path / "b"), "--seed", "1"])
        capsys.readouterr()
        assert (tmp_path / "a" / "rmse.csv").read_bytes() != (tmp_path / "b" / "rmse.csv").read_bytes()

    def test_bad_link(self, capsys):
        assert main(["simulate", "--links", "exp"]) == 2

    def test_bad_integer(self, capsys):
        assert main(["simulate", "--N", "2.5"]) == 2

    def test_bad_json_config(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        assert main(["simulate", "--config", str(path)]) == 2
        assert _stderr_payload(capsys)["exit_code"] == 2


class TestOracleCheck:

    def test_lemma1_passes(self, capsys):
        assert main(["oracle-check", "--suite", "lemma1", "--trials", "100"]) == 0
        body = _csv_body(capsys.readouterr().out)
        assert body[1].startswith("lemma1,100,")
        assert body[1].endswith(",true")

    def test_zero_trials(self, capsys):
        assert main(["oracle-check", "--trials", "0"]) == 2
        assert _stderr_payload(capsys)["exit_code"] == 2

    def test_symmetric_table(self, tmp_path, capsys):
        code = main(["oracle-check", "--suite", "symmetric", "--format", "json", "--out-dir", str(tmp_path)])
        doc = json.loads(capsys.readouterr().out)
        (suite,) = doc["suites"]
        names = [r["quantity"] for r in suite["details"]["table"]]
        assert "V(Z) general" in names
        assert suite["details"]["reversal_at_delta_0.01"]
        assert code == (0 if suite["passed"] else 1)
        assert (tmp_path / "oracle_report.json").exists()

    def test_unknown_suite(self, capsys):
        assert main(["oracle-check", "--suite", "other"]) == 2


class TestParser:

    def test_no_command(self, capsys):
        assert main([]) == 2
        assert _stderr_payload(capsys)["error"] == "ConfigError"

    def test_unknown_flag(self, capsys):
        assert main(["simulate", "--bogus", "1"]) == 2
