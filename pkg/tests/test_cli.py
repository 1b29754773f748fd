import json
import subprocess
import sys

import numpy as np
import pytest

from wamaudit import cli
from wamaudit.render import format_matrix

COMPAS = "tests/data/compas.csv"
GERMAN = "tests/data/german.csv"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_compas_race_table(capsys):
    code, out, _ = run(capsys, "audit", "--data", COMPAS, "--y", "decile_score", "--s", "race",
                       "--exclude", "two_year_recid")
    assert code == 0
    lines = out.splitlines()
    assert lines[1].split() == ["African-American.cf", "Caucasian.cf", "Hispanic.cf", "Other.cf"]
    row = dict((ln.split()[0], ln.split()[1:]) for ln in lines[2:6])
    caucasian = [float(v) for v in row["Caucasian.act"]]
    # reference table value for Caucasian x Caucasian is 3.67
    assert abs(caucasian[1] - 3.67) <= 0.15
    assert "Analytic standard errors" in out


def test_german_age_knn_interval_labels(capsys):
    code, out, _ = run(capsys, "audit", "--data", GERMAN, "--y", "good_credit", "--s", "age",
                       "--bins", "3", "--model", "knn")
    assert code == 0
    lines = out.splitlines()
    labels = ["(18.9,37.7]", "(37.7,56.3]", "(56.3,75.1]"]
    assert lines[1].split() == [f"{lab}.cf" for lab in labels]
    assert [ln.split()[0] for ln in lines[2:5]] == [f"{lab}.act" for lab in labels]


def test_bootstrap_output_byte_identical_across_jobs(capsys):
    args = ["audit", "--data", COMPAS, "--y", "decile_score", "--s", "sex", "--exclude",
            "two_year_recid", "--boot", "100", "--seed", "7"]
    outs = []
    for jobs in ("1", "1", "4"):
        code, out, _ = run(capsys, *args, "--jobs", jobs)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1] == outs[2]
    hdr = "act,cf,myGrpEst,myGrpSE,theirGrpEst,theirGrpSE,bias,biasSE"
    code, out, _ = run(capsys, *args, "--format", "csv")
    assert hdr in out.splitlines()


def test_env_seed(capsys, monkeypatch):
    args = ["audit", "--data", COMPAS, "--y", "decile_score", "--s", "sex",
            "--features", "age,priors_count", "--boot", "20", "--format", "json"]
    monkeypatch.setenv("WAM_SEED", "7")
    _, env_out, _ = run(capsys, *args)
    assert json.loads(env_out)["metadata"]["seed"] == 7
    _, flag_out, _ = run(capsys, *args, "--seed", "7")
    assert env_out == flag_out
    # the flag wins over the environment
    _, other, _ = run(capsys, *args, "--seed", "8")
    assert json.loads(other)["metadata"]["seed"] == 8
    monkeypatch.setenv("WAM_SEED", "abc")
    code, _, err = run(capsys, *args)
    assert code == 2 and err.startswith("wam: error[config]:")


def test_json_round_trip(capsys, tmp_path):
    dest = tmp_path / "r.json"
    code, out, _ = run(capsys, "audit", "--data", COMPAS, "--y", "two_year_recid", "--s", "race",
                       "--features", "age,priors_count,sex", "--model", "logistic",
                       "--rate", "paper_gamma", "--boot", "10", "--format", "json",
                       "--output", str(dest))
    assert code == 0 and out == ""
    doc = json.loads(dest.read_text())
    meta = doc["metadata"]
    assert meta["variant"] == "paper_gamma" and meta["threshold"] == 0.5
    assert meta["model"] == "logistic" and meta["n_resamples"] == 10
    assert meta["sensitive_in_features"] is False

    cfg = cli.AuditConfig(COMPAS, "two_year_recid", ["race"],
                          feature_cols=["age", "priors_count", "sex"], model="logistic")
    res = cli.run_audit(cfg)
    assert np.array_equal(np.array(doc["wam_matrix"]["values"]), res.wam.values)
    assert doc["wam_matrix"]["act"] == list(res.wam.group_labels)


def test_formats_carry_same_numbers(capsys):
    base = ["audit", "--data", COMPAS, "--y", "decile_score", "--s", "sex",
            "--features", "age,priors_count"]
    _, js, _ = run(capsys, *base, "--format", "json")
    _, cs, _ = run(capsys, *base, "--format", "csv")
    _, tb, _ = run(capsys, *base)
    vals = np.array(json.loads(js)["wam_matrix"]["values"])
    csv_rows = cs.splitlines()[2:4]
    csv_vals = np.array([[float(v) for v in r.split(",")[1:]] for r in csv_rows])
    assert np.array_equal(vals, csv_vals)
    tb_vals = np.array([[float(v) for v in ln.split()[1:]] for ln in tb.splitlines()[2:4]])
    np.testing.assert_allclose(tb_vals, vals, atol=0.005 + 1e-12)


def test_two_by_two_table_lines():
    text = format_matrix(("men", "women"), np.array([[1.0, 2.5], [3.333, 4.0]]))
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[0].split() == ["men.cf", "women.cf"]
    assert lines[2].split() == ["women.act", "3.33", "4.00"]


@pytest.mark.parametrize("argv,code,category", [
    (["--y", "decile_score", "--s", "decile_score"], 2, "config"),
    (["--y", "decile_score", "--s", "race", "--boot", "1"], 2, "config"),
    (["--y", "decile_score", "--s", "race", "--features", "race"], 2, "config"),
    (["--y", "nope", "--s", "race"], 3, "data"),
    (["--y", "decile_score", "--s", "age"], 3, "data"),
    (["--y", "decile_score", "--s", "race", "--min-group-size", "5000"], 3, "data"),
    (["--y", "decile_score", "--s", "race", "--model", "logistic"], 4, "fit"),
])
def test_exit_codes(capsys, argv, code, category):
    got, out, err = run(capsys, "audit", "--data", COMPAS, *argv)
    assert got == code
    assert out == ""
    assert len(err.splitlines()) == 1
    assert err.startswith(f"wam: error[{category}]:")


def test_missing_file_is_data_error(capsys, tmp_path):
    got, _, err = run(capsys, "audit", "--data", str(tmp_path / "x.csv"), "--y", "a", "--s", "b")
    assert got == 3 and "error[data]" in err


def test_warnings_summarized(capsys, tmp_path):
    p = tmp_path / "d.csv"
    rows = ["y,x,c,g"] + [f"{i % 7},{i},{'pq'[i % 2] if i < 30 else 'r'},{'ab'[i % 2]}"
                          for i in range(60)] + ["1,,p,a"]
    p.write_text("\n".join(rows) + "\n")
    code, out, _ = run(capsys, "audit", "--data", str(p), "--y", "y", "--s", "g", "--format",
                       "json")
    assert code == 0
    warns = json.loads(out)["metadata"]["warnings"]
    assert warns["dropped_rows"] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "wamaudit", "audit", "--data", COMPAS, "--y",
                           "decile_score", "--s", "sex", "--features", "age"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "Female.act" in proc.stdout
