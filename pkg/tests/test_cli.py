import csv
import json

import pytest

from mpcaug.cli import main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


EQP = {"problem": "oracle-eqp", "pbox": [[0, 2]],
       "augment": {"anchors": {"kind": "grid", "dims": [2]},
                   "neighborhood": {"kind": "grid", "dims": [5]}}}


def test_generate_oracle(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {**EQP, "output_dir": str(tmp_path / "out")})
    assert main(["generate", cfg]) == 0
    with open(tmp_path / "out" / "dataset.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["p_0", "u_0"]
    assert len(rows) == 1 + 2 * (1 + 5)
    report = json.loads((tmp_path / "out" / "dataset_report.json").read_text())
    assert report["n_anchors"] == 2 and report["n_augmented"] == 10
    assert "t_exact_s" in report and "t_augment_s" in report


def test_generate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        cfg = write(tmp_path / f"{name}.json", {**EQP, "output_dir": str(tmp_path / name)})
        assert main(["generate", cfg]) == 0
    for f in ("dataset.csv", "dataset_primal_dual.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("eps", [0, -1e-3])
def test_nonpositive_eps_tol(tmp_path, capsys, eps):
    cfg = write(tmp_path / "c.json", {**EQP, "augment": {"eps_tol": eps}})
    assert main(["generate", cfg]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["field"] == "augment.eps_tol"


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {**EQP, "colour": "blue"})
    assert main(["generate", cfg]) == 2
    assert "colour" in json.loads(capsys.readouterr().err)["message"]


def test_unreadable_config(tmp_path, capsys):
    assert main(["generate", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["generate", str(tmp_path / "bad.json")]) == 2


def test_fit_and_garbled(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {**EQP, "output_dir": str(tmp_path)})
    assert main(["generate", cfg]) == 0
    assert main(["fit", str(tmp_path / "dataset.csv"), str(tmp_path / "m.json")]) == 0
    model = json.loads((tmp_path / "m.json").read_text())
    assert set(model) == {"normalization", "bandwidth", "centers", "targets"}
    lines = (tmp_path / "dataset.csv").read_text().splitlines()
    lines[4] = "0.3,oops,augmented,0,0,0,false,"
    (tmp_path / "g.csv").write_text("\n".join(lines))
    capsys.readouterr()
    assert main(["fit", str(tmp_path / "g.csv"), str(tmp_path / "m2.json")]) == 1
    assert "row 5" in json.loads(capsys.readouterr().err)["message"]
    (tmp_path / "empty.csv").write_text(lines[0] + "\n")
    assert main(["fit", str(tmp_path / "empty.csv"), str(tmp_path / "m3.json")]) == 1


def test_rollout_at_target(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["rollout", "expert", "--x0", "3.14,0", "--T", "2", "--out", str(out)]) == 0
    summary = json.loads((out / "rollout_summary.json").read_text())
    assert summary["reached"] and summary["t_reached"] == 0.0
    with open(out / "rollout.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "omega", "omegadot", "u"]
    for row in rows[1:]:
        assert abs(float(row[1]) - 3.14) <= 0.15 and abs(float(row[2])) <= 0.2
    assert (out / "rollout.gp").exists()


def test_rollout_bad_x0(tmp_path):
    assert main(["rollout", "expert", "--x0", "1,2,3", "--out", str(tmp_path)]) == 2


def test_case_small(tmp_path):
    cfg = write(tmp_path / "c.json", {"neighborhood": [3, 3], "probe_count": 4})
    assert main(["case", "3", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "case3_report.json").read_text())
    for key in ("case_id", "n_exact", "n_augmented", "n_discarded", "t_exact_s", "t_augment_s",
                "max_error_predictor_only", "max_error_predictor_corrector", "probe_count",
                "seeds", "error_ratio"):
        assert key in report
    assert report["n_augmented"] == 9
    assert (tmp_path / "o" / "case3_predictor_corrector.csv").exists()


def test_case_unknown_option(tmp_path):
    cfg = write(tmp_path / "c.json", {"anchorz": [2, 2]})
    assert main(["case", "1", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_imitate_emits_table(tmp_path):
    cfg = write(tmp_path / "c.json", {"T": 0.2, "pendulum": {"mpc": {"N": 10}}})
    assert main(["imitate", "--rollouts", "2", "--augment", "2", "--config", cfg,
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "imitation_report.json").read_text())
    assert len(report["rollouts"]) == 2
    assert report["rollouts"][0]["n_feedback"] == 4


def test_bad_command_line():
    assert main(["case", "7"]) == 2
