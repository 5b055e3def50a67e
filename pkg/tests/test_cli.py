import csv
import json

import pytest

from fedinv import cli

QUICK = "configs/quickstart.toml"


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["run", "--config", QUICK, "--out", str(out), "--quiet"]) == 0
    return out


def test_run_writes_outputs(quick_run):
    for name in ("config.toml", "final.params", "final_eval.json", "rounds.csv", "summary.csv",
                 "theory.json"):
        assert (quick_run / name).is_file()
    final = json.loads((quick_run / "final_eval.json").read_text())
    assert set(final) >= {"ood_acc", "max_penalty"}


def test_run_is_repeatable_and_config_untouched(quick_run, tmp_path):
    before = open(QUICK, "rb").read()
    assert cli.main(["run", "--config", QUICK, "--out", str(tmp_path), "--quiet"]) == 0
    assert open(QUICK, "rb").read() == before
    for name in ("rounds.csv", "summary.csv", "final_eval.json", "theory.json"):
        assert (tmp_path / name).read_bytes() == (quick_run / name).read_bytes()


def test_seed_override_changes_run(quick_run, tmp_path):
    cli.main(["run", "--config", QUICK, "--seed", "7", "--out", str(tmp_path), "--quiet"])
    assert (tmp_path / "summary.csv").read_bytes() != (quick_run / "summary.csv").read_bytes()
    assert "seed = 7" in (tmp_path / "config.toml").read_text()


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[schedule]\nlambda = -0.1\n[[clients]]\nid = 0\nenv = 0\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "schedule.lambda" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == 1


def test_divergence_exit_code(tmp_path):
    cfg = tmp_path / "hot.toml"
    text = open(QUICK).read().replace("eta = 0.0002", "eta = 50.0")
    assert text != open(QUICK).read()
    cfg.write_text(text)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_sweep_rows_sorted_by_lambda(tmp_path):
    assert cli.main(["sweep", "--config", QUICK, "--out", str(tmp_path), "--quiet"]) == 0
    with open(tmp_path / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    lams = [float(r["lambda"]) for r in rows]
    assert lams == sorted(lams) and len(lams) == 4
    assert all(r["status"] == "ok" for r in rows)
    assert (tmp_path / "lambda_0.001" / "summary.csv").is_file()


def test_gen_data_and_pretrain(tmp_path):
    assert cli.main(["gen-data", "--config", QUICK, "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "envs.fedinv").stat().st_size > 0
    assert cli.main(["pretrain-score", "--config", QUICK, "--out", str(tmp_path), "--quiet"]) == 0
    doc = json.loads((tmp_path / "exit_scores.json").read_text())
    assert sorted(doc["included"] + doc["excluded"]) == [0, 1, 2, 3]


def test_theory_check(tmp_path):
    cfg = tmp_path / "t.toml"
    cfg.write_text("[theory]\npoints = 5\ngrid_resolution = 10\nT_grid = [10, 50]\n"
                   "[[clients]]\nid = 0\nenv = 0\n")
    assert cli.main(["theory-check", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "theory.json").read_text())
    assert len(report["bound_checks"]) == 5


def test_plot_is_byte_stable(quick_run, tmp_path):
    assert cli.main(["plot", str(quick_run), "--out", str(tmp_path / "p1"), "--quiet"]) == 0
    assert cli.main(["plot", str(quick_run), "--out", str(tmp_path / "p2"), "--quiet"]) == 0
    a = (tmp_path / "p1" / "ood_acc.svg").read_bytes()
    assert a == (tmp_path / "p2" / "ood_acc.svg").read_bytes()
    assert cli.main(["plot", str(tmp_path / "nothing")]) == 1
