import os

import numpy as np
import pytest

from fairrank.cli import main

from conftest import DATA_DIR

SMALL_INTER = os.path.join(DATA_DIR, "interactions_small.csv")
SMALL_GROUPS = os.path.join(DATA_DIR, "groups_small.csv")


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    """CSV pair produced by the synth command itself."""
    root = tmp_path_factory.mktemp("corpus")
    ini = _write(
        root / "synth.ini",
        "[synthetic]\n"
        "num_users = 80\n"
        "num_items = 30\n"
        "num_groups = 2\n"
        "group_item_shares = 0.75,0.25\n"
        "group_popularity = 0.75,0.25\n"
        "interactions_per_user = 6\n"
        "seed = 5\n",
    )
    out = root / "data"
    assert main(["synth", "--config", ini, "--out", str(out)]) == 0
    return out


def _exp_ini(path, corpus_dir, model="bpr", epochs=2, extra_train="",
             out_dir=None, eval_every=0):
    return _write(
        path,
        "[data]\n"
        f"interactions = {corpus_dir / 'interactions.csv'}\n"
        f"groups = {corpus_dir / 'groups.csv'}\n"
        "[train]\n"
        f"model = {model}\n"
        "dim = 8\n"
        f"epochs = {epochs}\n"
        f"eval_every = {eval_every}\n"
        "seed = 3\n"
        + extra_train
        + ("[output]\n" f"dir = {out_dir}\n" if out_dir is not None else "")
    )


def test_synth_outputs_are_loadable(corpus_dir):
    inter = (corpus_dir / "interactions.csv").read_text().splitlines()
    groups = (corpus_dir / "groups.csv").read_text().splitlines()
    assert inter[0] == "user_id,item_id"
    assert groups[0] == "item_id,group"
    assert len(inter) == 1 + 80 * 6
    # every interacted item carries a group row
    items = {line.split(",")[1] for line in inter[1:]}
    assert items == {line.split(",")[0] for line in groups[1:]}


def test_train_eval_roundtrip(corpus_dir, tmp_path, capsys):
    ini = _exp_ini(tmp_path / "exp.ini", corpus_dir,
                   out_dir=tmp_path / "runs", eval_every=2)
    assert main(["train", "--config", ini]) == 0
    out_lines = capsys.readouterr().out.strip().splitlines()
    run_dir = out_lines[-1]
    ckpt = os.path.join(run_dir, "checkpoint")
    assert out_lines[-2] == f"checkpoint: {ckpt}"
    assert os.path.exists(ckpt)
    log_lines = open(os.path.join(run_dir, "trainlog.csv")).read().splitlines()
    assert log_lines[0] == "epoch,loss_bpr,loss_adv,loss_kl,val_f1_15,seconds"
    assert len(log_lines) == 3
    assert os.path.exists(os.path.join(run_dir, "config.resolved"))

    assert main(["eval", "--config", ini, "--checkpoint", ckpt]) == 0
    out = capsys.readouterr().out
    for k in (5, 10, 15):
        assert f"k={k}\tf1=" in out
    report_path = os.path.join(run_dir, "report.json")
    assert f"report: {report_path}" in out
    import json

    report = json.loads(open(report_path).read())
    for key in ("f1@15", "ndcg@15", "rsp@15", "reo@15",
                "js_user", "js_group_all", "group_probs"):
        assert key in report
    tsv = open(os.path.join(run_dir, "report.tsv")).read().splitlines()
    # k<TAB>metric<TAB>model<TAB>value rows, 4 metric rows per k plus 3 js rows
    assert len(tsv) == 4 * 3 + 3
    assert tsv[0].split("\t")[:3] == ["5", "f1", "bpr"]
    assert tsv[-1].split("\t")[:3] == ["-", "js_group_pos", "bpr"]


def test_train_missing_alpha_fails(corpus_dir, tmp_path, capsys):
    ini = _exp_ini(tmp_path / "bad.ini", corpus_dir, model="dpr-rsp",
                   extra_train="beta = 0.0\n",
                   out_dir=tmp_path / "runs")
    assert main(["train", "--config", ini]) == 1
    assert "alpha required" in capsys.readouterr().err


def test_eval_dimension_mismatch(corpus_dir, tmp_path, capsys):
    ini = _exp_ini(tmp_path / "exp.ini", corpus_dir, out_dir=tmp_path / "runs")
    assert main(["train", "--config", ini]) == 0
    run_dir = capsys.readouterr().out.strip().splitlines()[-1]
    ckpt = os.path.join(run_dir, "checkpoint")

    other_ini = _write(
        tmp_path / "other_synth.ini",
        "[synthetic]\n"
        "num_users = 40\n"
        "num_items = 20\n"
        "num_groups = 2\n"
        "group_item_shares = 0.5,0.5\n"
        "group_popularity = 0.9,0.3\n"
        "interactions_per_user = 4\n"
        "seed = 1\n",
    )
    other_dir = tmp_path / "other"
    assert main(["synth", "--config", other_ini, "--out", str(other_dir)]) == 0
    capsys.readouterr()
    eval_ini = _exp_ini(tmp_path / "eval.ini", other_dir)
    assert main(["eval", "--config", eval_ini, "--checkpoint", ckpt]) == 1
    assert "checkpoint holds" in capsys.readouterr().err


def test_audit_group_table(capsys):
    assert main(["audit", "--interactions", SMALL_INTER,
                 "--groups", SMALL_GROUPS]) == 0
    out = capsys.readouterr().out
    assert "group\titems\tfeedback\tratio" in out
    assert "red\t2\t5\t2.5" in out
    assert "yellow\t1\t3\t3" in out
    assert "brown\t1\t1\t1" in out
    assert "dark\t1\t2\t2" in out
    assert "feedback ratio relative spread: " in out


def test_audit_with_checkpoint(corpus_dir, tmp_path, capsys):
    ini = _exp_ini(tmp_path / "exp.ini", corpus_dir, out_dir=tmp_path / "runs")
    assert main(["train", "--config", ini]) == 0
    run_dir = capsys.readouterr().out.strip().splitlines()[-1]
    assert main(["audit",
                 "--interactions", str(corpus_dir / "interactions.csv"),
                 "--groups", str(corpus_dir / "groups.csv"),
                 "--checkpoint", os.path.join(run_dir, "checkpoint"),
                 "--k", "5"]) == 0
    out = capsys.readouterr().out
    assert "top-5 exposure probability by group:" in out
    assert "exposure relative spread: " in out


def test_sweep_table(corpus_dir, tmp_path, capsys):
    # alpha left unset on purpose: the sweep fills it in per value
    ini = _exp_ini(tmp_path / "sweep.ini", corpus_dir, model="dpr-rsp",
                   extra_train=("beta = 0.0\npretrain_epochs = 1\n"
                                "theta_batches_per_round = 1\n"),
                   out_dir=tmp_path / "runs")
    assert main(["sweep", "--config", ini, "--parameter", "alpha",
                 "--values", "0.0,1.0"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-3] == "value\tf1@15\trsp@15"
    assert lines[-2].startswith("0.0\t")
    assert lines[-1].startswith("1.0\t")


def test_usage_errors_exit_2(corpus_dir, tmp_path, capsys):
    ini = _exp_ini(tmp_path / "exp.ini", corpus_dir)
    assert main(["sweep", "--config", ini, "--parameter", "alpha",
                 "--values", "1.0"]) == 2
    assert "at least 2" in capsys.readouterr().err
    assert main(["sweep", "--config", ini, "--parameter", "nope",
                 "--values", "1,2"]) == 2
    assert main(["sweep", "--config", ini, "--parameter", "alpha",
                 "--values", "1,zap"]) == 2
    assert "invalid value 'zap'" in capsys.readouterr().err
    assert main(["train", "--config", ini, "--frobnicate"]) == 2
    assert main([]) == 2
    assert main(["--help"]) == 0


def test_missing_config_file_is_domain_error(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.ini")]) == 1
    assert "not found" in capsys.readouterr().err


def test_train_determinism_across_out_dirs(corpus_dir, tmp_path, capsys):
    ini_a = _exp_ini(tmp_path / "a.ini", corpus_dir, out_dir=tmp_path / "runs_a")
    ini_b = _exp_ini(tmp_path / "b.ini", corpus_dir, out_dir=tmp_path / "runs_b")
    assert main(["train", "--config", ini_a]) == 0
    dir_a = capsys.readouterr().out.strip().splitlines()[-1]
    assert main(["train", "--config", ini_b]) == 0
    dir_b = capsys.readouterr().out.strip().splitlines()[-1]
    assert os.path.basename(dir_a) == os.path.basename(dir_b)
    assert dir_a != dir_b

    read = lambda d, n: open(os.path.join(d, n), "rb").read()
    assert read(dir_a, "checkpoint") == read(dir_b, "checkpoint")
    assert read(dir_a, "config.resolved") == read(dir_b, "config.resolved")
    # wall times differ between runs; everything else must not
    strip = lambda d: [
        ",".join(line.split(",")[:5])
        for line in read(d, "trainlog.csv").decode().splitlines()
    ]
    assert strip(dir_a) == strip(dir_b)

    for ini, d in ((ini_a, dir_a), (ini_b, dir_b)):
        assert main(["eval", "--config", ini,
                     "--checkpoint", os.path.join(d, "checkpoint")]) == 0
    capsys.readouterr()
    assert read(dir_a, "report.json") == read(dir_b, "report.json")


def test_seed_override_changes_run(corpus_dir, tmp_path, capsys):
    ini = _exp_ini(tmp_path / "exp.ini", corpus_dir, out_dir=tmp_path / "runs")
    assert main(["train", "--config", ini]) == 0
    dir_a = capsys.readouterr().out.strip().splitlines()[-1]
    assert main(["train", "--config", ini, "--seed", "9"]) == 0
    dir_b = capsys.readouterr().out.strip().splitlines()[-1]
    assert os.path.basename(dir_a) != os.path.basename(dir_b)
    a = open(os.path.join(dir_a, "checkpoint"), "rb").read()
    b = open(os.path.join(dir_b, "checkpoint"), "rb").read()
    assert a != b
