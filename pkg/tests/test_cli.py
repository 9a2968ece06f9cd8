import hashlib
import json
import shutil
import subprocess
import sys

import pytest

from cli_pipeline import CONFIG, PIPELINE, digest, run_pipeline
from conftest import DATA
from sexism_detect import cli
from sexism_detect import corpus as C
from sexism_detect import evalfuse as E


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    try:
        base = tmp_path_factory.mktemp("cli")
        a = run_pipeline(base / "a", mp)
        b = run_pipeline(base / "b", mp)
    finally:
        mp.undo()
    return base, a, b


def test_end_to_end_beats_majority_baseline(two_runs):
    base, _, _ = two_runs
    root = base / "a"
    report = json.loads((root / "report.json").read_text())
    train = C.load_tsv(root / "ft" / "split_train.tsv", schema="generic")
    val = C.load_tsv(root / "ft" / "split_val.tsv", schema="generic")
    baseline = E.majority_baseline(train, val, "task2")
    assert report["n_instances"] == len(val)
    assert report["macro_f1"] > baseline.macro_f1


def test_pipeline_is_byte_identical_across_reruns(two_runs):
    _, a, b = two_runs
    assert a == b
    for expected in ("clean.tsv.manifest.json", "vocab.txt", "vocab.txt.json", "aug.tsv",
                     "pre/model.ckpt", "pre/history.jsonl", "pre/manifest.json",
                     "ft/config.json", "ft/split_val.tsv", "fused.jsonl", "report.json",
                     "report.json.manifest.json"):
        assert expected in a


def test_manifests_record_inputs_and_config(two_runs):
    base, _, _ = two_runs
    m = json.loads((base / "a" / "ft" / "manifest.json").read_text())
    assert m["seed"] == 3 and m["command"] == "finetune"
    assert m["config_file"] == CONFIG
    assert set(m["inputs"]) == {"clean.tsv", "vocab.txt", "pre/model.ckpt", "cfg.json"}
    assert "ft/model.ckpt" in m["outputs"]
    assert "ft/split_val.tsv" in m["outputs"]
    assert "time" not in json.dumps(m)


def test_inputs_not_mutated(two_runs):
    base, a, _ = two_runs
    for name in ("synthetic.tsv", "mock_dict.tsv"):
        assert a[f"data/{name}"] == hashlib.sha256((DATA / name).read_bytes()).hexdigest()


def test_pretrain_history_has_one_record_per_stage_epoch(two_runs):
    base, _, _ = two_runs
    rows = [json.loads(x) for x in (base / "a" / "pre" / "history.jsonl").read_text().splitlines()]
    assert [(r["stage"], r["epoch"]) for r in rows] == \
        [("clean", 1), ("clean", 2), ("aug", 1), ("aug", 2)]


def test_augment_doubles(two_runs):
    base, _, _ = two_runs
    lines = (base / "a" / "aug.tsv").read_text(encoding="utf-8").splitlines()
    clean = (base / "a" / "clean.tsv").read_text(encoding="utf-8").splitlines()
    assert len(lines) - 1 == 2 * (len(clean) - 1)


def test_different_seed_changes_artifacts(tmp_path, monkeypatch, two_runs):
    _, a, _ = two_runs
    root = tmp_path / "s"
    (root / "data").mkdir(parents=True)
    shutil.copy(DATA / "synthetic.tsv", root / "data" / "synthetic.tsv")
    (root / "cfg.json").write_text(json.dumps(CONFIG), encoding="utf-8")
    monkeypatch.chdir(root)
    for argv in PIPELINE[:2] + PIPELINE[3:4]:
        argv = [x if x != "aug.tsv" else "clean.tsv" for x in argv]
        assert cli.main(["--config", "cfg.json", "--seed", "4"] + argv) == 0
    assert digest(root)["pre/model.ckpt"] != a["pre/model.ckpt"]


def test_evaluate_bundled_fixture(capsys):
    rc = cli.main(["evaluate", "--pred", str(DATA / "fixture_pred.jsonl"),
                   "--truth", str(DATA / "fixture_truth.tsv"), "--task", "task1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "accuracy    0.7500" in out and "macro F1    0.7333" in out


def test_help_config_echoes_preset(capsys):
    assert cli.main(["finetune", "--preset", "mbert-finetune", "--help-config"]) == 0
    out = capsys.readouterr().out.splitlines()
    for line in ("epochs=6", "batch_size=8", "learning_rate=1e-05", "max_len=384",
                 "weight_decay=0.0"):
        assert line in out


def test_preprocess_reports_drops(tmp_path, capsys):
    src = tmp_path / "in.tsv"
    src.write_text("id\tsource\tlanguage\ttext\ttask1\ttask2\tprovenance\n"
                   "1\ttwitter\ten\t#only\t\t\toriginal\n"
                   "2\ttwitter\ten\tkeep this\t\t\toriginal\n", encoding="utf-8")
    rc = cli.main(["preprocess", "--pipeline", "p1", "--in", str(src),
                   "--out", str(tmp_path / "out.tsv")])
    assert rc == 0
    assert "dropped 1 post(s)" in capsys.readouterr().err


@pytest.mark.parametrize("argv,msg", [
    (["preprocess", "--pipeline", "p1", "--out", "x.tsv"], "missing required option --in"),
    (["preprocess", "--pipeline", "p1", "--in", "nope.tsv", "--out", "x.tsv"],
     "input file not found: nope.tsv"),
    (["train-vocab", "--out", "v.txt"], "missing required option --in"),
    (["--config", "missing.json", "evaluate"], "config file not found"),
    (["evaluate", "--truth", "t.tsv", "--task", "task1"], "exactly one of --pred"),
    (["augment", "--in", "IN", "--out", "o.tsv"], "exactly one translation provider"),
    (["finetune", "--out-dir", "o", "--train", "IN", "--vocab", "V", "--task", "task1",
      "--warmup-steps", "500", "--epochs", "1"], "lower warmup_steps"),
])
def test_errors_are_one_line(tmp_path, monkeypatch, capsys, argv, msg):
    monkeypatch.chdir(tmp_path)
    shutil.copy(DATA / "synthetic.tsv", tmp_path / "IN")
    (tmp_path / "t.tsv").write_text("x", encoding="utf-8")
    if "V" in argv:
        assert cli.main(["train-vocab", "--in", "IN", "--out", "V", "--max-vocab", "200"]) == 0
    capsys.readouterr()
    assert cli.main(argv) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ") and msg in err and "\n" not in err


def test_unknown_preset_rejected(capsys):
    with pytest.raises(SystemExit):
        cli.main(["finetune", "--preset", "roberta-large"])


def test_global_flags_before_or_after_subcommand(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"training": {"epochs": 9}}), encoding="utf-8")
    for argv in (["--config", str(cfg), "--seed", "5", "finetune", "--help-config"],
                 ["finetune", "--help-config", "--config", str(cfg), "--seed", "5"]):
        assert cli.main(argv) == 0
        out = capsys.readouterr().out.splitlines()
        assert "epochs=9" in out and "seed=5" in out


def test_augment_partial_failure_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    shutil.copy(DATA / "fixture_truth.tsv", tmp_path / "in.tsv")
    rc = cli.main(["augment", "--in", "in.tsv", "--out", "o.tsv",
                   "--endpoint", "http://127.0.0.1:9/none"])
    assert rc == 2
    report = json.loads((tmp_path / "o.tsv.skipped.json").read_text())
    assert report["skipped"] == ["f1", "f2", "f3", "f4"]
    assert "partial result written" in capsys.readouterr().err


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "sexism_detect.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert "kernels" in out.stdout
