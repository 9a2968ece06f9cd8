"""The full CLI workflow, shared by the CLI tests and the determinism criterion."""

import hashlib
import json
import shutil
from pathlib import Path

from conftest import DATA
from sexism_detect import cli

CONFIG = {
    "encoder": {"d_model": 32, "n_layers": 1, "n_heads": 2, "d_ffn": 64, "max_len": 32},
    "training": {"batch_size": 16, "learning_rate": 2e-3},
    "pretrain": {"training": {"epochs": 2}},
    "finetune": {"training": {"epochs": 15, "learning_rate": 4e-3}, "stratified": True},
}

PIPELINE = [
    ["preprocess", "--pipeline", "p4", "--in", "data/synthetic.tsv", "--out", "clean.tsv"],
    ["train-vocab", "--in", "clean.tsv", "--out", "vocab.txt", "--max-vocab", "300"],
    ["augment", "--in", "clean.tsv", "--out", "aug.tsv", "--dict", "data/mock_dict.tsv",
     "--cache", "cache.tsv", "--parallelism", "3"],
    ["pretrain", "--out-dir", "pre", "--corpus", "clean.tsv", "--corpus", "aug.tsv",
     "--vocab", "vocab.txt"],
    ["finetune", "--out-dir", "ft", "--train", "clean.tsv", "--vocab", "vocab.txt",
     "--init", "pre/model.ckpt", "--task", "task2"],
    ["finetune", "--out-dir", "ft_head", "--train", "clean.tsv", "--vocab", "vocab.txt",
     "--init", "pre/model.ckpt", "--task", "task2", "--mode", "finetune_head_only",
     "--lr", "0.01"],
    ["predict", "--checkpoint", "ft/model.ckpt", "--vocab", "vocab.txt",
     "--in", "ft/split_val.tsv", "--task", "task2", "--out", "run1.jsonl"],
    ["predict", "--checkpoint", "ft_head/model.ckpt", "--vocab", "vocab.txt",
     "--in", "ft/split_val.tsv", "--task", "task2", "--out", "run2.jsonl",
     "--submission", "run2.sub.tsv"],
    ["fuse", "--pred", "run1.jsonl", "--pred", "run2.jsonl", "--out", "fused.jsonl",
     "--submission", "fused.sub.tsv"],
    ["evaluate", "--pred", "fused.jsonl", "--truth", "ft/split_val.tsv", "--task", "task2",
     "--out", "report.json"],
    ["evaluate", "--submission", "run2.sub.tsv", "--truth", "ft/split_val.tsv",
     "--task", "task2"],
]


def digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run_pipeline(root: Path, monkeypatch, seed="3"):
    (root / "data").mkdir(parents=True)
    for name in ("synthetic.tsv", "mock_dict.tsv"):
        shutil.copy(DATA / name, root / "data" / name)
    (root / "cfg.json").write_text(json.dumps(CONFIG), encoding="utf-8")
    monkeypatch.chdir(root)
    for argv in PIPELINE:
        assert cli.main(["--config", "cfg.json", "--seed", seed] + argv) == 0, argv
    return digest(root)
