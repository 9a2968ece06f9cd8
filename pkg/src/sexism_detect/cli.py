"""Command-line entry point: ``sexism-detect <subcommand> ...``.

Every subcommand can take its options from a JSON config file (``--config``)
with command-line flags taking precedence.  Config keys are the long option
names with dashes replaced by underscores, either at the top level or inside
a section named after the subcommand::

    {"seed": 13,
     "finetune": {"train": "train.tsv", "task": "task2", "preset": "xlmr-finetune",
                  "training": {"warmup_steps": 50}},
     "encoder": {"d_model": 64, "n_layers": 2}}

Each command writes its artifact plus a manifest (resolved options, config
hash, seed, sha256 of inputs and outputs).  Re-running a command with the
same inputs and options reproduces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import __version__
from . import augment as A
from . import corpus as C
from . import evalfuse as E
from . import model as M
from . import preprocess as P
from . import tokenizer as T
from . import train as TR
from ._backend import BACKEND

log = logging.getLogger("sexism_detect")

DESK_ENCODER = {"d_model": 128, "n_layers": 2, "n_heads": 4, "d_ffn": 512, "max_len": 128,
                "dropout_prob": 0.1}
DOMAIN_ERRORS = (C.CorpusError, T.TokenizerError, M.ModelError, TR.TrainError,
                 E.PredictionError, A.TranslationError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return cfg


_LIST_OPTS = {"train-vocab": "input_list", "pretrain": "corpus", "fuse": "pred"}


def _resolve(args: argparse.Namespace, cfg: dict, command: str) -> dict:
    """Fill options left unset on the command line from the config file."""
    section = cfg.get(command, {})
    opts = {}
    for key, val in vars(args).items():
        if key in ("func", "command"):
            continue
        if val is None:
            val = section.get(key, cfg.get(key))
        if key == _LIST_OPTS.get(command) and isinstance(val, str):
            val = [val]
        opts[key] = val
    return opts


def _out_path(opts: dict, name: str) -> Path | None:
    val = opts.get(name)
    if val is None:
        return None
    p = Path(val)
    if opts.get("out_dir") and not p.is_absolute():
        p = Path(opts["out_dir"]) / p
    return p


def _require(opts: dict, *names: str) -> None:
    for n in names:
        if opts.get(n) in (None, [], ""):
            flag = "in" if n in ("input", "input_list") else n.replace("_", "-")
            raise ConfigError(f"missing required option --{flag}")


def _check_inputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigError(f"input file not found: {p}")


def _write_manifest(target: Path, command: str, opts: dict, inputs: list, outputs: list) -> None:
    resolved = {k: _jsonable(v) for k, v in sorted(opts.items())}
    # the config file's content is embedded so the manifest alone can re-run the command
    config_file = _load_config(opts.get("config")) if opts.get("config") else None
    config_hash = hashlib.sha256(
        json.dumps([resolved, config_file], sort_keys=True).encode()).hexdigest()
    inputs = [*inputs, opts.get("config") and Path(opts["config"])]
    manifest = {
        "command": command,
        "version": __version__,
        "kernel_backend": BACKEND,
        "seed": opts.get("seed"),
        "options": resolved,
        "config_file": config_file,
        "config_sha256": config_hash,
        "inputs": {str(p): sha256_file(Path(p)) for p in inputs if p is not None},
        "outputs": {str(p): sha256_file(Path(p)) for p in outputs},
    }
    target.write_text(_dump(manifest), encoding="utf-8")


def _load_ds(path, schema: str | None = None, name: str | None = None) -> C.LabeledDataset:
    """Load a TSV, detecting the schema from its header when not given."""
    path = Path(path)
    if schema is None:
        with open(path, encoding="utf-8") as f:
            first = f.readline().rstrip("\r\n").split("\t")
        schema = "exist" if "test_case" in first else "generic"
    return C.load_tsv(path, schema, name=name)


def _encoder_config(opts: dict, cfg: dict, vocab_size: int, seed: int) -> M.EncoderConfig:
    enc = dict(DESK_ENCODER)
    enc.update(cfg.get("encoder", {}))
    for k in ("d_model", "n_layers", "n_heads", "d_ffn", "max_len", "dropout_prob"):
        if opts.get(k) is not None:
            enc[k] = opts[k]
    unknown = set(enc) - {f.name for f in fields(M.EncoderConfig)}
    if unknown:
        raise ConfigError(f"unknown encoder config keys: {', '.join(sorted(unknown))}")
    enc["vocab_size"] = vocab_size
    enc["seed"] = seed
    return M.EncoderConfig(**enc)


_TRAIN_FLAGS = {
    "epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate",
    "weight_decay": "weight_decay", "warmup_steps": "warmup_steps",
    "adam_epsilon": "adam_epsilon", "train_max_len": "max_len", "mode": "mode",
    "mask_prob": "mlm_mask_prob", "mix": "mix", "grad_clip": "grad_clip",
}


def _training_config(opts: dict, cfg: dict, command: str, default_mode: str) -> TR.TrainingConfig:
    preset = opts.get("preset")
    base = TR.get_preset(preset) if preset else TR.TrainingConfig(mode=default_mode)
    over = dict(cfg.get("training", {}))
    over.update(cfg.get(command, {}).get("training", {}))
    for flag, key in _TRAIN_FLAGS.items():
        if opts.get(flag) is not None:
            over[key] = opts[flag]
    over["seed"] = opts["seed"]
    unknown = set(over) - {f.name for f in fields(TR.TrainingConfig)}
    if unknown:
        raise ConfigError(f"unknown training config keys: {', '.join(sorted(unknown))}")
    return replace(base, **over)


# ---------------------------------------------------------------------------
# commands

def cmd_preprocess(opts: dict, cfg: dict) -> int:
    _require(opts, "pipeline", "input", "out")
    src, dst = Path(opts["input"]), _out_path(opts, "out")
    _check_inputs(src)
    ds = _load_ds(src, opts.get("schema"))
    out, dropped = P.apply_dataset(opts["pipeline"], ds)
    dst.parent.mkdir(parents=True, exist_ok=True)
    C.write_tsv(out, dst, schema=opts.get("out_schema") or "generic")
    pipe = P.parse_pipeline(opts["pipeline"]).value
    print(f"dropped {dropped} post(s) left empty by pipeline {pipe}", file=sys.stderr)
    _write_manifest(dst.with_name(dst.name + ".manifest.json"), "preprocess", opts,
                    [src], [dst])
    return 0


def cmd_train_vocab(opts: dict, cfg: dict) -> int:
    _require(opts, "input_list", "out")
    inputs = [Path(p) for p in opts["input_list"]]
    _check_inputs(*inputs)
    dst = _out_path(opts, "out")
    ds = C.merge([_load_ds(p, name=f"in{i}") for i, p in enumerate(inputs)],
                 rename_collisions=True)
    uncased = True if opts.get("uncased") is None else bool(opts["uncased"])
    tm = T.train_vocab(ds, max_vocab=opts.get("max_vocab") or 8000,
                       min_freq=opts.get("min_freq") or 1, uncased=uncased)
    dst.parent.mkdir(parents=True, exist_ok=True)
    tm.save(dst)
    print(f"vocabulary of {len(tm)} tokens written to {dst}", file=sys.stderr)
    _write_manifest(dst.with_name(dst.name + ".manifest.json"), "train-vocab", opts,
                    inputs, [dst, T.sidecar(dst)])
    return 0


def _print_config(tc: TR.TrainingConfig) -> None:
    for k, v in asdict(tc).items():
        print(f"{k}={v}")


def _run_dir(opts: dict) -> Path:
    if not opts.get("out_dir"):
        raise ConfigError("missing required option --out-dir")
    d = Path(opts["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_pretrain(opts: dict, cfg: dict) -> int:
    tc = _training_config(opts, cfg, "pretrain", "mlm_pretrain")
    if opts.get("help_config"):
        _print_config(tc)
        return 0
    _require(opts, "corpus", "vocab")
    corpora = [Path(p) for p in opts["corpus"]]
    init = opts.get("init")
    _check_inputs(*corpora, opts["vocab"], init)
    if tc.mode != "mlm_pretrain":
        raise ConfigError(f"pretrain needs mode mlm_pretrain, got {tc.mode}")
    out = _run_dir(opts)
    tm = T.TokenizerModel.load(opts["vocab"])
    if init:
        m = M.load_checkpoint(init)
        if m.head != "mlm":
            m = m.with_mlm_head()
    else:
        m = M.init(_encoder_config(opts, cfg, len(tm), opts["seed"]))
    datasets = [_load_ds(p, name=p.stem) for p in corpora]
    log_path = out / "history.jsonl"
    log_path.write_text("", encoding="utf-8")

    def logger(rec):
        with open(log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        log.info("%s", rec)

    m, history = TR.pretrain_mlm(m, datasets, tm, tc, logger=logger)
    ckpt = out / "model.ckpt"
    M.save_checkpoint(m, ckpt)
    (out / "config.json").write_text(_dump({
        "command": "pretrain", "options": {k: _jsonable(v) for k, v in opts.items()},
        "encoder": asdict(m.config), "training": asdict(tc)}), encoding="utf-8")
    _write_manifest(out / "manifest.json", "pretrain", opts,
                    [*corpora, Path(opts["vocab"]), init and Path(init)],
                    [ckpt, log_path, out / "config.json"])
    if history:
        print(f"pretrained {len(history)} epoch(s); final loss {history[-1]['loss']:.4f}",
              file=sys.stderr)
    return 0


def cmd_finetune(opts: dict, cfg: dict) -> int:
    tc = _training_config(opts, cfg, "finetune", "finetune_full")
    if opts.get("help_config"):
        _print_config(tc)
        return 0
    _require(opts, "train", "vocab", "task")
    init = opts.get("init")
    _check_inputs(opts["train"], opts.get("val"), opts["vocab"], init)
    task = opts["task"]
    n_classes = len(C.classes_for(task))
    out = _run_dir(opts)
    tm = T.TokenizerModel.load(opts["vocab"])
    ds = _load_ds(opts["train"])
    if opts.get("val"):
        train_ds, val_ds = ds, _load_ds(opts["val"])
    else:
        frac = opts.get("val_fraction")
        frac = 0.1 if frac is None else frac
        train_ds, val_ds = C.split(ds, frac, seed=opts["seed"],
                                   stratified=bool(opts.get("stratified")))
        C.write_tsv(train_ds, out / "split_train.tsv")
        C.write_tsv(val_ds, out / "split_val.tsv")
    if init:
        m = M.load_checkpoint(init)
        if m.head != "classifier" or m.n_classes != n_classes:
            m = m.with_classifier(n_classes, seed=opts["seed"])
    else:
        m = M.init(_encoder_config(opts, cfg, len(tm), opts["seed"]), "classifier", n_classes)
    log_path = out / "history.jsonl"
    log_path.write_text("", encoding="utf-8")

    def logger(rec):
        with open(log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        log.info("%s", rec)

    m, history = TR.finetune(m, train_ds, val_ds, task, tm, tc, logger=logger)
    ckpt = out / "model.ckpt"
    M.save_checkpoint(m, ckpt)
    (out / "config.json").write_text(_dump({
        "command": "finetune", "options": {k: _jsonable(v) for k, v in opts.items()},
        "encoder": asdict(m.config), "training": asdict(tc), "task": task}), encoding="utf-8")
    outputs = [ckpt, log_path, out / "config.json"]
    if not opts.get("val"):
        outputs += [out / "split_train.tsv", out / "split_val.tsv"]
    _write_manifest(out / "manifest.json", "finetune", opts,
                    [Path(opts["train"]), opts.get("val") and Path(opts["val"]),
                     Path(opts["vocab"]), init and Path(init)], outputs)
    if history and "val_macro_f1" in history[-1]:
        print(f"final validation accuracy {history[-1]['val_accuracy']:.4f}, "
              f"macro F1 {history[-1]['val_macro_f1']:.4f}", file=sys.stderr)
    return 0


def cmd_augment(opts: dict, cfg: dict) -> int:
    _require(opts, "input", "out")
    src, dst = Path(opts["input"]), _out_path(opts, "out")
    _check_inputs(src, opts.get("dict"))
    if bool(opts.get("dict")) == bool(opts.get("endpoint")):
        raise ConfigError("give exactly one translation provider: --dict FILE or --endpoint URL")
    provider = (A.MockTranslator.from_tsv(opts["dict"]) if opts.get("dict")
                else A.HttpTranslator(opts["endpoint"]))
    if opts.get("cache"):
        provider = A.CachingTranslator(provider, opts["cache"])
    ds = _load_ds(src)
    par = opts.get("parallelism") or 1
    status = 0
    try:
        if opts.get("translated_only"):
            out = A.translate_dataset(ds, provider, par)
        else:
            out = A.with_translations(ds, provider, par)
    except A.PartialTranslationError as e:
        out = e.partial
        report = dst.with_name(dst.name + ".skipped.json")
        report.write_text(_dump({"skipped": e.skipped, "reasons": e.reasons}), encoding="utf-8")
        print(f"error: {e}; partial result written, see {report}", file=sys.stderr)
        status = 2
    if isinstance(provider, A.CachingTranslator):
        provider.compact()
    dst.parent.mkdir(parents=True, exist_ok=True)
    C.write_tsv(out, dst)
    _write_manifest(dst.with_name(dst.name + ".manifest.json"), "augment", opts,
                    [src, opts.get("dict") and Path(opts["dict"])], [dst])
    return status


def cmd_predict(opts: dict, cfg: dict) -> int:
    _require(opts, "checkpoint", "vocab", "input", "task", "out")
    _check_inputs(opts["checkpoint"], opts["vocab"], opts["input"])
    dst = _out_path(opts, "out")
    m = M.load_checkpoint(opts["checkpoint"])
    tm = T.TokenizerModel.load(opts["vocab"])
    ds = _load_ds(opts["input"])
    pred = TR.predict(m, ds, tm, opts["task"], run_name=opts.get("run_name") or dst.stem)
    dst.parent.mkdir(parents=True, exist_ok=True)
    E.write_predictions(pred, dst)
    outputs = [dst]
    if opts.get("submission"):
        sub = _out_path(opts, "submission")
        E.write_submission(pred, sub)
        outputs.append(sub)
    _write_manifest(dst.with_name(dst.name + ".manifest.json"), "predict", opts,
                    [Path(opts["checkpoint"]), Path(opts["vocab"]), Path(opts["input"])], outputs)
    return 0


def cmd_fuse(opts: dict, cfg: dict) -> int:
    _require(opts, "pred", "out")
    preds = [Path(p) for p in opts["pred"]]
    _check_inputs(*preds)
    dst = _out_path(opts, "out")
    fused = E.late_fuse([E.read_predictions(p) for p in preds],
                        name=opts.get("run_name") or dst.stem)
    dst.parent.mkdir(parents=True, exist_ok=True)
    E.write_predictions(fused, dst)
    outputs = [dst]
    if opts.get("submission"):
        sub = _out_path(opts, "submission")
        E.write_submission(fused, sub)
        outputs.append(sub)
    _write_manifest(dst.with_name(dst.name + ".manifest.json"), "fuse", opts, preds, outputs)
    return 0


def cmd_evaluate(opts: dict, cfg: dict) -> int:
    _require(opts, "truth", "task")
    if bool(opts.get("pred")) == bool(opts.get("submission")):
        raise ConfigError("give exactly one of --pred FILE or --submission FILE")
    src = Path(opts.get("pred") or opts["submission"])
    _check_inputs(src, opts["truth"])
    truth = _load_ds(opts["truth"])
    if opts.get("pred"):
        pred = E.read_predictions(src)
    else:
        pred = E.read_submission(src, opts["task"])
    report = E.evaluate(pred, truth, opts["task"])
    print(report.format_table())
    if opts.get("out"):
        dst = _out_path(opts, "out")
        dst.parent.mkdir(parents=True, exist_ok=True)
        dst.write_text(_dump(report.to_dict()), encoding="utf-8")
        _write_manifest(dst.with_name(dst.name + ".manifest.json"), "evaluate", opts,
                        [src, Path(opts["truth"])], [dst])
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_encoder_flags(p):
    g = p.add_argument_group("encoder shape (fresh models only)")
    g.add_argument("--d-model", type=int)
    g.add_argument("--n-layers", type=int)
    g.add_argument("--n-heads", type=int)
    g.add_argument("--d-ffn", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--dropout-prob", type=float)


def _add_training_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--preset", choices=sorted(TR.PRESETS))
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--warmup-steps", type=int)
    g.add_argument("--adam-epsilon", type=float)
    g.add_argument("--train-max-len", type=int, help="sequence length used while training")
    g.add_argument("--grad-clip", type=float)
    g.add_argument("--help-config", action="store_true", default=None,
                   help="print the resolved training config and exit")


def _add_global_flags(p, default):
    p.add_argument("--config", default=default, help="JSON config file")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--out-dir", default=default,
                   help="output directory (relative outputs resolve here)")
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sexism-detect", description=__doc__.splitlines()[0])
    _add_global_flags(ap, None)
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, argparse.SUPPRESS)
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="apply a normalisation pipeline")
    p.add_argument("--pipeline", choices=["p1", "p2", "p3", "p4"])
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--schema", choices=["exist", "generic"])
    p.add_argument("--out-schema", choices=["exist", "generic"])
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-vocab", parents=[common], help="learn a WordPiece vocabulary")
    p.add_argument("--in", dest="input_list", action="append")
    p.add_argument("--out")
    p.add_argument("--max-vocab", type=int)
    p.add_argument("--min-freq", type=int)
    p.add_argument("--uncased", dest="uncased", action="store_true", default=None)
    p.add_argument("--cased", dest="uncased", action="store_false")
    p.set_defaults(func=cmd_train_vocab)

    p = sub.add_parser("pretrain", parents=[common], help="masked-language-model pre-training")
    p.add_argument("--corpus", action="append", help="TSV corpus; repeat for sequential stages")
    p.add_argument("--vocab")
    p.add_argument("--init", help="checkpoint to continue from")
    p.add_argument("--mix", choices=list(TR.MIXES))
    p.add_argument("--mask-prob", type=float)
    _add_encoder_flags(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_pretrain, mode=None)

    p = sub.add_parser("finetune", parents=[common], help="supervised classification training")
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--stratified", action="store_true", default=None)
    p.add_argument("--vocab")
    p.add_argument("--init", help="checkpoint (MLM or classifier) to start from")
    p.add_argument("--task", choices=list(C.TASKS))
    p.add_argument("--mode", choices=["finetune_full", "finetune_head_only"])
    _add_encoder_flags(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("augment", parents=[common], help="add translated copies of every post")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--dict", help="en<TAB>es word list for the offline provider")
    p.add_argument("--endpoint", help="remote translation endpoint URL")
    p.add_argument("--cache", help="translation cache file")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--translated-only", action="store_true", default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("predict", parents=[common], help="write class probabilities for a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--in", dest="input")
    p.add_argument("--task", choices=list(C.TASKS))
    p.add_argument("--out")
    p.add_argument("--run-name")
    p.add_argument("--submission", help="also write a submission TSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", parents=[common], help="late fusion of prediction files")
    p.add_argument("--pred", action="append")
    p.add_argument("--out")
    p.add_argument("--run-name")
    p.add_argument("--submission")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", parents=[common], help="accuracy and macro F1 report")
    p.add_argument("--pred")
    p.add_argument("--submission")
    p.add_argument("--truth")
    p.add_argument("--task", choices=list(C.TASKS))
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        opts = _resolve(args, cfg, args.command)
        if opts.get("seed") is None:
            opts["seed"] = 0
        logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(opts, cfg)
    except (ConfigError, *DOMAIN_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e.strerror or e}: {e.filename or ''}".rstrip(": "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
