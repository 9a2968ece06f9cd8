"""Optimisation: AdamW, warmup/decay schedule, MLM pre-training, fine-tuning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as M
from .corpus import LabeledDataset, classes_for, derive_task1_probs, merge
from .evalfuse import RunPrediction, evaluate
from .tokenizer import MASK_ID, N_SPECIALS, Encoding, TokenizerModel

log = logging.getLogger(__name__)

MODES = ("mlm_pretrain", "finetune_full", "finetune_head_only")
MIXES = ("sequential", "union")


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 3
    batch_size: int = 8
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    max_len: int = 128
    seed: int = 0
    mode: str = "finetune_full"
    mlm_mask_prob: float = 0.15
    mask_token_frac: float = 0.8
    random_token_frac: float = 0.1
    grad_clip: float | None = None
    mix: str = "sequential"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.warmup_steps < 0:
            raise TrainError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if not 0.0 < self.mlm_mask_prob < 1.0:
            raise TrainError(f"mlm_mask_prob must be in (0, 1), got {self.mlm_mask_prob}")
        if self.epochs < 0 or self.batch_size < 1:
            raise TrainError("epochs must be >= 0 and batch_size >= 1")
        if self.mode not in MODES:
            raise TrainError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mix not in MIXES:
            raise TrainError(f"unknown mix {self.mix!r}; expected one of {MIXES}")
        if not (0 <= self.mask_token_frac and 0 <= self.random_token_frac
                and self.mask_token_frac + self.random_token_frac <= 1.0):
            raise TrainError("mask_token_frac + random_token_frac must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise TrainError(f"unknown training config keys: {', '.join(unknown)}")
        return cls(**d)


PRESETS: dict[str, TrainingConfig] = {
    # MLM continuation on each corpus in turn
    "xlmr-pretrain": TrainingConfig(
        epochs=25, batch_size=16, learning_rate=5e-5, max_len=384, mode="mlm_pretrain",
    ),
    # task-2 fine-tuning of the pre-trained encoder
    "xlmr-finetune": TrainingConfig(
        epochs=3, batch_size=8, learning_rate=1e-5, warmup_steps=500, weight_decay=0.01,
        max_len=384, mode="finetune_full",
    ),
    # plain Adam: weight decay 0
    "mbert-finetune": TrainingConfig(
        epochs=6, batch_size=8, learning_rate=1e-5, adam_epsilon=1e-8, weight_decay=0.0,
        max_len=384, mode="finetune_full",
    ),
}


def get_preset(name: str, **overrides) -> TrainingConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise TrainError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# schedule and optimiser

def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then linear decay to 0 at ``total_steps``."""
    if warmup_steps >= total_steps:
        raise TrainError(
            f"warmup_steps={warmup_steps} must be smaller than total_steps={total_steps}"
        )
    if not 1 <= step <= total_steps:
        raise TrainError(f"step {step} outside 1..{total_steps}")
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


def new_optimizer_state() -> dict:
    return {"m": {}, "v": {}}


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    config: TrainingConfig,
    step: int,
    lr: float | None = None,
    no_decay: Sequence[str] = (),
) -> None:
    """One AdamW update, in place, for every parameter that has a gradient.

    Weight decay is decoupled: ``p -= lr * wd * p`` is applied directly to the
    weights, next to the bias-corrected Adam step.  ``lr`` defaults to the
    config's base rate; pass the scheduled value from the training loop.
    """
    if step < 1:
        raise TrainError(f"step must be >= 1, got {step}")
    for name, g in grads.items():
        if name not in params:
            raise TrainError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise TrainError(f"gradient shape {np.shape(g)} != parameter shape for {name!r}")
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient in {name!r}")
    lr = config.learning_rate if lr is None else lr
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    skip = set(no_decay)
    for name, g in grads.items():
        p = params[name]
        m = state["m"].get(name)
        if m is None:
            m = state["m"][name] = np.zeros_like(p)
            state["v"][name] = np.zeros_like(p)
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay and name not in skip:
            p -= lr * config.weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _clip(grads: dict, max_norm: float | None) -> None:
    if not max_norm:
        return
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm


def no_decay_names(m: M.EncoderModel) -> set[str]:
    """Biases and layer-norm parameters are exempt from weight decay."""
    return {k for k, v in m.params.items() if v.ndim < 2}


# ---------------------------------------------------------------------------
# MLM corruption

@dataclass(frozen=True)
class MlmBatch:
    input_ids: np.ndarray   # corrupted ids
    targets: np.ndarray     # original id where selected, IGNORE elsewhere
    selected: np.ndarray    # bool
    branch: np.ndarray      # 0 untouched, 1 -> [MASK], 2 -> random token, 3 kept


def mlm_corrupt(
    enc: Encoding | np.ndarray,
    tm: TokenizerModel | int,
    mask_prob: float = 0.15,
    rng: np.random.Generator | None = None,
    mask_token_frac: float = 0.8,
    random_token_frac: float = 0.1,
) -> MlmBatch:
    """Select non-special positions with probability ``mask_prob`` and corrupt them.

    Of the selected positions, ``mask_token_frac`` become [MASK],
    ``random_token_frac`` a uniformly drawn non-special token, and the rest
    keep their id.  Works on a single Encoding or an id array of any shape.
    """
    ids = np.asarray(enc.ids if isinstance(enc, Encoding) else enc, dtype=np.int64)
    vocab_size = tm if isinstance(tm, int) else len(tm)
    if rng is None:
        raise TrainError("mlm_corrupt needs a seeded rng")
    selectable = ids >= N_SPECIALS
    if not selectable.any():
        raise TrainError("no maskable (non-special) tokens in sequence")
    if vocab_size <= N_SPECIALS:
        raise TrainError("vocabulary has no non-special tokens")
    selected = selectable & (rng.random(ids.shape) < mask_prob)
    u = rng.random(ids.shape)
    random_ids = rng.integers(N_SPECIALS, vocab_size, size=ids.shape)
    to_mask = selected & (u < mask_token_frac)
    to_rand = selected & (u >= mask_token_frac) & (u < mask_token_frac + random_token_frac)
    branch = np.zeros(ids.shape, dtype=np.int8)
    branch[selected] = 3
    branch[to_mask] = 1
    branch[to_rand] = 2
    out = ids.copy()
    out[to_mask] = MASK_ID
    out[to_rand] = random_ids[to_rand]
    targets = np.where(selected, ids, M.IGNORE)
    return MlmBatch(input_ids=out, targets=targets, selected=selected, branch=branch)


# ---------------------------------------------------------------------------
# loops

def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def _encode_dataset(ds: LabeledDataset, tm: TokenizerModel, max_len: int):
    return tm.encode_batch((p.text for p in ds), max_len)


def _seq_len(cfg: TrainingConfig, m: M.EncoderModel) -> int:
    return min(cfg.max_len, m.config.max_len)


def _run_mlm_stage(m, ids, mask, tm, cfg, rng, stage, history, logger):
    keep = (ids >= N_SPECIALS).any(axis=1)
    ids, mask = ids[keep], mask[keep]
    if len(ids) == 0:
        raise TrainError(f"corpus {stage!r} has no maskable tokens")
    steps_per_epoch = math.ceil(len(ids) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    if cfg.epochs == 0:
        return
    lr_schedule(1, total, cfg.warmup_steps, cfg.learning_rate)  # validates warmup < total
    state = new_optimizer_state()
    no_decay = no_decay_names(m)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in _batches(len(ids), cfg.batch_size, rng):
            while True:
                mb = mlm_corrupt(ids[idx], tm, cfg.mlm_mask_prob, rng,
                                 cfg.mask_token_frac, cfg.random_token_frac)
                if mb.selected.any():
                    break
            loss, grads = M.loss_and_grads(m, mb.input_ids, mb.targets, train_mode=True,
                                           rng=rng, mask=mask[idx])
            _clip(grads, cfg.grad_clip)
            step += 1
            lr = lr_schedule(step, total, cfg.warmup_steps, cfg.learning_rate)
            adamw_step(m.params, grads, state, cfg, step, lr=lr, no_decay=no_decay)
            losses.append(loss)
        rec = {"stage": stage, "epoch": epoch, "loss": float(np.mean(losses)), "steps": step}
        history.append(rec)
        if logger:
            logger(rec)
        log.info("mlm %s epoch %d loss %.4f", stage, epoch, rec["loss"])


def pretrain_mlm(
    m: M.EncoderModel,
    corpora: Sequence[LabeledDataset],
    tm: TokenizerModel,
    cfg: TrainingConfig,
    logger=None,
) -> tuple[M.EncoderModel, list[dict]]:
    """Continue MLM training of a copy of ``m``.

    With ``cfg.mix == "sequential"`` the model runs ``cfg.epochs`` over each
    corpus in turn, each stage with its own optimiser state and schedule.
    ``"union"`` trains once on the concatenation.  Returns the trained copy
    and one history record per epoch.
    """
    if m.head != "mlm":
        raise TrainError("pretrain_mlm needs a model with the MLM head")
    if not corpora:
        raise TrainError("pretrain_mlm needs at least one corpus")
    if len(tm) != m.config.vocab_size:
        raise TrainError(f"tokenizer has {len(tm)} tokens, model expects {m.config.vocab_size}")
    m = m.copy()
    rng = np.random.default_rng(cfg.seed)
    max_len = _seq_len(cfg, m)
    history: list[dict] = []
    if cfg.mix == "union":
        stages = [merge(list(corpora), rename_collisions=True, name="union")]
    else:
        stages = list(corpora)
    for ds in stages:
        ids, mask = _encode_dataset(ds, tm, max_len)
        _run_mlm_stage(m, ids, mask, tm, cfg, rng, ds.name, history, logger)
    return m, history


def _labels(ds: LabeledDataset, task: str) -> np.ndarray:
    classes = classes_for(task)
    out = []
    for p in ds:
        lab = p.label(task)
        if lab is None:
            raise TrainError(f"post {p.id!r} in {ds.name!r} has no {task} label")
        out.append(classes.index(lab))
    return np.asarray(out, dtype=np.int64)


def finetune(
    m: M.EncoderModel,
    train_ds: LabeledDataset,
    val_ds: LabeledDataset | None,
    task: str,
    tm: TokenizerModel,
    cfg: TrainingConfig,
    logger=None,
) -> tuple[M.EncoderModel, list[dict]]:
    """Supervised training of the classifier (and, in full mode, the encoder).

    Returns the trained copy and per-epoch records with the training loss and,
    when ``val_ds`` is non-empty, validation accuracy and macro F1.
    """
    classes = classes_for(task)
    if m.head != "classifier":
        raise TrainError("finetune needs a classifier head; use EncoderModel.with_classifier")
    if m.n_classes != len(classes):
        raise TrainError(
            f"{task} has {len(classes)} classes but the head has {m.n_classes} outputs")
    if cfg.mode == "mlm_pretrain":
        raise TrainError("mode mlm_pretrain is not a fine-tuning mode")
    if len(train_ds) == 0:
        raise TrainError("empty training set")
    if len(tm) != m.config.vocab_size:
        raise TrainError(f"tokenizer has {len(tm)} tokens, model expects {m.config.vocab_size}")
    y = _labels(train_ds, task)
    if val_ds is not None and len(val_ds):
        _labels(val_ds, task)
    m = m.copy()
    rng = np.random.default_rng(cfg.seed)
    max_len = _seq_len(cfg, m)
    ids, mask = _encode_dataset(train_ds, tm, max_len)
    head_only = cfg.mode == "finetune_head_only"
    names = m.head_param_names() if head_only else None
    steps_per_epoch = math.ceil(len(ids) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    history: list[dict] = []
    if cfg.epochs == 0:
        return m, history
    if cfg.warmup_steps >= total:
        raise TrainError(
            f"warmup_steps={cfg.warmup_steps} >= total optimisation steps {total} "
            f"({len(ids)} examples, batch {cfg.batch_size}, {cfg.epochs} epochs); "
            "lower warmup_steps for this dataset size"
        )
    state = new_optimizer_state()
    no_decay = no_decay_names(m)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in _batches(len(ids), cfg.batch_size, rng):
            loss, grads = M.loss_and_grads(m, ids[idx], y[idx], train_mode=True, rng=rng,
                                           mask=mask[idx], param_names=names)
            _clip(grads, cfg.grad_clip)
            step += 1
            lr = lr_schedule(step, total, cfg.warmup_steps, cfg.learning_rate)
            adamw_step(m.params, grads, state, cfg, step, lr=lr, no_decay=no_decay)
            losses.append(loss)
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "steps": step}
        if val_ds is not None and len(val_ds):
            rep = evaluate(predict(m, val_ds, tm, task, max_len=max_len), val_ds, task)
            rec.update(val_accuracy=rep.accuracy, val_macro_f1=rep.macro_f1)
        history.append(rec)
        if logger:
            logger(rec)
        log.info("finetune epoch %d %s", epoch, rec)
    return m, history


def predict(
    m: M.EncoderModel,
    ds: LabeledDataset,
    tm: TokenizerModel,
    task: str,
    run_name: str = "run",
    max_len: int | None = None,
) -> RunPrediction:
    """Class probabilities for every post.

    A six-way model asked for task1 predictions has its probabilities
    collapsed to (sexist, non-sexist).
    """
    classes = classes_for(task)
    max_len = m.config.max_len if max_len is None else min(max_len, m.config.max_len)
    ids, mask = _encode_dataset(ds, tm, max_len)
    probs = M.predict_proba(m, ids, mask)
    if task == "task1" and m.n_classes == len(classes_for("task2")):
        probs = np.stack([derive_task1_probs(p / p.sum()) for p in probs]) if len(probs) else \
            np.zeros((0, 2))
    elif m.n_classes != len(classes):
        raise TrainError(f"model with {m.n_classes} outputs cannot predict {task}")
    return RunPrediction(run_name, task, tuple(ds.ids), probs)


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
