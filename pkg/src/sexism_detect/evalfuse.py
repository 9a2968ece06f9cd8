"""Run predictions, late fusion and the benchmark metrics (accuracy, macro F1)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusError, LabeledDataset, classes_for

SUM_TOL = 1e-6


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class RunPrediction:
    """Per-post class probabilities of one run, columns in canonical class order."""

    run_name: str
    task: str
    ids: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        classes = classes_for(self.task)
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1, len(classes)) \
            if np.size(self.probs) else np.zeros((0, len(classes)))
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "probs", probs)
        if len(self.ids) != len(probs):
            raise PredictionError(f"{len(self.ids)} ids but {len(probs)} probability rows")
        if len(set(self.ids)) != len(self.ids):
            raise PredictionError(f"run {self.run_name!r} has duplicate ids")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise PredictionError(f"run {self.run_name!r} has negative or non-finite probabilities")
        sums = probs.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > SUM_TOL)
        if bad.size:
            i = int(bad[0])
            raise PredictionError(
                f"run {self.run_name!r}: probabilities for {self.ids[i]!r} sum to {sums[i]!r}"
            )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def classes(self) -> tuple:
        return classes_for(self.task)

    def label_indices(self) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(self.probs, axis=1) if len(self.probs) else np.zeros(0, np.int64)

    def labels(self) -> list:
        cls = self.classes
        return [cls[i] for i in self.label_indices()]

    def hard_labels(self) -> dict[str, object]:
        return dict(zip(self.ids, self.labels()))

    def reindexed(self, ids: Sequence[str]) -> "RunPrediction":
        pos = {i: k for k, i in enumerate(self.ids)}
        return RunPrediction(self.run_name, self.task, tuple(ids),
                             self.probs[[pos[i] for i in ids]])


# ---------------------------------------------------------------------------
# prediction files (JSON lines with a '#' header naming the class order)

def dumps_predictions(pred: RunPrediction) -> str:
    header = "# run={} task={} classes={}".format(
        pred.run_name, pred.task, ",".join(c.value for c in pred.classes))
    lines = [header]
    for pid, row in zip(pred.ids, pred.probs):
        lines.append(json.dumps({"id": pid, "task": pred.task, "probs": [float(x) for x in row]}))
    return "\n".join(lines) + "\n"


def write_predictions(pred: RunPrediction, path: str | Path) -> None:
    Path(path).write_text(dumps_predictions(pred), encoding="utf-8")


def read_predictions(path: str | Path, run_name: str | None = None) -> RunPrediction:
    path = Path(path)
    if not path.exists():
        raise PredictionError(f"no such prediction file: {path}")
    ids, rows, tasks = [], [], set()
    header_run = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for part in line[1:].split():
                if part.startswith("run="):
                    header_run = part[4:]
            continue
        try:
            rec = json.loads(line)
            ids.append(str(rec["id"]))
            rows.append(rec["probs"])
            tasks.add(rec["task"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise PredictionError(f"{path}: line {lineno}: bad record ({e})") from None
    if len(tasks) > 1:
        raise PredictionError(f"{path}: records mix tasks {sorted(tasks)}")
    if not tasks:
        raise PredictionError(f"{path}: no prediction records")
    try:
        return RunPrediction(run_name or header_run or path.stem, tasks.pop(), tuple(ids),
                             np.asarray(rows, dtype=np.float64))
    except (CorpusError, ValueError) as e:
        raise PredictionError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# fusion

def late_fuse(runs: Sequence[RunPrediction], name: str | None = None) -> RunPrediction:
    """Sum the runs' class-probability vectors per post and renormalise.

    The fused label is the argmax of the sum (lowest class index on ties).
    Output rows follow the first run's id order.
    """
    if len(runs) < 2:
        raise PredictionError("late fusion needs at least two runs")
    tasks = {r.task for r in runs}
    if len(tasks) != 1:
        raise PredictionError(f"cannot fuse runs of different tasks: {sorted(tasks)}")
    ref = set(runs[0].ids)
    for r in runs[1:]:
        diff = ref.symmetric_difference(r.ids)
        if diff:
            raise PredictionError(
                f"run {r.run_name!r} covers different ids than {runs[0].run_name!r}: "
                + ", ".join(sorted(diff))
            )
    ids = runs[0].ids
    total = np.zeros_like(runs[0].probs)
    for r in runs:
        total += r.reindexed(ids).probs
    fused = total / total.sum(axis=1, keepdims=True) if len(total) else total
    return RunPrediction(name or "fusion(" + "+".join(r.run_name for r in runs) + ")",
                         runs[0].task, ids, fused)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class EvalReport:
    task: str
    classes: tuple[str, ...]
    confusion: np.ndarray      # rows = truth, columns = prediction
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_f1: float
    n_instances: int = field(default=0)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_instances": self.n_instances,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "classes": list(self.classes),
            "per_class": {
                c: {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for c, p, r, f, s in zip(self.classes, self.precision, self.recall, self.f1,
                                         self.support)
            },
            "confusion": self.confusion.tolist(),
        }

    def format_table(self) -> str:
        width = max(len("class"), *(len(c) for c in self.classes))
        lines = [f"{'class':<{width}}  precision  recall      f1  support"]
        for c, p, r, f, s in zip(self.classes, self.precision, self.recall, self.f1, self.support):
            lines.append(f"{c:<{width}}  {p:9.4f}  {r:6.4f}  {f:6.4f}  {int(s):7d}")
        lines.append("")
        lines.append(f"{'accuracy':<{width}}  {self.accuracy:.4f}")
        lines.append(f"{'macro F1':<{width}}  {self.macro_f1:.4f}")
        lines.append(f"{'instances':<{width}}  {self.n_instances}")
        return "\n".join(lines)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def scores_from_indices(truth: np.ndarray, pred: np.ndarray, n_classes: int):
    """Confusion matrix and per-class P/R/F1 from integer labels (0/0 -> 0)."""
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    tp = np.diag(conf).astype(np.float64)
    precision = _safe_div(tp, conf.sum(axis=0).astype(np.float64))
    recall = _safe_div(tp, conf.sum(axis=1).astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return conf, precision, recall, f1


def evaluate(
    pred: RunPrediction | Mapping[str, object],
    truth: LabeledDataset,
    task: str,
) -> EvalReport:
    """Accuracy and macro F1 over every canonical class of ``task``.

    ``pred`` is a RunPrediction (argmax taken) or a mapping of post id to a
    hard label.  Classes absent from both truth and predictions contribute an
    F1 of 0 to the macro average.
    """
    classes = classes_for(task)
    if isinstance(pred, RunPrediction):
        if pred.task != task:
            raise PredictionError(f"prediction is for {pred.task}, evaluation asked for {task}")
        hard = dict(zip(pred.ids, pred.label_indices().tolist()))
    else:
        hard = {}
        for pid, lab in pred.items():
            try:
                hard[pid] = classes.index(type(classes[0])(lab))
            except ValueError:
                raise PredictionError(f"unknown {task} label {lab!r} for {pid!r}") from None
    t_idx, p_idx = [], []
    for pid, k in hard.items():
        if pid not in truth:
            raise PredictionError(f"no ground truth for id {pid!r}")
        lab = truth.get(pid).label(task)
        if lab is None:
            raise PredictionError(f"post {pid!r} has no {task} label")
        t_idx.append(classes.index(lab))
        p_idx.append(k)
    t = np.asarray(t_idx, dtype=np.int64)
    p = np.asarray(p_idx, dtype=np.int64)
    conf, precision, recall, f1 = scores_from_indices(t, p, len(classes))
    n = len(t)
    return EvalReport(
        task=task,
        classes=tuple(c.value for c in classes),
        confusion=conf,
        precision=precision,
        recall=recall,
        f1=f1,
        support=conf.sum(axis=1),
        accuracy=float(np.trace(conf) / n) if n else 0.0,
        macro_f1=float(f1.mean()),
        n_instances=n,
    )


def majority_baseline(train: LabeledDataset, val: LabeledDataset, task: str) -> EvalReport:
    """Scores of always predicting the most frequent training class."""
    classes = classes_for(task)
    counts = np.zeros(len(classes), dtype=np.int64)
    for p in train:
        counts[classes.index(p.label(task))] += 1
    top = classes[int(np.argmax(counts))]
    return evaluate({p.id: top for p in val}, val, task)


# ---------------------------------------------------------------------------
# submission files

SUBMISSION_COLUMNS = ("test_case", "id", "label")


def write_submission(pred: RunPrediction, path: str | Path, test_case: str = "EXIST2021") -> None:
    lines = ["\t".join(SUBMISSION_COLUMNS)]
    for pid, lab in zip(pred.ids, pred.labels()):
        lines.append(f"{test_case}\t{pid}\t{lab.value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_submission(path: str | Path, task: str) -> dict[str, object]:
    classes = classes_for(task)
    kind = type(classes[0])
    out = {}
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(rows, start=1):
        if not line.strip() or (lineno == 1 and line.split("\t") == list(SUBMISSION_COLUMNS)):
            continue
        cells = line.split("\t")
        if len(cells) != 3:
            raise PredictionError(f"{path}: row {lineno} has {len(cells)} columns, expected 3")
        try:
            out[cells[1]] = kind(cells[2])
        except ValueError:
            raise PredictionError(
                f"{path}: row {lineno}: unknown {task} label {cells[2]!r}") from None
    return out
