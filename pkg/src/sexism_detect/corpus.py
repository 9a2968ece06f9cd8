"""Posts, labelled datasets and the TSV formats they are stored in."""

from __future__ import annotations

import enum
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class CorpusError(ValueError):
    """Raised for malformed input data or invalid dataset operations."""


class Task1Label(str, enum.Enum):
    SEXIST = "sexist"
    NON_SEXIST = "non-sexist"


class Task2Label(str, enum.Enum):
    IDEOLOGICAL_INEQUALITY = "ideological-inequality"
    OBJECTIFICATION = "objectification"
    STEREOTYPING_DOMINANCE = "stereotyping-dominance"
    MISOGYNY_NON_SEXUAL_VIOLENCE = "misogyny-non-sexual-violence"
    SEXUAL_VIOLENCE = "sexual-violence"
    NON_SEXIST = "non-sexist"


class Language(str, enum.Enum):
    EN = "en"
    ES = "es"

    def other(self) -> "Language":
        return Language.ES if self is Language.EN else Language.EN


class Source(str, enum.Enum):
    TWITTER = "twitter"
    GAB = "gab"
    EXTERNAL = "external"


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    TRANSLATED = "translated"
    EXTERNAL = "external"


# Canonical orderings; probability vectors are indexed by these positions.
TASK1_CLASSES: tuple[Task1Label, ...] = tuple(Task1Label)
TASK2_CLASSES: tuple[Task2Label, ...] = tuple(Task2Label)
TASKS = ("task1", "task2")


def classes_for(task: str) -> tuple:
    if task == "task1":
        return TASK1_CLASSES
    if task == "task2":
        return TASK2_CLASSES
    raise CorpusError(f"unknown task {task!r}; expected one of {TASKS}")


def _parse_enum(kind, value: str, what: str):
    try:
        return kind(value)
    except ValueError:
        allowed = ", ".join(m.value for m in kind)
        raise CorpusError(f"unknown {what} {value!r} (allowed: {allowed})") from None


@dataclass(frozen=True)
class Post:
    id: str
    language: Language
    text: str
    source: Source = Source.TWITTER
    task1: Task1Label | None = None
    task2: Task2Label | None = None
    provenance: Provenance = Provenance.ORIGINAL

    def __post_init__(self):
        if not self.id:
            raise CorpusError("post id must be non-empty")
        if not self.text.strip():
            raise CorpusError(f"post {self.id!r} has empty text")
        # Coerce plain strings so callers can write Post("1", "en", ...).
        object.__setattr__(self, "language", _parse_enum(Language, self.language, "language"))
        object.__setattr__(self, "source", _parse_enum(Source, self.source, "source"))
        object.__setattr__(self, "provenance",
                           _parse_enum(Provenance, self.provenance, "provenance"))
        if self.task1 is not None:
            object.__setattr__(self, "task1", _parse_enum(Task1Label, self.task1, "task1 label"))
        if self.task2 is not None:
            object.__setattr__(self, "task2", _parse_enum(Task2Label, self.task2, "task2 label"))
        if self.task1 is not None and self.task2 is not None:
            if derive_task1(self.task2) is not self.task1:
                raise CorpusError(
                    f"post {self.id!r}: task1={self.task1.value} "
                    f"contradicts task2={self.task2.value}"
                )

    def label(self, task: str):
        """Label for ``task``; task1 falls back to the value implied by task2."""
        if task == "task1":
            if self.task1 is not None:
                return self.task1
            return derive_task1(self.task2) if self.task2 is not None else None
        if task == "task2":
            return self.task2
        raise CorpusError(f"unknown task {task!r}")


@dataclass(frozen=True)
class LabeledDataset:
    posts: tuple[Post, ...]
    name: str = "dataset"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        posts = tuple(self.posts)
        object.__setattr__(self, "posts", posts)
        index = {}
        for i, p in enumerate(posts):
            if p.id in index:
                raise CorpusError(f"duplicate post id {p.id!r} in dataset {self.name!r}")
            index[p.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self) -> Iterator[Post]:
        return iter(self.posts)

    def __getitem__(self, i: int) -> Post:
        return self.posts[i]

    def __contains__(self, post_id: str) -> bool:
        return post_id in self._index

    def get(self, post_id: str) -> Post:
        return self.posts[self._index[post_id]]

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.posts]

    def language_counts(self) -> dict[str, int]:
        return dict(Counter(p.language.value for p in self.posts))

    def label_counts(self, task: str) -> dict[str, int]:
        return dict(Counter(
            lab.value for lab in (p.label(task) for p in self.posts) if lab is not None
        ))


def derive_task1(label2: Task2Label) -> Task1Label:
    label2 = Task2Label(label2)
    return Task1Label.NON_SEXIST if label2 is Task2Label.NON_SEXIST else Task1Label.SEXIST


def derive_task1_probs(p: Sequence[float]) -> np.ndarray:
    """Collapse a six-class probability vector into (sexist, non-sexist)."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (len(TASK2_CLASSES),):
        raise CorpusError(f"expected {len(TASK2_CLASSES)} probabilities, got shape {p.shape}")
    if np.any(p < 0):
        raise CorpusError("probability vector has a negative entry")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise CorpusError(f"probability vector sums to {total!r}, not 1")
    ns = TASK2_CLASSES.index(Task2Label.NON_SEXIST)
    sexist = float(np.delete(p, ns).sum())
    return np.array([sexist, p[ns]])


def split(
    ds: LabeledDataset,
    val_fraction: float = 0.1,
    seed: int = 0,
    stratified: bool = False,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Random train/validation partition.

    The validation size is ``round(val_fraction * len(ds))``.  In stratified
    mode the per-class quotas are found by largest remainder over the task2
    label (task1 when task2 is absent, one pooled stratum for unlabelled
    posts), so each class lands within one instance of its share.
    """
    n = len(ds)
    if n == 0:
        raise CorpusError("cannot split an empty dataset")
    if not 0.0 < val_fraction < 1.0:
        raise CorpusError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = round(val_fraction * n)
    if n_val == 0 or n_val == n:
        raise CorpusError(
            f"val_fraction={val_fraction} on {n} posts leaves an empty train or validation set"
        )
    rng = random.Random(seed)
    if not stratified:
        order = list(range(n))
        rng.shuffle(order)
        val_idx = set(order[:n_val])
    else:
        strata: dict[str, list[int]] = defaultdict(list)
        for i, p in enumerate(ds.posts):
            lab = p.task2 if p.task2 is not None else p.label("task1")
            strata["" if lab is None else lab.value].append(i)
        keys = sorted(strata)
        exact = {k: n_val * len(strata[k]) / n for k in keys}
        quota = {k: int(exact[k]) for k in keys}
        remaining = n_val - sum(quota.values())
        by_remainder = sorted(keys, key=lambda k: (-(exact[k] - quota[k]), k))
        for k in by_remainder[:remaining]:
            quota[k] += 1
        val_idx = set()
        for k in keys:
            members = list(strata[k])
            rng.shuffle(members)
            val_idx.update(members[: quota[k]])
    train = [p for i, p in enumerate(ds.posts) if i not in val_idx]
    val = [p for i, p in enumerate(ds.posts) if i in val_idx]
    return (
        LabeledDataset(tuple(train), name=f"{ds.name}-train"),
        LabeledDataset(tuple(val), name=f"{ds.name}-val"),
    )


def merge(
    datasets: Sequence[LabeledDataset],
    rename_collisions: bool = False,
    name: str | None = None,
) -> LabeledDataset:
    if not datasets:
        raise CorpusError("merge needs at least one dataset")
    if len(datasets) == 1:
        return datasets[0]
    counts = Counter(p.id for ds in datasets for p in ds)
    dupes = sorted(i for i, c in counts.items() if c > 1)
    if dupes and not rename_collisions:
        raise CorpusError(f"duplicate ids across datasets: {', '.join(dupes)}")
    posts = []
    for ds in datasets:
        for p in ds:
            if p.id in counts and counts[p.id] > 1:
                p = replace(p, id=f"{ds.name}:{p.id}")
            posts.append(p)
    return LabeledDataset(tuple(posts), name=name or "+".join(ds.name for ds in datasets))


# ---------------------------------------------------------------------------
# TSV I/O

EXIST_COLUMNS = ("test_case", "id", "source", "language", "text", "task1", "task2")
GENERIC_COLUMNS = ("id", "source", "language", "text", "task1", "task2", "provenance")
_REQUIRED = {
    "exist": ("test_case", "id", "source", "language", "text"),
    "generic": ("id", "language", "text"),
}
_ALLOWED = {"exist": EXIST_COLUMNS, "generic": GENERIC_COLUMNS}

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def escape_field(s: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in s)


def unescape_field(s: str) -> str:
    if "\\" not in s:
        return s
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s) and s[i + 1] in _UNESCAPES:
            out.append(_UNESCAPES[s[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if lineno > 1 and not line:
                continue
            yield lineno, line.split("\t")


def load_tsv(path: str | Path, schema: str = "exist", name: str | None = None) -> LabeledDataset:
    """Read an EXIST-style or generic TSV file into a dataset."""
    path = Path(path)
    if schema not in _ALLOWED:
        raise CorpusError(f"unknown schema {schema!r}; expected 'exist' or 'generic'")
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    rows = _rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise CorpusError(f"{path}: missing header row") from None
    header = [h.strip().lstrip("﻿") for h in header]
    missing = [c for c in _REQUIRED[schema] if c not in header]
    unknown = [c for c in header if c not in _ALLOWED[schema]]
    if missing or unknown:
        raise CorpusError(
            f"{path}: header does not match {schema} schema"
            + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {unknown}" if unknown else "")
        )
    col = {c: i for i, c in enumerate(header)}
    default_prov = Provenance.ORIGINAL if schema == "exist" else None
    posts = []
    for lineno, cells in rows:
        if len(cells) != len(header):
            raise CorpusError(
                f"{path}: row {lineno} has {len(cells)} columns, expected {len(header)}"
            )

        def get(c, cells=cells):
            return unescape_field(cells[col[c]]) if c in col else ""

        try:
            source = get("source") or (Source.EXTERNAL if schema == "generic" else "")
            prov = get("provenance") or default_prov or (
                Provenance.EXTERNAL if source == Source.EXTERNAL else Provenance.ORIGINAL
            )
            posts.append(Post(
                id=get("id"),
                language=get("language"),
                text=get("text"),
                source=source,
                task1=get("task1") or None,
                task2=get("task2") or None,
                provenance=prov,
            ))
        except CorpusError as e:
            raise CorpusError(f"{path}: row {lineno}: {e}") from None
    try:
        return LabeledDataset(tuple(posts), name=name or path.stem)
    except CorpusError as e:
        raise CorpusError(f"{path}: {e}") from None


def _cell(v) -> str:
    if v is None:
        return ""
    return escape_field(v.value if isinstance(v, enum.Enum) else str(v))


def dumps_tsv(ds: LabeledDataset, schema: str = "generic", test_case: str = "EXIST2021") -> str:
    if schema == "generic":
        lines = ["\t".join(GENERIC_COLUMNS)]
        for p in ds:
            lines.append("\t".join(_cell(v) for v in (
                p.id, p.source, p.language, p.text, p.task1, p.task2, p.provenance)))
    elif schema == "exist":
        lines = ["\t".join(EXIST_COLUMNS)]
        for p in ds:
            lines.append("\t".join(_cell(v) for v in (
                test_case, p.id, p.source, p.language, p.text, p.task1, p.task2)))
    else:
        raise CorpusError(f"unknown schema {schema!r}")
    return "\n".join(lines) + "\n"


def write_tsv(ds: LabeledDataset, path: str | Path, schema: str = "generic") -> None:
    Path(path).write_text(dumps_tsv(ds, schema), encoding="utf-8", newline="")


def from_texts(texts: Iterable[str], language: str = "en", name: str = "texts") -> LabeledDataset:
    """Unlabelled external-provenance dataset from raw strings (blank ones skipped)."""
    posts = [
        Post(id=str(i), language=language, text=t, source=Source.EXTERNAL,
             provenance=Provenance.EXTERNAL)
        for i, t in enumerate(texts) if t.strip()
    ]
    return LabeledDataset(tuple(posts), name=name)
