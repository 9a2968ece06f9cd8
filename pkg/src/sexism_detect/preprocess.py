"""Text normalisation pipelines for social-media posts.

Four pipelines of increasing intensity:

* ``p1`` drops whole hashtag tokens,
* ``p2`` drops ASCII punctuation,
* ``p3`` drops links, mentions and hashtags,
* ``p4`` is ``p3`` plus digits, ASCII punctuation and every non-ASCII code
  point left after stripping diacritics (``niña`` -> ``nina``).

Removed tokens (links, mentions, hashtags) are replaced by a space so their
neighbours are not glued together; removed characters are deleted outright.
Every pipeline then collapses whitespace runs to one space and trims.  The
rules are re-applied until the text stops changing, which makes each
pipeline idempotent by construction.  Lowercasing is left to the tokenizer.
"""

from __future__ import annotations

import enum
import re
import string
import unicodedata
from dataclasses import replace

from .corpus import CorpusError, LabeledDataset


class PipelineId(str, enum.Enum):
    P1_HASHTAGS_ONLY = "p1"
    P2_PUNCT_ONLY = "p2"
    P3_MENTIONS_HASHTAGS_LINKS = "p3"
    P4_FULL = "p4"


MENTION_RE = re.compile(r"@\w+")
HASHTAG_RE = re.compile(r"#\w+")
LINK_RE = re.compile(r"(?:https?://|www\.)\S*")
DIGIT_RE = re.compile(r"[0-9]+")
PUNCT_RE = re.compile("[" + re.escape(string.punctuation) + "]+")
NON_ASCII_RE = re.compile(r"[^\x00-\x7f]+")


def fold_diacritics(text: str) -> str:
    """Canonical decomposition with combining marks removed (``á`` -> ``a``)."""
    decomposed = unicodedata.normalize("NFD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c))


def _squeeze(text: str) -> str:
    return " ".join(text.split())


def _p1(text: str) -> str:
    return HASHTAG_RE.sub(" ", text)


def _p2(text: str) -> str:
    return PUNCT_RE.sub("", text)


def _p3(text: str) -> str:
    # Links first: URLs may contain '#' fragments and '@'.
    text = LINK_RE.sub(" ", text)
    text = MENTION_RE.sub(" ", text)
    return HASHTAG_RE.sub(" ", text)


def _p4(text: str) -> str:
    text = fold_diacritics(_p3(text))
    text = DIGIT_RE.sub("", text)
    text = PUNCT_RE.sub("", text)
    return NON_ASCII_RE.sub("", text)


_STEPS = {
    PipelineId.P1_HASHTAGS_ONLY: _p1,
    PipelineId.P2_PUNCT_ONLY: _p2,
    PipelineId.P3_MENTIONS_HASHTAGS_LINKS: _p3,
    PipelineId.P4_FULL: _p4,
}


def parse_pipeline(name: str | PipelineId) -> PipelineId:
    if isinstance(name, PipelineId):
        return name
    key = str(name).lower()
    for pid in PipelineId:
        if key in (pid.value, pid.name.lower()):
            return pid
    raise CorpusError(f"unknown pipeline {name!r}; expected p1, p2, p3 or p4")


def apply(pipeline: str | PipelineId, text: str) -> str:
    step = _STEPS[parse_pipeline(pipeline)]
    out = _squeeze(step(text))
    while True:
        again = _squeeze(step(out))
        if again == out:
            return out
        out = again


def apply_dataset(pipeline: str | PipelineId, ds: LabeledDataset) -> tuple[LabeledDataset, int]:
    """Apply a pipeline to every post; posts left empty are dropped.

    Returns the new dataset and the number of dropped posts.
    """
    pid = parse_pipeline(pipeline)
    kept = []
    dropped = 0
    for p in ds:
        text = apply(pid, p.text)
        if not text:
            dropped += 1
            continue
        kept.append(p if text == p.text else replace(p, text=text))
    return LabeledDataset(tuple(kept), name=ds.name), dropped

