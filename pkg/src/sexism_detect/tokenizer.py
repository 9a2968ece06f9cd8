"""Greedy longest-match subword tokenizer (WordPiece style).

The vocabulary file holds one token per line and the line number is the id.
The first five lines are always ``[PAD] [UNK] [CLS] [SEP] [MASK]``.
Continuation pieces carry a ``##`` prefix.  Settings that are not part of
the token list (case folding) live in a JSON sidecar ``<vocab>.json``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .corpus import LabeledDataset

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
N_SPECIALS = len(SPECIALS)
PREFIX = "##"
TOKENIZER_FORMAT_VERSION = 1


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class Encoding:
    ids: np.ndarray
    attention_mask: np.ndarray
    length: int  # real tokens including CLS and SEP

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class TokenizerModel:
    tokens: list[str]
    uncased: bool = True
    max_vocab: int = 8000
    vocab: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:N_SPECIALS]) != SPECIALS:
            raise TokenizerError(f"vocabulary must start with {' '.join(SPECIALS)}")
        self.vocab = {}
        for i, t in enumerate(self.tokens):
            if not t or any(c.isspace() for c in t):
                raise TokenizerError(f"invalid token {t!r} at id {i}")
            if t in self.vocab:
                raise TokenizerError(f"duplicate token {t!r}")
            self.vocab[t] = i
        # Specials are never matched from raw text.
        self._pieces = {t: i for t, i in self.vocab.items() if i >= N_SPECIALS}
        self._max_piece = max(
            (len(t) - len(PREFIX) if t.startswith(PREFIX) else len(t)
             for t in self._pieces),
            default=1,
        )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def normalize(self, text: str) -> str:
        return text.lower() if self.uncased else text

    def tokenize_ids(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in self.normalize(text).split():
            ids.extend(kernels.wordpiece(word, self._pieces, UNK_ID, self._max_piece))
        return ids

    def tokenize(self, text: str) -> list[str]:
        return [self.tokens[i] for i in self.tokenize_ids(text)]

    def encode(self, text: str, max_len: int = 128) -> Encoding:
        if max_len < 3:
            raise TokenizerError(f"max_len must be >= 3, got {max_len}")
        body = self.tokenize_ids(text)[: max_len - 2]
        n = len(body) + 2
        ids = np.full(max_len, PAD_ID, dtype=np.int64)
        ids[0] = CLS_ID
        ids[1 : n - 1] = body
        ids[n - 1] = SEP_ID
        mask = np.zeros(max_len, dtype=np.int64)
        mask[:n] = 1
        return Encoding(ids=ids, attention_mask=mask, length=n)

    def encode_batch(
        self, texts: Iterable[str], max_len: int = 128
    ) -> tuple[np.ndarray, np.ndarray]:
        encs = [self.encode(t, max_len) for t in texts]
        if not encs:
            return np.zeros((0, max_len), np.int64), np.zeros((0, max_len), np.int64)
        return np.stack([e.ids for e in encs]), np.stack([e.attention_mask for e in encs])

    def decode(self, ids: Sequence[int]) -> str:
        words: list[str] = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise TokenizerError(
                    f"token id {i} out of range for vocabulary of {len(self.tokens)}")
            if i < N_SPECIALS:
                continue
            tok = self.tokens[i]
            if tok.startswith(PREFIX) and words:
                words[-1] += tok[len(PREFIX):]
            else:
                words.append(tok[len(PREFIX):] if tok.startswith(PREFIX) else tok)
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text("\n".join(self.tokens) + "\n", encoding="utf-8")
        meta = {
            "format_version": TOKENIZER_FORMAT_VERSION,
            "uncased": self.uncased,
            "max_vocab": self.max_vocab,
            "continuation_prefix": PREFIX,
            "specials": list(SPECIALS),
        }
        text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
        sidecar(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, uncased: bool | None = None) -> "TokenizerModel":
        path = Path(path)
        if not path.exists():
            raise TokenizerError(f"no such vocabulary file: {path}")
        tokens = path.read_text(encoding="utf-8").splitlines()
        meta = {}
        if sidecar(path).exists():
            meta = json.loads(sidecar(path).read_text(encoding="utf-8"))
        if uncased is None:
            uncased = bool(meta.get("uncased", False))
        return cls(tokens, uncased=uncased, max_vocab=int(meta.get("max_vocab", len(tokens))))


def sidecar(vocab_path: Path) -> Path:
    return vocab_path.with_name(vocab_path.name + ".json")


def train_vocab(
    corpus: LabeledDataset | Iterable[str],
    max_vocab: int = 8000,
    min_freq: int = 1,
    uncased: bool = True,
) -> TokenizerModel:
    """Learn a WordPiece vocabulary by repeated most-frequent-pair merging.

    Words are split into a word-initial character followed by ``##``
    continuation characters.  Characters seen fewer than ``min_freq`` times
    are left out (words containing them take no part in merging).  Then the
    most frequent adjacent pair is merged until ``max_vocab`` is reached or
    no pair occurs ``min_freq`` times; ties go to the lexicographically
    smallest pair.
    """
    texts = [p.text for p in corpus] if isinstance(corpus, LabeledDataset) else list(corpus)
    word_freq: Counter = Counter()
    for t in texts:
        word_freq.update((t.lower() if uncased else t).split())
    char_freq: Counter = Counter()
    for w, f in word_freq.items():
        for c in w:
            char_freq[c] += f
    keep = {c for c, f in char_freq.items() if f >= min_freq}

    words = sorted(w for w in word_freq if all(c in keep for c in w))
    if not words:
        raise TokenizerError("corpus has no words left after min_freq filtering")
    splits = [[w[0]] + [PREFIX + c for c in w[1:]] for w in words]
    freqs = [word_freq[w] for w in words]
    alphabet = sorted({s for sp in splits for s in sp})
    if max_vocab < N_SPECIALS + len(alphabet):
        raise TokenizerError(
            f"max_vocab={max_vocab} is below specials + alphabet = {N_SPECIALS + len(alphabet)}"
        )

    tokens = list(SPECIALS) + alphabet
    known = set(tokens)
    while len(tokens) < max_vocab:
        counts = kernels.count_pairs(splits, freqs)
        if not counts:
            break
        (a, b), best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if best < min_freq:
            break
        merged = a + b[len(PREFIX):]
        kernels.merge_pair(splits, a, b, merged)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        live = [i for i, sp in enumerate(splits) if len(sp) > 1]
        if len(live) < len(splits):
            splits = [splits[i] for i in live]
            freqs = [freqs[i] for i in live]
    return TokenizerModel(tokens, uncased=uncased, max_vocab=max_vocab)


def encode(tm: TokenizerModel, text: str, max_len: int = 128) -> Encoding:
    return tm.encode(text, max_len)


def decode(tm: TokenizerModel, ids: Sequence[int]) -> str:
    return tm.decode(ids)
