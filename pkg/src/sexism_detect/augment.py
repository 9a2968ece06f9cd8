"""Translation augmentation: every post gets a copy in the other language.

Translation goes through a small provider interface so runs work offline
(dictionary mock), resumably (file cache) or against a remote service.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

from .corpus import (
    CorpusError,
    LabeledDataset,
    Language,
    Provenance,
    escape_field,
    merge,
    unescape_field,
)

log = logging.getLogger(__name__)

TRANSLATED_SUFFIX = ":tr"
API_KEY_ENV = "SEXISM_DETECT_TRANSLATE_KEY"


class TranslationError(RuntimeError):
    pass


class PartialTranslationError(TranslationError):
    """Some posts could not be translated; ``partial`` holds the rest."""

    def __init__(self, partial: LabeledDataset, skipped: list[str], reasons: dict[str, str]):
        self.partial = partial
        self.skipped = skipped
        self.reasons = reasons
        super().__init__(f"{len(skipped)} post(s) could not be translated: {', '.join(skipped)}")


class TranslationProvider(Protocol):
    def translate(self, text: str, source: str, target: str) -> str: ...


class MockTranslator:
    """Word-for-word dictionary translation; unknown words pass through.

    The dictionary is a TSV of ``en_word<TAB>es_word`` lines.  Lookups try
    the word as written, then lowercased.  ``calls`` counts requests.
    """

    def __init__(self, en_to_es: dict[str, str]):
        self.en_es = dict(en_to_es)
        self.es_en: dict[str, str] = {}
        for en, es in self.en_es.items():
            self.es_en.setdefault(es, en)
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_tsv(cls, path: str | Path) -> "MockTranslator":
        pairs = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if len(cells) != 2:
                raise CorpusError(f"{path}: line {lineno} must be en_word<TAB>es_word")
            pairs.setdefault(cells[0], cells[1])
        return cls(pairs)

    def translate(self, text: str, source: str, target: str) -> str:
        with self._lock:
            self.calls += 1
        table = _direction(self, source, target)
        out = []
        for w in text.split():
            hit = table.get(w)
            if hit is None:
                hit = table.get(w.lower(), w)
            out.append(hit)
        return " ".join(out) or text


def _direction(mock: MockTranslator, source: str, target: str) -> dict[str, str]:
    pair = (str(getattr(source, "value", source)), str(getattr(target, "value", target)))
    if pair == ("en", "es"):
        return mock.en_es
    if pair == ("es", "en"):
        return mock.es_en
    raise TranslationError(f"unsupported direction {pair[0]}->{pair[1]}")


class CachingTranslator:
    """Wraps a provider with an append-only on-disk cache.

    Cache file: one line per entry, ``sha256(text)<TAB>source<TAB>target<TAB>
    translation`` with the translation escaped like TSV dataset fields.
    """

    def __init__(self, inner: TranslationProvider, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        self._table: dict[tuple[str, str, str], str] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                cells = line.split("\t")
                if len(cells) == 4:
                    self._table[(cells[0], cells[1], cells[2])] = unescape_field(cells[3])

    @staticmethod
    def key(text: str, source: str, target: str) -> tuple[str, str, str]:
        return (hashlib.sha256(text.encode("utf-8")).hexdigest(),
                str(getattr(source, "value", source)), str(getattr(target, "value", target)))

    def __len__(self) -> int:
        return len(self._table)

    def compact(self) -> None:
        """Rewrite the cache file sorted by key.

        Appends land in completion order, which varies with parallelism;
        compacting after a run makes the file reproducible.
        """
        with self._lock:
            lines = sorted("\t".join(k) + "\t" + escape_field(v) + "\n"
                           for k, v in self._table.items())
            self.path.write_text("".join(lines), encoding="utf-8")

    def translate(self, text: str, source: str, target: str) -> str:
        k = self.key(text, source, target)
        with self._lock:
            if k in self._table:
                return self._table[k]
        out = self.inner.translate(text, source, target)
        with self._lock:
            if k not in self._table:
                self._table[k] = out
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write("\t".join(k) + "\t" + escape_field(out) + "\n")
        return out


class HttpTranslator:
    """POSTs ``{"text", "source", "target"}`` as JSON and reads ``{"text"}`` back.

    The API key, if any, is read from ``$SEXISM_DETECT_TRANSLATE_KEY`` and
    sent as a bearer token.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, key_env: str = API_KEY_ENV):
        self.endpoint = endpoint
        self.timeout = timeout
        self.key = os.environ.get(key_env)

    def translate(self, text: str, source: str, target: str) -> str:
        body = json.dumps({
            "text": text,
            "source": str(getattr(source, "value", source)),
            "target": str(getattr(target, "value", target)),
        }).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        if self.key:
            req.add_header("Authorization", f"Bearer {self.key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as e:
            raise TranslationError(f"translation request failed: {e}") from e
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise TranslationError("translation response lacks a 'text' string")
        return payload["text"]


@dataclass(frozen=True)
class AugmentedPair:
    original: object
    translated: object


def _translate_post(post, provider: TranslationProvider):
    target = post.language.other()
    last = None
    for _ in range(2):  # one retry
        try:
            text = provider.translate(post.text, post.language.value, target.value)
            if not text or not text.strip():
                raise TranslationError("empty translation")
            return replace(post, id=post.id + TRANSLATED_SUFFIX, language=target, text=text,
                           provenance=Provenance.TRANSLATED), None
        except Exception as e:  # provider errors are reported, not fatal
            last = e
    return None, f"{type(last).__name__}: {last}"


def translate_dataset(
    ds: LabeledDataset,
    provider: TranslationProvider,
    parallelism: int = 1,
) -> LabeledDataset:
    """Translate every post into the other language.

    Output order follows the input.  Posts whose translation fails twice are
    skipped; if any were skipped a PartialTranslationError carrying the
    partial dataset is raised.
    """
    for p in ds:
        if p.language not in (Language.EN, Language.ES):
            raise TranslationError(f"post {p.id!r} has unsupported language {p.language}")
    if parallelism > 1 and len(ds) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as ex:
            results = list(ex.map(lambda p: _translate_post(p, provider), ds.posts))
    else:
        results = [_translate_post(p, provider) for p in ds.posts]
    kept, skipped, reasons = [], [], {}
    for p, (tr, err) in zip(ds.posts, results):
        if tr is None:
            skipped.append(p.id)
            reasons[p.id] = err
        else:
            kept.append(tr)
    out = LabeledDataset(tuple(kept), name=f"{ds.name}{TRANSLATED_SUFFIX}")
    if skipped:
        log.warning("skipped %d untranslatable posts", len(skipped))
        raise PartialTranslationError(out, skipped, reasons)
    return out


def pairs(ds: LabeledDataset, translated: LabeledDataset) -> list[AugmentedPair]:
    return [AugmentedPair(ds.get(t.id[: -len(TRANSLATED_SUFFIX)]), t) for t in translated]


def with_translations(
    ds: LabeledDataset,
    provider: TranslationProvider,
    parallelism: int = 1,
) -> LabeledDataset:
    """The dataset followed by its translations (twice the size when nothing is skipped).

    A dataset that already carries translations is rejected rather than
    augmented a second time.
    """
    already = [p.id for p in ds
               if p.provenance is Provenance.TRANSLATED or p.id + TRANSLATED_SUFFIX in ds]
    if already:
        raise CorpusError(
            f"dataset {ds.name!r} already contains translations (e.g. {already[0]!r}); "
            "refusing to augment twice"
        )
    try:
        translated = translate_dataset(ds, provider, parallelism)
    except PartialTranslationError as e:
        raise PartialTranslationError(merge([ds, e.partial], name=ds.name), e.skipped,
                                      e.reasons) from None
    return merge([ds, translated], name=ds.name)
