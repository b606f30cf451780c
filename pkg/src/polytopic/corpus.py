"""Document ingestion: tokenization, frequency-capped vocabularies,
bag-of-words vectorization, and cross-lingually aligned document sets.

File formats
------------
* Document file: JSON lines, one object per line:
  ``{"id": str, "lang": str, "text": str}``.
* Manifest: a JSON object
  ``{"pivot": lang, "files": {lang: path}, "stopwords": {lang: path}}``.
  Paths are resolved relative to the manifest's directory.
* Stopword file: plain text, one token per line.
* Vocab file: plain text, one token per line; the line number is the
  vocabulary index.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AlignmentMismatchError,
    CorpusError,
    EmptyVocabularyError,
    LengthMismatchError,
)


def tokenize(text: str) -> list[str]:
    """Whitespace split, strip non-alphanumeric affixes, lowercase.

    Pieces that contain no alphanumeric character are dropped. The rule is
    deliberately language-agnostic and deterministic.
    """
    out = []
    for piece in text.split():
        start, end = 0, len(piece)
        while start < end and not piece[start].isalnum():
            start += 1
        while end > start and not piece[end - 1].isalnum():
            end -= 1
        if end > start:
            out.append(piece[start:end].lower())
    return out


@dataclass(frozen=True)
class Document:
    """One tokenized document. Tokens are stored lowercased."""

    id: str
    language: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if any(t != t.lower() for t in self.tokens):
            object.__setattr__(self, "tokens", tuple(t.lower() for t in self.tokens))


def document_from_record(record: Mapping[str, str]) -> Document:
    """Build a Document from one parsed JSONL record."""
    try:
        doc_id, lang, text = record["id"], record["lang"], record["text"]
    except KeyError as exc:
        raise CorpusError(f"document record missing field {exc}") from exc
    return Document(id=str(doc_id), language=str(lang), tokens=tuple(tokenize(text)))


def read_documents(path: str | Path) -> list[Document]:
    """Read a JSONL document file."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            docs.append(document_from_record(record))
    return docs


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One token per line; lowercased, blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


@dataclass(frozen=True)
class Vocab:
    """Frequency-ranked vocabulary.

    ``entries`` is (token, corpus frequency), sorted by descending
    frequency with lexicographic tie-break; ``index`` maps token to its
    position (a bijection onto ``range(len(entries))``).
    """

    entries: tuple[tuple[str, int], ...]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            object.__setattr__(self, "index", {t: i for i, (t, _) in enumerate(self.entries)})

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def tokens(self) -> list[str]:
        return [t for t, _ in self.entries]

    def position(self, token: str) -> int:
        return self.index[token]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token, _ in self.entries:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        """Load a vocab file. Frequencies are not stored on disk and come
        back as 0; index positions are authoritative."""
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(entries=tuple((t, 0) for t in tokens))


def build_vocab(docs: Sequence[Document], cap: int,
                stopwords: Iterable[str] = ()) -> Vocab:
    """The ``cap`` most frequent non-stopword types across ``docs``.

    Frequency ties break lexicographically, so the result is independent
    of document order.
    """
    if not docs:
        raise CorpusError("build_vocab needs at least one document")
    if cap < 1:
        raise CorpusError(f"vocab cap must be >= 1, got {cap}")
    stop = {s.lower() for s in stopwords}
    counts = Counter()
    for doc in docs:
        counts.update(doc.tokens)
    items = [(t, c) for t, c in counts.items() if t not in stop]
    if not items:
        raise EmptyVocabularyError()
    items.sort(key=lambda tc: (-tc[1], tc[0]))
    return Vocab(entries=tuple(items[:cap]))


@dataclass(frozen=True)
class BowVector:
    """Sparse bag of words: vocab position -> count (all counts > 0)."""

    counts: dict[int, int]

    def total(self) -> int:
        return sum(self.counts.values())

    def __len__(self) -> int:
        return len(self.counts)

    def dense(self, size: int, dtype=float) -> np.ndarray:
        out = np.zeros(size, dtype=dtype)
        for pos, c in self.counts.items():
            out[pos] = c
        return out


def vectorize(doc: Document, vocab: Vocab) -> BowVector:
    """Count in-vocab tokens; out-of-vocab tokens are dropped.

    A document with no in-vocab token yields an empty BowVector; callers
    that cannot handle empty documents flag them downstream.
    """
    if len(vocab) == 0:
        raise CorpusError("cannot vectorize against an empty vocabulary")
    counts: dict[int, int] = {}
    index = vocab.index
    for token in doc.tokens:
        pos = index.get(token)
        if pos is not None:
            counts[pos] = counts.get(pos, 0) + 1
    return BowVector(counts=counts)


def vectorize_all(docs: Sequence[Document], vocab: Vocab) -> list[BowVector]:
    return [vectorize(d, vocab) for d in docs]


@dataclass(frozen=True)
class AlignedCorpus:
    """Documents aligned across languages by shared id.

    ``docs[lang][i]`` has the same id for every language; order follows
    the pivot language's file order.
    """

    languages: tuple[str, ...]
    docs: dict[str, list[Document]]
    pivot: str

    def __post_init__(self):
        if self.pivot not in self.languages:
            raise CorpusError(f"pivot language {self.pivot!r} not among {self.languages}")
        n = len(self.docs[self.pivot])
        for lang in self.languages:
            if len(self.docs[lang]) != n:
                raise LengthMismatchError(
                    f"language {lang!r} has {len(self.docs[lang])} docs, pivot has {n}")
        pivot_ids = [d.id for d in self.docs[self.pivot]]
        for lang in self.languages:
            for i, doc in enumerate(self.docs[lang]):
                if doc.id != pivot_ids[i]:
                    raise AlignmentMismatchError(pivot_ids[i], lang)

    def __len__(self) -> int:
        return len(self.docs[self.pivot])

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.docs[self.pivot]]

    def pivot_docs(self) -> list[Document]:
        return self.docs[self.pivot]


@dataclass(frozen=True)
class Manifest:
    pivot: str
    files: dict[str, Path]
    stopwords: dict[str, Path]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    for key in ("pivot", "files"):
        if key not in raw:
            raise CorpusError(f"manifest {path} missing key {key!r}")
    base = path.parent
    files = {lang: (base / p) for lang, p in raw["files"].items()}
    stop = {lang: (base / p) for lang, p in raw.get("stopwords", {}).items()}
    if raw["pivot"] not in files:
        raise CorpusError(f"manifest pivot {raw['pivot']!r} has no document file")
    return Manifest(pivot=raw["pivot"], files=files, stopwords=stop)


def load_aligned_corpus(manifest_path: str | Path) -> AlignedCorpus:
    """Read every language file of a manifest and align documents by id.

    The pivot file's order is canonical; other languages are re-ordered to
    match it. A pivot id missing from some language raises
    :class:`AlignmentMismatchError` naming the first offending id;
    left-over ids raise :class:`LengthMismatchError`.
    """
    man = load_manifest(manifest_path)
    per_lang = {lang: read_documents(p) for lang, p in man.files.items()}
    pivot_docs = per_lang[man.pivot]
    pivot_ids = [d.id for d in pivot_docs]
    if len(set(pivot_ids)) != len(pivot_ids):
        dupe = next(i for i in pivot_ids if pivot_ids.count(i) > 1)
        raise CorpusError(f"duplicate document id {dupe!r} in pivot file")
    aligned: dict[str, list[Document]] = {man.pivot: pivot_docs}
    for lang, docs in per_lang.items():
        if lang == man.pivot:
            continue
        by_id = {d.id: d for d in docs}
        if len(by_id) != len(docs):
            dupe = next(i for i in (d.id for d in docs) if [d.id for d in docs].count(i) > 1)
            raise CorpusError(f"duplicate document id {dupe!r} in language {lang!r}")
        ordered = []
        for pid in pivot_ids:
            if pid not in by_id:
                raise AlignmentMismatchError(pid, lang)
            ordered.append(by_id[pid])
        if len(docs) != len(pivot_ids):
            extra = sorted(set(by_id) - set(pivot_ids))
            raise LengthMismatchError(
                f"language {lang!r} has {len(docs)} docs vs {len(pivot_ids)} in pivot"
                f" (extra ids: {', '.join(extra[:5])})")
        aligned[lang] = ordered
    languages = tuple(sorted(per_lang, key=lambda l: (l != man.pivot, l)))
    return AlignedCorpus(languages=languages, docs=aligned, pivot=man.pivot)
