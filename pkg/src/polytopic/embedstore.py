"""Read, validate and bind per-document embedding vectors.

The on-disk format ("PTEB1") is binary so round-trips are bit-exact:

* magic bytes ``PTEB1``
* u32 little-endian row count
* u32 little-endian dimension
* ``count`` null-terminated UTF-8 document ids
* ``count * dim`` little-endian IEEE-754 32-bit floats, row-major

Vectors are served exactly as stored: no normalization, no casting on the
way in, so differences between embedding exporters stay visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import AlignedCorpus, Document
from .errors import EmbeddingFormatError, MissingEmbeddingError, NonFiniteEmbeddingError

MAGIC = b"PTEB1"


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense per-document vectors; ``rows[i]`` belongs to ``ids[i]``."""

    ids: tuple[str, ...]
    rows: np.ndarray  # (len(ids), dim) float32

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise EmbeddingFormatError(f"rows must be 2-D, got shape {self.rows.shape}")
        if len(self.ids) != self.rows.shape[0]:
            raise EmbeddingFormatError(
                f"{len(self.ids)} ids but {self.rows.shape[0]} rows")
        bad = np.where(~np.isfinite(self.rows).all(axis=1))[0]
        if bad.size:
            raise NonFiniteEmbeddingError(int(bad[0]))

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def row_for(self, doc_id: str) -> np.ndarray:
        return self.rows[self.ids.index(doc_id)]


def write_embeddings(path: str | Path, ids: Sequence[str], rows: np.ndarray) -> None:
    """Write a PTEB1 file. ``rows`` is cast to float32; ids must be
    NUL-free UTF-8. The write is atomic (temp file + rename)."""
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[0] != len(ids):
        raise EmbeddingFormatError(
            f"need one row per id: {len(ids)} ids, rows shape {rows.shape}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(ids)).tobytes())
        fh.write(np.uint32(rows.shape[1]).tobytes())
        for doc_id in ids:
            raw = doc_id.encode("utf-8")
            if b"\x00" in raw:
                raise EmbeddingFormatError(f"id {doc_id!r} contains NUL")
            fh.write(raw + b"\x00")
        fh.write(rows.astype("<f4", copy=False).tobytes())
    tmp.replace(path)


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read and validate a PTEB1 file.

    Raises :class:`EmbeddingFormatError` on bad magic, truncation or size
    mismatch and :class:`NonFiniteEmbeddingError` (with the row index) on
    NaN/Inf entries.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    offset = len(MAGIC)
    if len(data) < offset + 8:
        raise EmbeddingFormatError(f"{path}: truncated header")
    count = int(np.frombuffer(data, dtype="<u4", count=1, offset=offset)[0])
    dim = int(np.frombuffer(data, dtype="<u4", count=1, offset=offset + 4)[0])
    offset += 8
    if dim == 0:
        raise EmbeddingFormatError(f"{path}: dimension 0")
    ids = []
    for _ in range(count):
        end = data.find(b"\x00", offset)
        if end < 0:
            raise EmbeddingFormatError(f"{path}: truncated id table")
        ids.append(data[offset:end].decode("utf-8"))
        offset = end + 1
    need = count * dim * 4
    if len(data) - offset < need:
        raise EmbeddingFormatError(
            f"{path}: truncated matrix ({len(data) - offset} bytes, need {need})")
    if len(data) - offset > need:
        raise EmbeddingFormatError(f"{path}: {len(data) - offset - need} trailing bytes")
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    rows = rows.reshape(count, dim).copy()
    return EmbeddingMatrix(ids=tuple(ids), rows=rows)


@dataclass(frozen=True)
class BoundDocs:
    """Documents paired with their embedding rows, index-aligned."""

    docs: tuple[Document, ...]
    features: np.ndarray  # (len(docs), dim)


@dataclass(frozen=True)
class BoundAlignedCorpus:
    """An aligned corpus with one feature matrix per language; row i of
    every matrix belongs to the i-th aligned document."""

    corpus: AlignedCorpus
    features: dict[str, np.ndarray]

    @property
    def pivot(self) -> str:
        return self.corpus.pivot

    @property
    def languages(self) -> tuple[str, ...]:
        return self.corpus.languages

    def __len__(self) -> int:
        return len(self.corpus)


def _rows_for(docs: Sequence[Document], emb: EmbeddingMatrix) -> np.ndarray:
    lookup = {doc_id: i for i, doc_id in enumerate(emb.ids)}
    missing = [d.id for d in docs if d.id not in lookup]
    if missing:
        raise MissingEmbeddingError(missing)
    idx = np.array([lookup[d.id] for d in docs], dtype=np.int64)
    return emb.rows[idx]


def attach(corpus, emb):
    """Bind documents to embedding rows by id (never by file position).

    ``corpus`` is either a sequence of Documents with a single
    :class:`EmbeddingMatrix`, or an :class:`AlignedCorpus` with a mapping
    of language -> EmbeddingMatrix. The embedding ids must be a superset
    of the document ids; unresolved ids raise
    :class:`MissingEmbeddingError` listing all of them.
    """
    if isinstance(corpus, AlignedCorpus):
        if not isinstance(emb, Mapping):
            raise TypeError("an AlignedCorpus needs a {language: EmbeddingMatrix} mapping")
        missing_langs = [l for l in corpus.languages if l not in emb]
        if missing_langs:
            raise MissingEmbeddingError([f"<language {l}>" for l in missing_langs])
        features = {}
        dim = None
        for lang in corpus.languages:
            rows = _rows_for(corpus.docs[lang], emb[lang])
            if dim is None:
                dim = rows.shape[1]
            elif rows.shape[1] != dim:
                raise EmbeddingFormatError(
                    f"dimension mismatch: language {lang!r} has dim {rows.shape[1]}, expected {dim}")
            features[lang] = rows
        return BoundAlignedCorpus(corpus=corpus, features=features)
    docs = tuple(corpus)
    return BoundDocs(docs=docs, features=_rows_for(docs, emb))
