"""Export document embeddings to the PTEB1 binary format.

Input is the corpus JSONL convention (one ``{"id", "lang", "text"}``
object per line). Each document is split into sentences on terminal
punctuation, every sentence is encoded, and the document vector is the
mean of its sentence vectors. Output is PTEB1:

* magic bytes ``PTEB1``
* u32 little-endian row count, u32 little-endian dimension
* ``count`` null-terminated UTF-8 ids
* ``count * dim`` little-endian float32 values, row-major

Encoders are named by a string identifier:

* ``hash:<dim>`` - a built-in deterministic feature-hashing encoder
  (signed token buckets, mean-pooled). Needs no model download and
  produces byte-identical output on every run; intended for pipeline
  tests and offline use.
* anything else is treated as a sentence-transformers model name and
  loaded lazily (requires the ``st`` extra). The identifier is passed
  through untouched: whether or how the model was fine-tuned is outside
  this tool's scope.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

MAGIC = b"PTEB1"

log = logging.getLogger(__name__)

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    """Simple terminal-punctuation sentence splitter."""
    parts = [p.strip() for p in _SENTENCE_SPLIT.split(text)]
    return [p for p in parts if p]


def _tokens(sentence: str) -> list[str]:
    out = []
    for piece in sentence.split():
        start, end = 0, len(piece)
        while start < end and not piece[start].isalnum():
            start += 1
        while end > start and not piece[end - 1].isalnum():
            end -= 1
        if end > start:
            out.append(piece[start:end].lower())
    return out


class SentenceEncoder(Protocol):
    dim: int

    def encode(self, sentences: Sequence[str]) -> np.ndarray: ...


class HashingEncoder:
    """Deterministic feature-hashing sentence encoder.

    Each token maps to a signed bucket via sha256; a sentence vector is
    the mean of its token vectors. No floats depend on platform or
    library versions, so exports are byte-identical everywhere.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"hash encoder dimension must be >= 1, got {dim}")
        self.dim = dim

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "little") % self.dim
        sign = 1.0 if digest[8] & 1 else -1.0
        vec = np.zeros(self.dim, dtype=np.float32)
        vec[bucket] = sign
        return vec

    def encode(self, sentences: Sequence[str]) -> np.ndarray:
        rows = np.zeros((len(sentences), self.dim), dtype=np.float32)
        for i, sentence in enumerate(sentences):
            toks = _tokens(sentence)
            if not toks:
                continue
            acc = np.zeros(self.dim, dtype=np.float32)
            for tok in toks:
                acc += self._token_vector(tok)
            rows[i] = acc / np.float32(len(toks))
        return rows


class TransformerEncoder:
    """sentence-transformers backend, loaded lazily."""

    def __init__(self, model_name: str, batch_size: int = 32):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise RuntimeError(
                f"encoder {model_name!r} needs sentence-transformers "
                f"(pip install embed-export[st])") from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise RuntimeError(f"failed to load encoder {model_name!r}: {exc}") from exc
        self._batch_size = batch_size
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, sentences: Sequence[str]) -> np.ndarray:
        out = self._model.encode(list(sentences), batch_size=self._batch_size,
                                 convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(out, dtype=np.float32)


def make_encoder(identifier: str, batch_size: int = 32) -> SentenceEncoder:
    if identifier.startswith("hash:"):
        return HashingEncoder(int(identifier.split(":", 1)[1]))
    return TransformerEncoder(identifier, batch_size=batch_size)


@dataclass(frozen=True)
class ExportJob:
    input_path: Path
    encoder: str
    output_path: Path
    pooling: str = "mean-over-sentences"
    batch_size: int = 32

    def __post_init__(self):
        if self.pooling != "mean-over-sentences":
            raise ValueError(f"unsupported pooling {self.pooling!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def read_corpus_jsonl(path: Path) -> list[tuple[str, str]]:
    """(id, text) pairs in file order."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "id" not in record or "text" not in record:
                raise ValueError(f"{path}:{lineno}: record needs 'id' and 'text'")
            out.append((str(record["id"]), str(record["text"])))
    return out


def write_pteb1(path: Path, ids: Sequence[str], rows: np.ndarray) -> None:
    """Atomic PTEB1 write (temp file + rename)."""
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(ids)).tobytes())
        fh.write(np.uint32(rows.shape[1]).tobytes())
        for doc_id in ids:
            raw = doc_id.encode("utf-8")
            if b"\x00" in raw:
                raise ValueError(f"id {doc_id!r} contains NUL")
            fh.write(raw + b"\x00")
        fh.write(rows.astype("<f4", copy=False).tobytes())
    tmp.replace(path)


def export(job: ExportJob) -> Path:
    """Encode every document and write the PTEB1 file.

    Documents are processed in input order and ids preserved. A document
    with no sentences gets a zero vector and a warning. Encoding is
    batched across documents; pooling is the mean over sentence vectors.
    """
    encoder = make_encoder(job.encoder, batch_size=job.batch_size)
    records = read_corpus_jsonl(Path(job.input_path))
    ids = [doc_id for doc_id, _ in records]
    vectors = np.zeros((len(records), encoder.dim), dtype=np.float32)

    batch_sentences: list[str] = []
    batch_slices: list[tuple[int, int, int]] = []  # (row, start, stop)

    def flush():
        if not batch_sentences:
            return
        encoded = encoder.encode(batch_sentences)
        for row, start, stop in batch_slices:
            vectors[row] = encoded[start:stop].mean(axis=0)
        batch_sentences.clear()
        batch_slices.clear()

    for row, (doc_id, text) in enumerate(records):
        sentences = split_sentences(text)
        if not sentences:
            log.warning("document %r has no sentences; exporting a zero vector", doc_id)
            continue
        batch_slices.append((row, len(batch_sentences), len(batch_sentences) + len(sentences)))
        batch_sentences.extend(sentences)
        if len(batch_sentences) >= job.batch_size:
            flush()
    flush()

    write_pteb1(Path(job.output_path), ids, vectors)
    return Path(job.output_path)
