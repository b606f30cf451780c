"""Synthetic bilingual corpus with planted topics.

Documents draw most tokens from their planted topic's exclusive pool,
with controlled cross-topic leakage and a handful of common and stopword
types; this makes the bag of words a noisier view of the topic than the
embeddings are. Embeddings place each document near its topic centroid;
the second "language" gets the pivot embedding plus Gaussian noise whose
scale is the knob for cross-lingual difficulty (the per-document noise
direction is fixed, so different scales are directly comparable).

The generator writes everything the CLI pipeline consumes: JSONL document
files, stopword lists, a manifest, PTEB1 embedding files, and a ready run
config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document
from .embedstore import write_embeddings
from .nnkernel import mix_seed

# 12 exclusive types per planted topic: enough to fill a clean top-10 at
# the true topic count, but a finer split has to pad its lists with
# cross-topic or common tokens, which carry negative / zero NPMI. The
# leak probability keeps the bag of words a much noisier view of the
# planted topic than the embeddings are.
TYPES_PER_TOPIC = 12
COMMON_TYPES = 8
TOPIC_DRAWS = 12
COMMON_DRAWS = 3
STOPWORD_DRAWS = 2
LEAK_PROB = 0.35
SEPARATION = 2.5
JITTER = 0.25


@dataclass
class Fixture:
    outdir: Path
    manifest_path: Path
    config_path: Path
    docs: dict[str, list[Document]]
    topics: np.ndarray  # planted topic per document
    pivot_emb: np.ndarray  # (n, dim) float32
    noise_unit: np.ndarray  # (n, dim) float32, the foreign-side noise direction
    emb_paths: dict[str, Path]
    sigma: float
    pivot: str = "en"
    foreign: str = "xx"


def _token_pools(n_topics: int) -> tuple[list[list[str]], list[str], list[str]]:
    topic_pools = [[f"t{t}w{j:02d}" for j in range(TYPES_PER_TOPIC)] for t in range(n_topics)]
    common = [f"common{j}" for j in range(COMMON_TYPES)]
    stop = ["the", "of", "and"]
    return topic_pools, common, stop


def make_fixture(outdir: str | Path, n_docs: int = 1000, n_topics: int = 4,
                 dim: int = 16, sigma: float = 0.1, seed: int = 0) -> Fixture:
    """Generate and write the full fixture; returns in-memory arrays too."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    topic_pools, common, stop = _token_pools(n_topics)
    gen = np.random.default_rng(mix_seed(seed, 0x51))

    topics = gen.integers(0, n_topics, size=n_docs)
    docs_en, docs_xx = [], []
    for i in range(n_docs):
        t = int(topics[i])
        tokens = []
        for _ in range(TOPIC_DRAWS):
            pool_topic = t
            if gen.random() < LEAK_PROB and n_topics > 1:
                pool_topic = int((t + 1 + gen.integers(0, n_topics - 1)) % n_topics)
            tokens.append(topic_pools[pool_topic][int(gen.integers(0, TYPES_PER_TOPIC))])
        for _ in range(COMMON_DRAWS):
            tokens.append(common[int(gen.integers(0, COMMON_TYPES))])
        for _ in range(STOPWORD_DRAWS):
            tokens.append(stop[int(gen.integers(0, len(stop)))])
        order = gen.permutation(len(tokens))
        tokens = [tokens[j] for j in order]
        doc_id = f"d{i:05d}"
        docs_en.append(Document(id=doc_id, language="en", tokens=tuple(tokens)))
        docs_xx.append(Document(id=doc_id, language="xx",
                                tokens=tuple("x" + tok for tok in tokens)))

    # orthonormal centroid directions (QR of a random matrix), so every
    # topic pair is equally far apart; no pair is privileged for merging
    q, _ = np.linalg.qr(gen.standard_normal((dim, n_topics)))
    centroids = q.T * SEPARATION
    pivot_emb = (centroids[topics] + JITTER * gen.standard_normal((n_docs, dim)))
    pivot_emb = pivot_emb.astype(np.float32)
    noise_unit = gen.standard_normal((n_docs, dim)).astype(np.float32)
    foreign_emb = (pivot_emb + np.float32(sigma) * noise_unit).astype(np.float32)

    ids = [d.id for d in docs_en]
    for lang, docs in (("en", docs_en), ("xx", docs_xx)):
        with open(outdir / f"{lang}.jsonl", "w", encoding="utf-8") as fh:
            for d in docs:
                fh.write(json.dumps({"id": d.id, "lang": lang,
                                     "text": " ".join(d.tokens)}) + "\n")
    with open(outdir / "stopwords_en.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(stop) + "\n")
    with open(outdir / "stopwords_xx.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join("x" + s for s in stop) + "\n")

    manifest_path = outdir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"pivot": "en",
                   "files": {"en": "en.jsonl", "xx": "xx.jsonl"},
                   "stopwords": {"en": "stopwords_en.txt", "xx": "stopwords_xx.txt"}},
                  fh, indent=2)

    emb_paths = {"en": outdir / "emb_en.pteb", "xx": outdir / "emb_xx.pteb"}
    write_embeddings(emb_paths["en"], ids, pivot_emb)
    write_embeddings(emb_paths["xx"], ids, foreign_emb)

    config_path = outdir / "config.json"
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump({
            "manifest": "manifest.json",
            "embeddings": {"en": "emb_en.pteb", "xx": "emb_xx.pteb"},
            "model": "ctm",
            "tau": n_topics,
            "vocab_cap": 500,
            "lda_iterations": 150,
            "epochs": 25,
            "lr": 2e-3,
            "batch_size": 64,
            "dropout": 0.2,
            "hidden": [100, 100],
            "seeds": [0, 1, 2],
            "precision": "f64",
        }, fh, indent=2)

    return Fixture(outdir=outdir, manifest_path=manifest_path, config_path=config_path,
                   docs={"en": docs_en, "xx": docs_xx}, topics=topics,
                   pivot_emb=pivot_emb, noise_unit=noise_unit,
                   emb_paths=emb_paths, sigma=sigma)
