"""Collapsed Gibbs sampling LDA.

Used three ways: as the classic coherence baseline, as the engine behind
the topic-count grid search, and as the bootstrap labeler that turns an
unlabeled corpus into topic-classification supervision (label = argmax
over topics of how many document tokens appear in the topic's top-10
list, counting multiplicity).

The per-token conditional is the standard collapsed form

    p(z = k | rest)  ∝  (n_dk[d,k] + alpha) * (n_kw[k,w] + eta) / (n_k[k] + V * eta)

with all counts excluding the token being resampled. The sweep kernel is
numba-compiled; its random stream is a splitmix64 generator seeded only
by the run seed, so assignments are reproducible across runs and
platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import json

import numpy as np
from numba import njit

from .corpus import BowVector, Document, Vocab
from .errors import EmptyDocumentError, PolytopicError
from .nnkernel import mix_seed

_U_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_U_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_U_MUL2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def _next_uniform(state):
    """splitmix64 step -> uniform in [0, 1). ``state`` is a uint64[1]."""
    state[0] = state[0] + _U_GAMMA
    z = state[0]
    z = (z ^ (z >> _S30)) * _U_MUL1
    z = (z ^ (z >> _S27)) * _U_MUL2
    z = z ^ (z >> _S31)
    return (z >> _S11) * _INV53


@njit(cache=True)
def _init_assignments(token_word, n_topics, n_kw, n_dk, n_k, doc_offsets, state):
    n_docs = doc_offsets.shape[0] - 1
    z = np.empty(token_word.shape[0], dtype=np.int32)
    for d in range(n_docs):
        for i in range(doc_offsets[d], doc_offsets[d + 1]):
            k = int(_next_uniform(state) * n_topics)
            z[i] = k
            n_kw[k, token_word[i]] += 1
            n_dk[d, k] += 1
            n_k[k] += 1
    return z


@njit(nogil=True, cache=True)
def _run_sweeps(token_word, doc_offsets, z, n_kw, n_dk, n_k, alpha, eta, sweeps, state):
    n_docs = doc_offsets.shape[0] - 1
    n_topics = n_kw.shape[0]
    vocab_size = n_kw.shape[1]
    veta = vocab_size * eta
    probs = np.empty(n_topics, dtype=np.float64)
    for _ in range(sweeps):
        for d in range(n_docs):
            for i in range(doc_offsets[d], doc_offsets[d + 1]):
                w = token_word[i]
                k = z[i]
                n_kw[k, w] -= 1
                n_dk[d, k] -= 1
                n_k[k] -= 1
                total = 0.0
                for t in range(n_topics):
                    p = (n_dk[d, t] + alpha) * (n_kw[t, w] + eta) / (n_k[t] + veta)
                    probs[t] = p
                    total += p
                u = _next_uniform(state) * total
                acc = 0.0
                k = n_topics - 1
                for t in range(n_topics):
                    acc += probs[t]
                    if u < acc:
                        k = t
                        break
                z[i] = k
                n_kw[k, w] += 1
                n_dk[d, k] += 1
                n_k[k] += 1


def topic_conditional(n_dk_row: np.ndarray, n_kw_col: np.ndarray, n_k: np.ndarray,
                      alpha: float, eta: float, vocab_size: int) -> np.ndarray:
    """Normalized collapsed conditional p(z = k) for one token.

    All count arguments must already exclude the token being resampled.
    """
    p = (n_dk_row + alpha) * (n_kw_col + eta) / (n_k + vocab_size * eta)
    return p / p.sum()


@dataclass
class LdaModel:
    """State of a collapsed Gibbs chain after training."""

    tau: int
    alpha: float
    eta: float
    n_kw: np.ndarray  # (tau, |V|) topic-word counts
    n_dk: np.ndarray  # (|D|, tau) document-topic counts
    n_k: np.ndarray  # (tau,) per-topic token totals
    assignments: np.ndarray  # per-token topic ids
    vocab: Optional[Vocab]
    seed: int
    iterations: int

    @property
    def vocab_size(self) -> int:
        return self.n_kw.shape[1]


def validate_counts(model: LdaModel, doc_lengths: Optional[Sequence[int]] = None) -> None:
    """Raise if the count tables are inconsistent with each other."""
    if (model.n_kw < 0).any() or (model.n_dk < 0).any() or (model.n_k < 0).any():
        raise PolytopicError("negative count in LDA tables")
    if not np.array_equal(model.n_kw.sum(axis=1), model.n_k):
        raise PolytopicError("topic-word row sums disagree with per-topic totals")
    if int(model.n_k.sum()) != int(model.assignments.shape[0]):
        raise PolytopicError("per-topic totals disagree with corpus token count")
    if doc_lengths is not None:
        if not np.array_equal(model.n_dk.sum(axis=1), np.asarray(doc_lengths)):
            raise PolytopicError("document-topic row sums disagree with document lengths")


def _expand_tokens(bows: Sequence[BowVector]):
    lengths = []
    words = []
    offsets = np.zeros(len(bows) + 1, dtype=np.int64)
    for d, bow in enumerate(bows):
        n = bow.total()
        if n == 0:
            raise EmptyDocumentError(d)
        lengths.append(n)
        for pos in sorted(bow.counts):
            words.extend([pos] * bow.counts[pos])
        offsets[d + 1] = offsets[d] + n
    return np.array(words, dtype=np.int32), offsets, np.array(lengths, dtype=np.int64)


def gibbs_train(bows: Sequence[BowVector], tau: int, iterations: int,
                alpha: Optional[float] = None, eta: float = 0.01, seed: int = 0,
                vocab: Optional[Vocab] = None, vocab_size: Optional[int] = None,
                validate_after: Sequence[int] = ()) -> LdaModel:
    """Run a collapsed Gibbs chain for ``iterations`` full sweeps.

    ``alpha`` defaults to 50/tau and ``eta`` to 0.01 (MALLET-style
    symmetric priors). Counts are read from the final state; there is no
    burn-in or thinning. ``validate_after`` lists sweep numbers (1-based)
    after which the count-table invariants are checked.
    """
    if tau < 2:
        raise PolytopicError(f"need tau >= 2, got {tau}")
    if iterations < 1:
        raise PolytopicError(f"need iterations >= 1, got {iterations}")
    if alpha is None:
        alpha = 50.0 / tau
    if vocab_size is None:
        if vocab is not None:
            vocab_size = len(vocab)
        else:
            vocab_size = 1 + max(max(b.counts) for b in bows if b.counts)
    token_word, offsets, lengths = _expand_tokens(bows)
    if token_word.size and int(token_word.max()) >= vocab_size:
        raise PolytopicError("bow position outside vocabulary")

    n_kw = np.zeros((tau, vocab_size), dtype=np.int32)
    n_dk = np.zeros((len(bows), tau), dtype=np.int32)
    n_k = np.zeros(tau, dtype=np.int64)
    state = np.array([seed], dtype=np.uint64)
    z = _init_assignments(token_word, tau, n_kw, n_dk, n_k, offsets, state)

    model = LdaModel(tau=tau, alpha=float(alpha), eta=float(eta), n_kw=n_kw,
                     n_dk=n_dk, n_k=n_k, assignments=z, vocab=vocab,
                     seed=seed, iterations=iterations)
    checkpoints = sorted(set(s for s in validate_after if 1 <= s <= iterations))
    done = 0
    for stop in checkpoints + [iterations]:
        if stop > done:
            _run_sweeps(token_word, offsets, z, n_kw, n_dk, n_k,
                        float(alpha), float(eta), stop - done, state)
            done = stop
        if stop in checkpoints:
            validate_counts(model, lengths)
    return model


def top_words(model: LdaModel, k: int) -> list[list[str]]:
    """Per topic, the ``k`` tokens with the highest counts (ties
    lexicographic)."""
    if k < 1:
        raise PolytopicError(f"need k >= 1, got {k}")
    if model.vocab is None:
        raise PolytopicError("model has no vocabulary attached")
    tokens = model.vocab.tokens
    out = []
    for t in range(model.tau):
        counts = model.n_kw[t]
        order = sorted(range(len(tokens)), key=lambda w: (-counts[w], tokens[w]))
        out.append([tokens[w] for w in order[:k]])
    return out


def bootstrap_labels(docs: Sequence[Document], top_lists: Sequence[Sequence[str]],
                     model: Optional[LdaModel] = None) -> np.ndarray:
    """Label each document with the topic whose top-token list covers the
    most document tokens (counting multiplicity; ties to the lower topic
    id). Documents matching no list at all fall back to the model's
    document-topic posterior argmax (topic 0 when no model is given).
    """
    if not top_lists:
        raise PolytopicError("need at least one topic top-word list")
    top_sets = [frozenset(lst) for lst in top_lists]
    labels = np.zeros(len(docs), dtype=np.int64)
    for i, doc in enumerate(docs):
        scores = np.array([sum(1 for tok in doc.tokens if tok in s) for s in top_sets])
        if scores.max() > 0:
            labels[i] = int(np.argmax(scores))
        elif model is not None:
            labels[i] = int(np.argmax(model.n_dk[i]))
        else:
            labels[i] = 0
    return labels


def posterior_labels(model: LdaModel) -> np.ndarray:
    """Per-document argmax of the document-topic counts."""
    return np.argmax(model.n_dk, axis=1).astype(np.int64)


def label_disagreement(labels: np.ndarray, posterior: np.ndarray) -> float:
    """Fraction of documents where top-10 counting and the LDA posterior
    argmax pick different topics."""
    return float(np.mean(labels != posterior))


def sweep_topics(bows: Sequence[BowVector], vocab: Vocab, grid: Sequence[int],
                 iterations: int, seed: int, alpha: Optional[float] = None,
                 eta: float = 0.01, top_k: int = 10, eps: float = 1e-12,
                 threads: int = 1):
    """Train one chain per topic count in ``grid`` and score each by NPMI
    coherence of its top-``top_k`` lists against the training corpus.

    Returns ``(best_tau, table)`` where ``table`` maps tau -> NPMI. Ties
    prefer the smaller tau. Each grid point gets an independent seed
    derived from (seed, tau), so results do not depend on grid order.
    """
    from .evaluate import npmi_coherence

    if not grid:
        raise PolytopicError("topic grid must be non-empty")

    def _one(tau: int) -> float:
        model = gibbs_train(bows, tau=tau, iterations=iterations, alpha=alpha,
                            eta=eta, seed=mix_seed(seed, tau), vocab=vocab)
        return npmi_coherence(top_words(model, top_k), bows, vocab, eps=eps)

    taus = list(grid)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(_one, taus))
    else:
        scores = [_one(t) for t in taus]
    table = dict(zip(taus, scores))
    best_tau = min(table, key=lambda t: (-table[t], t))
    return best_tau, table


_CKPT_FORMAT = "polytopic-lda-v1"


def save_lda(model: LdaModel, path: str | Path) -> None:
    vocab_tokens = np.array(model.vocab.tokens if model.vocab else [], dtype=object)
    np.savez(path, format=_CKPT_FORMAT, tau=model.tau, alpha=model.alpha,
             eta=model.eta, seed=model.seed, iterations=model.iterations,
             n_kw=model.n_kw, n_dk=model.n_dk, n_k=model.n_k,
             assignments=model.assignments,
             vocab=vocab_tokens.astype(str) if vocab_tokens.size else np.array([], dtype=str))


def load_lda(path: str | Path) -> LdaModel:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != _CKPT_FORMAT:
            raise PolytopicError(f"{path}: not an LDA checkpoint (format {data['format']})")
        tokens = [str(t) for t in data["vocab"]]
        vocab = Vocab(entries=tuple((t, 0) for t in tokens)) if tokens else None
        return LdaModel(tau=int(data["tau"]), alpha=float(data["alpha"]),
                        eta=float(data["eta"]), n_kw=data["n_kw"], n_dk=data["n_dk"],
                        n_k=data["n_k"], assignments=data["assignments"], vocab=vocab,
                        seed=int(data["seed"]), iterations=int(data["iterations"]))


def write_labels(path: str | Path, ids: Sequence[str], labels: np.ndarray) -> None:
    """JSON lines, one ``{"id": ..., "topic": ...}`` object per document."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, topic in zip(ids, labels):
            fh.write(json.dumps({"id": doc_id, "topic": int(topic)}) + "\n")


def read_labels(path: str | Path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["id"]] = int(rec["topic"])
    return out
