"""Measurement: NPMI topic coherence, cross-lingual Match / KL on aligned
documents, the shuffled random baseline, confusion matrices, per-topic
precision, and pivot-language topic-count histograms.

All functions here are pure over immutable inputs. Inference always goes
through the eval-mode (mean-path) theta, so every number is reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import BowVector, Vocab
from .embedstore import BoundAlignedCorpus
from .errors import PolytopicError
from .nnkernel import RngStream
from .ntm import NtmModel, infer_theta

KL_FLOOR = 1e-12

log = logging.getLogger(__name__)


# ----- NPMI coherence -------------------------------------------------------

def npmi_coherence(top_lists: Sequence[Sequence[str]], reference: Sequence[BowVector],
                   vocab: Vocab, eps: float = 1e-12) -> float:
    """Mean NPMI over topics; per topic, mean over all token pairs.

    Probabilities are document-frequency fractions over ``reference``;
    ``eps`` smooths the joint probability. A pair scores

        log((p_ij + eps) / (p_i p_j)) / -log(p_ij + eps)

    clamped to [-1, 1]. Tokens missing from the vocabulary or from every
    reference document are reported via logging and their pairs skipped;
    if both tokens of a pair appear in every document, PMI is identically
    0 and the pair scores 0.
    """
    if not reference:
        raise PolytopicError("NPMI needs a non-empty reference corpus")
    needed = sorted({t for lst in top_lists for t in lst if t in vocab})
    col = {t: j for j, t in enumerate(needed)}
    n_docs = len(reference)
    present = np.zeros((n_docs, len(needed)), dtype=bool)
    needed_pos = {vocab.position(t): j for t, j in col.items()}
    for i, bow in enumerate(reference):
        for pos in bow.counts:
            j = needed_pos.get(pos)
            if j is not None:
                present[i, j] = True
    df = present.sum(axis=0)

    absent = sorted({t for lst in top_lists for t in lst}
                    - {t for t in needed if df[col[t]] > 0})
    if absent:
        log.warning("NPMI: %d token(s) absent from vocab or reference, pairs skipped: %s",
                    len(absent), ", ".join(absent[:10]))

    topic_scores = []
    for lst in top_lists:
        if len(lst) < 2:
            raise PolytopicError("each top-word list needs at least 2 tokens")
        usable = [t for t in lst if t in col and df[col[t]] > 0]
        if len(usable) < 2:
            continue
        cols = present[:, [col[t] for t in usable]]
        joint = cols.T.astype(np.int64) @ cols.astype(np.int64)
        p = df[[col[t] for t in usable]] / n_docs
        pair_vals = []
        for a in range(len(usable)):
            for b in range(a + 1, len(usable)):
                p_ij = joint[a, b] / n_docs
                den = -np.log(p_ij + eps)
                if den <= 0.0:
                    pair_vals.append(0.0)
                    continue
                val = np.log((p_ij + eps) / (p[a] * p[b])) / den
                pair_vals.append(float(np.clip(val, -1.0, 1.0)))
        topic_scores.append(float(np.mean(pair_vals)))
    if not topic_scores:
        raise PolytopicError("no topic had two scorable tokens")
    return float(np.mean(topic_scores))


# ----- cross-lingual transfer -----------------------------------------------

def _theta_by_language(model: NtmModel, bound: BoundAlignedCorpus) -> dict[str, np.ndarray]:
    thetas = {}
    for lang in bound.languages:
        if lang not in bound.features:
            raise PolytopicError(f"language {lang!r} has no bound embeddings")
        thetas[lang] = infer_theta(model, bound.features[lang])
    return thetas


def match_from_theta(theta_pivot: np.ndarray, theta_target: np.ndarray) -> float:
    """Percentage of rows whose argmax topics agree (argmax ties resolve
    to the lower topic id on both sides)."""
    agree = np.argmax(theta_pivot, axis=1) == np.argmax(theta_target, axis=1)
    return 100.0 * float(np.mean(agree))


def kl_from_theta(theta_pivot: np.ndarray, theta_target: np.ndarray) -> float:
    """Mean over rows of KL(theta_pivot || theta_target), entries floored
    at 1e-12 before the logs."""
    lp = np.log(np.maximum(theta_pivot, KL_FLOOR))
    lq = np.log(np.maximum(theta_target, KL_FLOOR))
    kl = np.sum(theta_pivot * (lp - lq), axis=1)
    return float(np.mean(np.maximum(kl, 0.0)))


def match_metric(model: NtmModel, bound: BoundAlignedCorpus) -> dict[str, float]:
    """Match percentage per non-pivot language."""
    thetas = _theta_by_language(model, bound)
    pivot = thetas[bound.pivot]
    return {lang: match_from_theta(pivot, thetas[lang])
            for lang in bound.languages if lang != bound.pivot}


def kl_metric(model: NtmModel, bound: BoundAlignedCorpus) -> dict[str, float]:
    """Mean KL divergence per non-pivot language."""
    thetas = _theta_by_language(model, bound)
    pivot = thetas[bound.pivot]
    return {lang: kl_from_theta(pivot, thetas[lang])
            for lang in bound.languages if lang != bound.pivot}


def random_baseline_from_theta(theta_pivot: np.ndarray, theta_target: np.ndarray,
                               seed: int) -> tuple[float, float]:
    """Match / KL after a uniform shuffle of the pivot side (fixed points
    allowed), breaking the alignment."""
    n = theta_pivot.shape[0]
    if n < 2:
        raise PolytopicError("random baseline needs at least 2 aligned documents")
    perm = RngStream(seed).permutation(n)
    shuffled = theta_pivot[perm]
    return match_from_theta(shuffled, theta_target), kl_from_theta(shuffled, theta_target)


def random_baseline(model: NtmModel, bound: BoundAlignedCorpus,
                    seed: int) -> tuple[dict[str, float], dict[str, float]]:
    """Per-language (match_pct, mean_kl) with the pivot side shuffled.

    Each language gets its own derived seed, so adding languages does not
    change the others' numbers.
    """
    thetas = _theta_by_language(model, bound)
    pivot = thetas[bound.pivot]
    match, kl = {}, {}
    for i, lang in enumerate(l for l in bound.languages if l != bound.pivot):
        m, k = random_baseline_from_theta(pivot, thetas[lang], seed + i)
        match[lang], kl[lang] = m, k
    return match, kl


def confusion_from_theta(theta_pivot: np.ndarray, theta_target: np.ndarray,
                         tau: int) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Row-normalized confusion and per-topic precision.

    confusion[e, t] = P(target argmax = t | pivot argmax = e); pivot rows
    with no documents stay all-zero and are returned in the third element.
    precision[k] = #(both argmax = k) / #(target argmax = k), 0 when the
    denominator is 0.
    """
    pa = np.argmax(theta_pivot, axis=1)
    ta = np.argmax(theta_target, axis=1)
    counts = np.zeros((tau, tau), dtype=np.int64)
    np.add.at(counts, (pa, ta), 1)
    row_sums = counts.sum(axis=1)
    confusion = np.zeros((tau, tau), dtype=np.float64)
    nonzero = row_sums > 0
    confusion[nonzero] = counts[nonzero] / row_sums[nonzero, None]
    empty_rows = [int(i) for i in np.where(~nonzero)[0]]
    target_totals = counts.sum(axis=0)
    both = np.diag(counts)
    precision = np.zeros(tau, dtype=np.float64)
    has_target = target_totals > 0
    precision[has_target] = both[has_target] / target_totals[has_target]
    return confusion, precision, empty_rows


def confusion_and_precision(model: NtmModel, bound: BoundAlignedCorpus):
    """Per non-pivot language: (confusion matrix, precision vector,
    empty pivot rows)."""
    thetas = _theta_by_language(model, bound)
    pivot = thetas[bound.pivot]
    tau = model.config.tau
    return {lang: confusion_from_theta(pivot, thetas[lang], tau)
            for lang in bound.languages if lang != bound.pivot}


def topic_counts(model: NtmModel, features: np.ndarray) -> np.ndarray:
    """Histogram over topics of the argmax theta for each feature row."""
    theta = infer_theta(model, np.atleast_2d(features))
    return np.bincount(np.argmax(theta, axis=1), minlength=model.config.tau)


# ----- report ----------------------------------------------------------------

@dataclass
class EvalReport:
    npmi: float
    match_pct: dict[str, float]
    mean_kl: dict[str, float]
    confusion: dict[str, np.ndarray]
    per_topic_precision: dict[str, np.ndarray]
    topic_counts_pivot: np.ndarray
    confusion_empty_rows: dict[str, list[int]]

    def to_dict(self) -> dict:
        return {
            "npmi": self.npmi,
            "match_pct": dict(sorted(self.match_pct.items())),
            "mean_kl": dict(sorted(self.mean_kl.items())),
            "confusion": {l: m.tolist() for l, m in sorted(self.confusion.items())},
            "per_topic_precision": {l: v.tolist() for l, v
                                    in sorted(self.per_topic_precision.items())},
            "topic_counts_pivot": self.topic_counts_pivot.tolist(),
            "confusion_empty_rows": dict(sorted(self.confusion_empty_rows.items())),
        }


def build_report(model: NtmModel, bound: BoundAlignedCorpus,
                 reference: Sequence[BowVector], vocab: Vocab,
                 top_k: int = 10, eps: float = 1e-12) -> EvalReport:
    """Run the full evaluation battery for one model on one aligned set."""
    from .ntm import ntm_top_words

    npmi = npmi_coherence(ntm_top_words(model, top_k), reference, vocab, eps=eps)
    match = match_metric(model, bound)
    kl = kl_metric(model, bound)
    conf = confusion_and_precision(model, bound)
    counts = topic_counts(model, bound.features[bound.pivot])
    return EvalReport(
        npmi=npmi,
        match_pct=match,
        mean_kl=kl,
        confusion={l: c for l, (c, _, _) in conf.items()},
        per_topic_precision={l: p for l, (_, p, _) in conf.items()},
        topic_counts_pivot=counts,
        confusion_empty_rows={l: e for l, (_, _, e) in conf.items()},
    )
