import itertools
import math

import numpy as np
import pytest

from polytopic.corpus import AlignedCorpus, BowVector, Document, Vocab
from polytopic.embedstore import BoundAlignedCorpus
from polytopic.errors import PolytopicError
from polytopic.evaluate import (
    EvalReport,
    build_report,
    confusion_from_theta,
    kl_from_theta,
    kl_metric,
    match_from_theta,
    match_metric,
    npmi_coherence,
    random_baseline,
    random_baseline_from_theta,
    topic_counts,
)
from polytopic.nnkernel import RngStream
from polytopic.ntm import NtmConfig, TrainConfig, TrainingData, train

from conftest import random_bows


def bows_from_token_sets(doc_tokens, vocab):
    out = []
    for tokens in doc_tokens:
        counts = {}
        for t in tokens:
            if t in vocab:
                pos = vocab.position(t)
                counts[pos] = counts.get(pos, 0) + 1
        out.append(BowVector(counts))
    return out


def brute_force_npmi(top_lists, doc_tokens, eps=1e-12):
    """Independent oracle: plain dict/set counting over raw token sets."""
    n = len(doc_tokens)
    doc_sets = [set(toks) for toks in doc_tokens]

    def df(token):
        return sum(1 for s in doc_sets if token in s)

    def joint(a, b):
        return sum(1 for s in doc_sets if a in s and b in s)

    topic_means = []
    for lst in top_lists:
        usable = [t for t in lst if df(t) > 0]
        vals = []
        for a, b in itertools.combinations(usable, 2):
            p_ij = joint(a, b) / n
            den = -math.log(p_ij + eps)
            if den <= 0:
                vals.append(0.0)
                continue
            v = math.log((p_ij + eps) / ((df(a) / n) * (df(b) / n))) / den
            vals.append(min(1.0, max(-1.0, v)))
        if vals:
            topic_means.append(sum(vals) / len(vals))
    return sum(topic_means) / len(topic_means)


class TestNpmi:
    def test_perfect_association_approaches_one(self):
        # both tokens in exactly the same half of the docs
        vocab = Vocab(entries=(("a", 0), ("b", 0), ("c", 0)))
        doc_tokens = [["a", "b"]] * 10 + [["c"]] * 10
        bows = bows_from_token_sets(doc_tokens, vocab)
        score = npmi_coherence([["a", "b"]], bows, vocab, eps=1e-12)
        assert abs(score - 1.0) < 1e-6

    def test_independent_tokens_near_zero(self):
        rng = np.random.default_rng(0)
        vocab = Vocab(entries=(("a", 0), ("b", 0)))
        doc_tokens = []
        for _ in range(10_000):
            toks = []
            if rng.random() < 0.5:
                toks.append("a")
            if rng.random() < 0.5:
                toks.append("b")
            toks.append("filler")  # keep docs non-empty
            doc_tokens.append(toks)
        bows = bows_from_token_sets(doc_tokens, vocab)
        score = npmi_coherence([["a", "b"]], bows, vocab)
        assert abs(score) < 0.05

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        types = [f"w{i:02d}" for i in range(20)]
        vocab = Vocab(entries=tuple((t, 0) for t in types))
        doc_tokens = [[types[j] for j in rng.integers(0, 20, size=9)] for _ in range(30)]
        bows = bows_from_token_sets(doc_tokens, vocab)
        lists = [[types[j] for j in rng.choice(20, size=5, replace=False)]
                 for _ in range(4)]
        got = npmi_coherence(lists, bows, vocab, eps=1e-12)
        want = brute_force_npmi(lists, doc_tokens, eps=1e-12)
        assert got == pytest.approx(want, abs=1e-10)

    def test_pairs_stay_in_unit_interval(self):
        rng = np.random.default_rng(5)
        types = [f"w{i}" for i in range(6)]
        vocab = Vocab(entries=tuple((t, 0) for t in types))
        doc_tokens = [[types[j] for j in rng.integers(0, 6, size=4)] for _ in range(25)]
        bows = bows_from_token_sets(doc_tokens, vocab)
        # single-pair topics expose raw pair values
        for a, b in itertools.combinations(types, 2):
            val = npmi_coherence([[a, b]], bows, vocab)
            assert -1.0 <= val <= 1.0

    def test_all_doc_token_pair_scores_zero(self):
        vocab = Vocab(entries=(("a", 0), ("b", 0)))
        bows = bows_from_token_sets([["a", "b"]] * 8, vocab)
        assert npmi_coherence([["a", "b"]], bows, vocab) == 0.0

    def test_absent_token_pairs_skipped(self, caplog):
        vocab = Vocab(entries=(("a", 0), ("b", 0)))
        doc_tokens = [["a", "b"]] * 6 + [["a"]] * 2
        bows = bows_from_token_sets(doc_tokens, vocab)
        with_ghost = npmi_coherence([["a", "b", "ghost"]], bows, vocab)
        without = npmi_coherence([["a", "b"]], bows, vocab)
        assert with_ghost == without

    def test_empty_reference_rejected(self):
        vocab = Vocab(entries=(("a", 0),))
        with pytest.raises(PolytopicError):
            npmi_coherence([["a", "a"]], [], vocab)


class TestThetaMetrics:
    def test_identical_theta_match_100(self):
        theta = RngStream(1).uniform((50, 4))
        theta /= theta.sum(axis=1, keepdims=True)
        assert match_from_theta(theta, theta) == 100.0

    def test_identical_theta_kl_zero(self):
        theta = RngStream(2).uniform((50, 4))
        theta /= theta.sum(axis=1, keepdims=True)
        assert kl_from_theta(theta, theta) == 0.0

    def test_kl_nonnegative(self):
        rng = RngStream(3)
        for _ in range(25):
            p = rng.uniform((10, 5)) + 1e-3
            q = rng.uniform((10, 5)) + 1e-3
            p /= p.sum(axis=1, keepdims=True)
            q /= q.sum(axis=1, keepdims=True)
            assert kl_from_theta(p, q) >= 0.0

    def test_match_against_hand_count(self):
        p = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
        q = np.array([[0.8, 0.2], [0.9, 0.1], [0.1, 0.9], [0.4, 0.6]])
        # argmax pairs: (0,0) hit, (1,0) miss, (0,1) miss, (1,1) hit
        assert match_from_theta(p, q) == 50.0

    def test_kl_against_hand_formula(self):
        p = np.array([[0.5, 0.5]])
        q = np.array([[0.25, 0.75]])
        expected = 0.5 * (np.log(0.5 / 0.25) + np.log(0.5 / 0.75))
        assert kl_from_theta(p, q) == pytest.approx(expected, abs=1e-12)


class TestRandomBaseline:
    def balanced_theta(self, n, tau, seed):
        z = RngStream(seed).normal((n, tau)) * 0.3
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def test_reproducible(self):
        p = self.balanced_theta(100, 4, 1)
        q = self.balanced_theta(100, 4, 2)
        assert random_baseline_from_theta(p, q, seed=5) == \
               random_baseline_from_theta(p, q, seed=5)

    def test_two_topic_balanced_near_half(self):
        p = self.balanced_theta(4000, 2, 3)
        q = self.balanced_theta(4000, 2, 4)
        match, _ = random_baseline_from_theta(p, q, seed=0)
        # analytic expectation sum_k p_k q_k with near-uniform marginals ~ 50%
        pk = np.bincount(np.argmax(p, axis=1), minlength=2) / 4000
        qk = np.bincount(np.argmax(q, axis=1), minlength=2) / 4000
        expected = 100.0 * float(pk @ qk)
        sigma = 100.0 * math.sqrt(expected / 100 * (1 - expected / 100) / 4000)
        assert abs(match - expected) <= 3 * sigma

    def test_expectation_formula_by_simulation(self):
        p = self.balanced_theta(800, 3, 5)
        q = self.balanced_theta(800, 3, 6)
        pk = np.bincount(np.argmax(p, axis=1), minlength=3) / 800
        qk = np.bincount(np.argmax(q, axis=1), minlength=3) / 800
        expected = 100.0 * float(pk @ qk)
        draws = [random_baseline_from_theta(p, q, seed=s)[0] for s in range(200)]
        assert np.mean(draws) == pytest.approx(expected, abs=0.5)

    def test_needs_two_docs(self):
        theta = np.array([[1.0, 0.0]])
        with pytest.raises(PolytopicError):
            random_baseline_from_theta(theta, theta, seed=0)


class TestConfusion:
    def test_perfect_transfer_identity(self):
        theta = np.eye(4)[np.array([0, 1, 2, 3, 0, 1])] * 0.9 + 0.025
        conf, prec, empty = confusion_from_theta(theta, theta, tau=4)
        assert np.allclose(conf, np.eye(4))
        assert np.allclose(prec, 1.0)
        assert empty == []

    def test_forced_column_striping(self):
        rng = np.random.default_rng(0)
        pivot = rng.dirichlet(np.ones(100), size=200)
        target = np.zeros((200, 100))
        target[:, 81] = 1.0  # every foreign doc lands on topic 81
        conf, prec, _ = confusion_from_theta(pivot, target, tau=100)
        rows_with_docs = np.unique(np.argmax(pivot, axis=1))
        assert np.allclose(conf[rows_with_docs, 81], 1.0)
        assert conf[rows_with_docs].sum() == pytest.approx(len(rows_with_docs))

    def test_matches_brute_force_tally(self):
        rng = np.random.default_rng(1)
        pivot = rng.dirichlet(np.ones(5), size=100)
        target = rng.dirichlet(np.ones(5), size=100)
        conf, prec, empty = confusion_from_theta(pivot, target, tau=5)
        pa, ta = np.argmax(pivot, axis=1), np.argmax(target, axis=1)
        for e in range(5):
            docs_e = np.where(pa == e)[0]
            if len(docs_e) == 0:
                assert e in empty
                assert np.all(conf[e] == 0.0)
                continue
            for t in range(5):
                assert conf[e, t] == pytest.approx(
                    np.mean(ta[docs_e] == t), abs=1e-12)
        for k in range(5):
            denom = np.sum(ta == k)
            want = (np.sum((ta == k) & (pa == k)) / denom) if denom else 0.0
            assert prec[k] == pytest.approx(want, abs=1e-12)

    def test_rows_with_support_sum_to_one(self):
        rng = np.random.default_rng(2)
        pivot = rng.dirichlet(np.ones(6), size=80)
        target = rng.dirichlet(np.ones(6), size=80)
        conf, _, empty = confusion_from_theta(pivot, target, tau=6)
        for e in range(6):
            if e in empty:
                continue
            assert conf[e].sum() == pytest.approx(1.0, abs=1e-6)


def tiny_bound_corpus(model_dim, n=30, langs=("en", "xx"), noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    docs = {lang: [Document(id=f"d{i}", language=lang, tokens=("tok",))
                   for i in range(n)] for lang in langs}
    corpus = AlignedCorpus(languages=tuple(langs), docs=docs, pivot="en")
    pivot = rng.standard_normal((n, model_dim))
    features = {"en": pivot}
    for lang in langs[1:]:
        features[lang] = pivot + noise * rng.standard_normal((n, model_dim))
    return BoundAlignedCorpus(corpus=corpus, features=features)


def tiny_model(dim=5, tau=3, V=8, seed=0):
    rng = np.random.default_rng(seed)
    bows = random_bows(rng, n_docs=40, vocab_size=V)
    emb = rng.standard_normal((40, dim))
    vocab = Vocab(entries=tuple((f"w{i:02d}", 0) for i in range(V)))
    data = TrainingData(bows, vocab, embeddings=emb)
    cfg = NtmConfig(kind="ctm", tau=tau, vocab_size=V, input_dim=dim, hidden=(10, 10))
    return train(data, cfg, TrainConfig(epochs=4, batch_size=16, seed=seed)), bows, vocab


class TestModelLevelMetrics:
    def test_self_aligned_match_and_kl(self):
        model, _, _ = tiny_model()
        bound = tiny_bound_corpus(5, noise=0.0)
        assert match_metric(model, bound) == {"xx": 100.0}
        assert kl_metric(model, bound)["xx"] < 1e-9

    def test_topic_counts_single_doc(self):
        model, _, _ = tiny_model()
        counts = topic_counts(model, np.zeros((1, 5)))
        assert counts.sum() == 1
        assert np.count_nonzero(counts) == 1

    def test_topic_counts_conservation(self):
        model, _, _ = tiny_model()
        feats = np.random.default_rng(1).standard_normal((57, 5))
        assert topic_counts(model, feats).sum() == 57

    def test_build_report_shapes(self):
        model, bows, vocab = tiny_model()
        bound = tiny_bound_corpus(5, noise=0.3)
        report = build_report(model, bound, bows[:30], vocab)
        assert set(report.match_pct) == {"xx"}
        assert report.confusion["xx"].shape == (3, 3)
        assert report.per_topic_precision["xx"].shape == (3,)
        assert report.topic_counts_pivot.sum() == 30
        payload = report.to_dict()
        assert payload["npmi"] == report.npmi
        assert isinstance(payload["confusion"]["xx"], list)

    def test_random_baseline_per_language(self):
        model, _, _ = tiny_model()
        bound = tiny_bound_corpus(5, noise=0.5)
        m1, k1 = random_baseline(model, bound, seed=4)
        m2, k2 = random_baseline(model, bound, seed=4)
        assert m1 == m2 and k1 == k2
        assert set(m1) == {"xx"}
        assert k1["xx"] >= 0.0
