import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytopic.corpus import (
    AlignedCorpus,
    BowVector,
    Document,
    Vocab,
    build_vocab,
    load_aligned_corpus,
    load_stopwords,
    read_documents,
    tokenize,
    vectorize,
    vectorize_all,
)
from polytopic.errors import (
    AlignmentMismatchError,
    CorpusError,
    EmptyVocabularyError,
    LengthMismatchError,
)


def make_docs(*token_lists):
    return [Document(id=f"d{i}", language="en", tokens=tuple(toks))
            for i, toks in enumerate(token_lists)]


class TestTokenize:
    def test_strips_affix_punctuation_and_lowercases(self):
        assert tokenize('Hello, "World"! (42)') == ["hello", "world", "42"]

    def test_drops_pure_punctuation(self):
        assert tokenize("--- ... a-b") == ["a-b"]

    def test_keeps_inner_punctuation(self):
        assert tokenize("it's rock'n'roll") == ["it's", "rock'n'roll"]

    def test_unicode_letters_survive(self):
        assert tokenize("Während «été»") == ["während", "été"]


class TestDocument:
    def test_tokens_lowercased(self):
        doc = Document(id="x", language="en", tokens=("Apple", "B"))
        assert doc.tokens == ("apple", "b")

    def test_empty_id_rejected(self):
        with pytest.raises(CorpusError):
            Document(id="", language="en", tokens=())


class TestBuildVocab:
    def test_frequency_order_after_stopword_removal(self):
        # types {a:5, the:9, b:2, c:1}, cap 2, stopwords {the} -> [a, b]
        docs = make_docs(["a"] * 5 + ["the"] * 9, ["b", "b", "c"])
        vocab = build_vocab(docs, cap=2, stopwords={"the"})
        assert vocab.tokens == ["a", "b"]

    def test_lexicographic_tie_break(self):
        docs = make_docs(["x", "y"] * 3)
        vocab = build_vocab(docs, cap=1)
        assert vocab.tokens == ["x"]

    def test_cap_respected_exactly(self):
        docs = make_docs([f"w{i}" for i in range(50)])
        assert len(build_vocab(docs, cap=20)) == 20

    def test_empty_vocab_error(self):
        docs = make_docs(["the", "a"])
        with pytest.raises(EmptyVocabularyError):
            build_vocab(docs, cap=5, stopwords={"the", "a"})

    def test_permutation_invariant(self):
        docs = make_docs(["a", "b", "b"], ["c"], ["a", "c", "c", "c"])
        front = build_vocab(docs, cap=3)
        back = build_vocab(list(reversed(docs)), cap=3)
        assert front.entries == back.entries

    def test_index_is_bijection(self):
        docs = make_docs(["a", "b", "c", "b"])
        vocab = build_vocab(docs, cap=3)
        assert sorted(vocab.index.values()) == [0, 1, 2]
        for token, pos in vocab.index.items():
            assert vocab.entries[pos][0] == token

    def test_save_load_roundtrip(self, tmp_path):
        docs = make_docs(["a", "b", "b", "c"])
        vocab = build_vocab(docs, cap=3)
        vocab.save(tmp_path / "vocab.txt")
        again = Vocab.load(tmp_path / "vocab.txt")
        assert again.tokens == vocab.tokens
        assert again.index == vocab.index


class TestVectorize:
    def test_counts(self, ):
        vocab = Vocab(entries=(("a", 2), ("b", 1)))
        doc = Document(id="d", language="en", tokens=("a", "b", "a"))
        assert vectorize(doc, vocab).counts == {0: 2, 1: 1}

    def test_full_oov_gives_empty(self):
        vocab = Vocab(entries=(("a", 1), ("b", 1)))
        doc = Document(id="d", language="en", tokens=("z",))
        assert vectorize(doc, vocab).counts == {}

    def test_matches_token_counting_oracle(self):
        # brute-force recount over a 20-doc toy corpus
        rng = np.random.default_rng(0)
        types = [f"w{i}" for i in range(8)]
        docs = make_docs(*[[types[t] for t in rng.integers(0, 8, size=12)]
                           for _ in range(20)])
        vocab = build_vocab(docs, cap=6)
        for doc in docs:
            bow = vectorize(doc, vocab)
            for token in set(doc.tokens):
                expected = sum(1 for t in doc.tokens if t == token)
                if token in vocab:
                    assert bow.counts[vocab.position(token)] == expected
                else:
                    assert vocab.index.get(token) is None

    @given(st.lists(st.sampled_from("abcdefz"), max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_count_conservation(self, letters):
        # sum of in-vocab counts + OOV tokens = document length
        vocab = Vocab(entries=(("a", 1), ("b", 1), ("c", 1)))
        doc = Document(id="d", language="en", tokens=tuple(letters))
        bow = vectorize(doc, vocab)
        oov = sum(1 for t in letters if t not in vocab)
        assert bow.total() + oov == len(letters)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def write_manifest(tmp_path, files, pivot="en", stopwords=None):
    payload = {"pivot": pivot, "files": files, "stopwords": stopwords or {}}
    path = tmp_path / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return path


class TestAlignedCorpus:
    def test_two_languages_three_ids(self, tmp_path):
        write_jsonl(tmp_path / "en.jsonl",
                    [{"id": f"d{i}", "lang": "en", "text": f"hello {i}"} for i in range(3)])
        write_jsonl(tmp_path / "fr.jsonl",
                    [{"id": f"d{i}", "lang": "fr", "text": f"bonjour {i}"} for i in range(3)])
        man = write_manifest(tmp_path, {"en": "en.jsonl", "fr": "fr.jsonl"})
        corpus = load_aligned_corpus(man)
        assert len(corpus) == 3
        assert corpus.pivot == "en"

    def test_alignment_mismatch_names_first_offender(self, tmp_path):
        write_jsonl(tmp_path / "en.jsonl",
                    [{"id": i, "lang": "en", "text": "x"} for i in ("d1", "d7", "d9")])
        write_jsonl(tmp_path / "fr.jsonl",
                    [{"id": i, "lang": "fr", "text": "y"} for i in ("d1", "d9")])
        man = write_manifest(tmp_path, {"en": "en.jsonl", "fr": "fr.jsonl"})
        with pytest.raises(AlignmentMismatchError) as err:
            load_aligned_corpus(man)
        assert err.value.key == "d7"

    def test_extra_foreign_docs_is_length_mismatch(self, tmp_path):
        write_jsonl(tmp_path / "en.jsonl", [{"id": "d1", "lang": "en", "text": "x"}])
        write_jsonl(tmp_path / "fr.jsonl",
                    [{"id": i, "lang": "fr", "text": "y"} for i in ("d1", "d2")])
        man = write_manifest(tmp_path, {"en": "en.jsonl", "fr": "fr.jsonl"})
        with pytest.raises(LengthMismatchError):
            load_aligned_corpus(man)

    def test_five_language_layout(self, tmp_path):
        langs = ["en", "fr", "de", "pt", "nl"]
        files = {}
        for lang in langs:
            write_jsonl(tmp_path / f"{lang}.jsonl",
                        [{"id": f"d{i}", "lang": lang, "text": f"{lang} text {i}"}
                         for i in range(4)])
            files[lang] = f"{lang}.jsonl"
        corpus = load_aligned_corpus(write_manifest(tmp_path, files))
        assert set(corpus.languages) == set(langs)
        assert all(len(corpus.docs[lang]) == 4 for lang in langs)

    def test_alignment_by_id_not_file_order(self, tmp_path):
        write_jsonl(tmp_path / "en.jsonl",
                    [{"id": i, "lang": "en", "text": i} for i in ("a", "b", "c")])
        write_jsonl(tmp_path / "fr.jsonl",
                    [{"id": i, "lang": "fr", "text": i} for i in ("c", "a", "b")])
        man = write_manifest(tmp_path, {"en": "en.jsonl", "fr": "fr.jsonl"})
        corpus = load_aligned_corpus(man)
        assert [d.id for d in corpus.docs["fr"]] == ["a", "b", "c"]

    def test_ingestion_is_reproducible(self, tmp_path):
        records = [{"id": f"d{i}", "lang": "en", "text": f"Word{i} and word{i % 3}"}
                   for i in range(10)]
        write_jsonl(tmp_path / "en.jsonl", records)
        docs_a = read_documents(tmp_path / "en.jsonl")
        docs_b = read_documents(tmp_path / "en.jsonl")
        assert docs_a == docs_b
        va = build_vocab(docs_a, cap=10)
        vb = build_vocab(docs_b, cap=10)
        assert va.entries == vb.entries
        assert [b.counts for b in vectorize_all(docs_a, va)] == \
               [b.counts for b in vectorize_all(docs_b, vb)]

    def test_stopword_file_loading(self, tmp_path):
        (tmp_path / "stop.txt").write_text("The\nand\n\n of\n", encoding="utf-8")
        assert load_stopwords(tmp_path / "stop.txt") == {"the", "and", "of"}
