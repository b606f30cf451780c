import numpy as np
import pytest

from polytopic.corpus import Document


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[ACCEPTANCE {status}] {name}", flush=True)


@pytest.fixture
def toy_docs():
    """Six tiny documents over a handful of types."""
    texts = [
        ("d1", "apple banana apple"),
        ("d2", "banana cherry"),
        ("d3", "apple cherry cherry date"),
        ("d4", "date banana apple"),
        ("d5", "cherry cherry"),
        ("d6", "apple date"),
    ]
    return [Document(id=i, language="en", tokens=tuple(t.split())) for i, t in texts]


@pytest.fixture
def toy_vocab(toy_docs):
    from polytopic.corpus import build_vocab

    return build_vocab(toy_docs, cap=10)


def random_bows(rng: np.ndarray, n_docs: int, vocab_size: int, max_count: int = 4):
    """Random non-empty sparse bows (helper, not a fixture)."""
    from polytopic.corpus import BowVector

    out = []
    for _ in range(n_docs):
        row = rng.integers(0, max_count, size=vocab_size)
        if row.sum() == 0:
            row[int(rng.integers(0, vocab_size))] = 1
        out.append(BowVector({int(i): int(c) for i, c in enumerate(row) if c > 0}))
    return out
