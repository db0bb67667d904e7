import pytest

from dsm.dist_core import TermDistribution, Vocabulary
from dsm.harness import ingest_corpus
from dsm.synth import generate_corpus

AB = Vocabulary(("a", "b"))
ABC = Vocabulary(("a", "b", "c"))


def dist(*probs, vocab=None):
    vocab = vocab or {2: AB, 3: ABC}.get(len(probs)) or Vocabulary.synthetic(len(probs))
    return TermDistribution(vocab, list(probs))


@pytest.fixture
def exact_mixture():
    """M = 0.6 * [0, 0.7, 0.3] + 0.4 * I_S, recoverable exactly."""
    return dist(0.2, 0.54, 0.26), dist(0.5, 0.3, 0.2)


@pytest.fixture
def crossing_pair():
    """Full-support pair with lambda_L = 0.6 used for the monotone profile checks."""
    return dist(0.5, 0.3, 0.2), dist(0.2, 0.3, 0.5)


@pytest.fixture
def hand_corpus():
    lines = [
        '{"doc_id": "d1", "terms": ["apple", "apple", "banana"]}',
        '{"doc_id": "d2", "terms": ["banana", "cherry"]}',
        '{"doc_id": "d3", "terms": ["cherry", "cherry", "cherry", "date"]}',
    ]
    return ingest_corpus(lines, source="hand")


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_corpus(
        num_docs=200,
        doc_length=150,
        num_queries=6,
        relevant_fraction=0.025,
        topic_sharpness=3.0,
        seed=11,
        vocab_size=200,
    )


@pytest.fixture(scope="session")
def experiment_corpus():
    """The default experiment collection: 20 queries, 20 relevant docs each."""
    return generate_corpus(
        num_docs=1000,
        doc_length=1000,
        num_queries=20,
        relevant_fraction=0.02,
        topic_sharpness=3.0,
        seed=7,
    )
