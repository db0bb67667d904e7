"""Seed-driven ground-truth generators: random distributions, nested
mixtures with known coefficients, and synthetic corpora with known
relevance for tests and desk-scale experiments.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .dist_core import TermDistribution, Vocabulary, check_same_vocab, linear_combine, normalize
from .errors import InputValidationError, LambdaOutOfRangeError, ZerosTooLargeError

logger = logging.getLogger(__name__)

DEFAULT_VOCAB_SIZE = 500
DEFAULT_DOC_LENGTH = 200
DEFAULT_LAMBDA_GEN = 0.5
QUERY_LAMBDA_RANGE = (0.05, 0.95)


@dataclass(frozen=True)
class SyntheticMixture:
    """M = lambda_outer * l_true + (1 - lambda_outer) * I_seed,
    l_true = lambda_inner * R_true + (1 - lambda_inner) * I_unknown."""

    R_true: TermDistribution
    I_unknown: TermDistribution
    I_seed: TermDistribution
    lambda_inner: float
    lambda_outer: float
    l_true: TermDistribution
    M: TermDistribution


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    vocab: Vocabulary
    doc_ids: Tuple[str, ...]
    counts: np.ndarray
    queries: Tuple[Tuple[str, Tuple[str, ...]], ...]
    qrels: Dict[str, Dict[str, int]]
    topic_models: Dict[str, TermDistribution]
    background: TermDistribution
    query_lambdas: Dict[str, float]

    @property
    def docs(self):
        return list(zip(self.doc_ids, self.counts))

    def to_corpus(self):
        from .harness import Corpus

        return Corpus.from_counts(self.vocab.terms, self.doc_ids, self.counts)


def random_distribution(m: int, zeros: int, seed: int, vocab: Optional[Vocabulary] = None) -> TermDistribution:
    """Dirichlet(1) mass on m - zeros uniformly chosen entries, exactly `zeros` zeros."""
    if not 0 <= zeros < m:
        raise ZerosTooLargeError(f"zeros must be in [0, {m}), got {zeros}")
    vocab = vocab or Vocabulary.synthetic(m)
    if vocab.size != m:
        raise InputValidationError(f"vocabulary has {vocab.size} terms, expected {m}")
    rng = np.random.default_rng(seed)
    probs = np.zeros(m)
    support = rng.choice(m, size=m - zeros, replace=False)
    probs[support] = rng.dirichlet(np.ones(m - zeros))
    return normalize(probs, vocab)


def with_small_entry(dist: TermDistribution, delta: float, index: int) -> TermDistribution:
    """Set entry `index` to delta and rescale the rest to keep unit mass."""
    if not 0.0 < delta < 1.0:
        raise InputValidationError(f"delta must be in (0, 1), got {delta}")
    rest = 1.0 - dist.probs[index]
    if rest <= 0:
        raise InputValidationError("cannot rescale: all mass sits on the replaced entry")
    probs = dist.probs * ((1.0 - delta) / rest)
    probs[index] = delta
    return normalize(probs, dist.vocab)


def make_mixture(
    R: TermDistribution,
    I_unknown: TermDistribution,
    I_seed: TermDistribution,
    lambda_inner: float,
    lambda_outer: float,
) -> SyntheticMixture:
    check_same_vocab(R, I_unknown)
    check_same_vocab(R, I_seed)
    for name, lam in (("lambda_inner", lambda_inner), ("lambda_outer", lambda_outer)):
        if not 0.0 < lam <= 1.0:
            raise LambdaOutOfRangeError(f"{name} must be in (0, 1], got {lam}")
    l_true = linear_combine(R, I_unknown, lambda_inner)
    M = linear_combine(l_true, I_seed, lambda_outer)
    return SyntheticMixture(R, I_unknown, I_seed, lambda_inner, lambda_outer, l_true, M)


def _zipf_background(rng: np.random.Generator, vocab: Vocabulary) -> TermDistribution:
    ranks = rng.permutation(vocab.size) + 1
    return normalize(1.0 / ranks, vocab)


def _sharp_topic(rng: np.random.Generator, vocab: Vocabulary, sharpness: float) -> TermDistribution:
    weights = rng.dirichlet(np.ones(vocab.size)) ** sharpness
    return normalize(weights, vocab)


def generate_corpus(
    num_docs: int,
    doc_length: int,
    num_queries: int,
    relevant_fraction: float,
    topic_sharpness: float,
    seed: int,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    lambda_gen: float = DEFAULT_LAMBDA_GEN,
    noise_spread: float = 0.0,
    query_length: int = 3,
) -> SyntheticCorpus:
    """Corpus where each query's relevant documents sample from
    lambda_q * topic_q + (1 - lambda_q) * background and all other documents
    from the background alone.

    relevant_fraction is the share of the collection relevant to each query;
    the relevant sets of different queries do not overlap.

    lambda_q is lambda_gen, or with noise_spread > 0 a per-query draw from
    [lambda_gen - spread, lambda_gen + spread] clipped to [0.05, 0.95].
    """
    for name, value in (("num_docs", num_docs), ("doc_length", doc_length),
                        ("num_queries", num_queries), ("query_length", query_length)):
        if value < 1:
            raise InputValidationError(f"{name} must be positive, got {value}")
    if not 0.0 < relevant_fraction < 1.0:
        raise InputValidationError(f"relevant_fraction must be in (0, 1), got {relevant_fraction}")
    if topic_sharpness <= 0:
        raise InputValidationError(f"topic_sharpness must be positive, got {topic_sharpness}")
    if not 0.0 < lambda_gen <= 1.0:
        raise LambdaOutOfRangeError(f"lambda_gen must be in (0, 1], got {lambda_gen}")
    if noise_spread < 0:
        raise InputValidationError(f"noise_spread must be >= 0, got {noise_spread}")
    if query_length >= vocab_size:
        raise InputValidationError("query_length must be smaller than the vocabulary")
    per_query = max(1, int(round(relevant_fraction * num_docs)))
    if per_query * num_queries > num_docs:
        raise InputValidationError(
            f"{num_queries} queries x {per_query} relevant docs exceed {num_docs} documents"
        )

    rng = np.random.default_rng(seed)
    vocab = Vocabulary.synthetic(vocab_size)
    background = _zipf_background(rng, vocab)

    queries, topics, lambdas, sources = [], {}, {}, []
    width = len(str(num_queries))
    for j in range(num_queries):
        qid = f"q{j + 1:0{width}d}"
        topic = _sharp_topic(rng, vocab, topic_sharpness)
        jitter = rng.uniform(-1.0, 1.0) * noise_spread
        lam = float(np.clip(lambda_gen + jitter, *QUERY_LAMBDA_RANGE)) if noise_spread > 0 else lambda_gen
        picked = rng.choice(vocab.size, size=query_length, replace=False, p=topic.probs)
        queries.append((qid, tuple(vocab.terms[i] for i in picked)))
        topics[qid] = topic
        lambdas[qid] = lam
        mixture = linear_combine(topic, background, lam).probs
        sources.extend((qid, mixture) for _ in range(per_query))
    sources.extend((None, background.probs) for _ in range(num_docs - len(sources)))

    order = rng.permutation(num_docs)
    width = len(str(num_docs))
    doc_ids = tuple(f"d{i + 1:0{width}d}" for i in range(num_docs))
    counts = np.zeros((num_docs, vocab.size), dtype=np.int64)
    relevant: Dict[str, list] = {qid: [] for qid, _ in queries}
    for slot, source_index in enumerate(order):
        qid, probs = sources[source_index]
        counts[slot] = rng.multinomial(doc_length, probs)
        if qid is not None:
            relevant[qid].append(doc_ids[slot])

    judged = sorted(d for docs in relevant.values() for d in docs)
    relevant_sets = {qid: set(docs) for qid, docs in relevant.items()}
    qrels = {
        qid: {doc_id: int(doc_id in relevant_sets[qid]) for doc_id in judged}
        for qid, _ in queries
    }
    logger.info(
        "generated %d docs, %d queries (%d relevant docs each), vocabulary %d",
        num_docs, num_queries, per_query, vocab.size,
    )
    return SyntheticCorpus(
        vocab=vocab,
        doc_ids=doc_ids,
        counts=counts,
        queries=tuple(queries),
        qrels=qrels,
        topic_models=topics,
        background=background,
        query_lambdas=lambdas,
    )


def export_corpus(corpus: SyntheticCorpus, out_dir) -> Dict[str, Path]:
    """Write corpus.jsonl, queries.tsv and qrels.txt into out_dir."""
    from .harness import write_corpus_jsonl, write_qrels, write_queries

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = (
        (doc_id, [term for term, c in zip(corpus.vocab.terms, row) for _ in range(int(c))])
        for doc_id, row in corpus.docs
    )
    paths = {
        "corpus": out / "corpus.jsonl",
        "queries": out / "queries.tsv",
        "qrels": out / "qrels.txt",
    }
    write_corpus_jsonl(records, paths["corpus"])
    write_queries(corpus.queries, paths["queries"])
    write_qrels(corpus.qrels, paths["qrels"])
    return paths
