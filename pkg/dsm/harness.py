"""Desk-scale retrieval pipeline: corpus ingestion, Dirichlet-smoothed query
likelihood, pseudo-relevance feedback through DSM or MMF, KL reranking, and
MAP evaluation with a paired permutation test between feedback methods.

The seed irrelevance distribution for DSM is the collection model, and the
mixture is the term frequency of the top-ranked documents.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np

from .dist_core import TermDistribution, Vocabulary, normalize
from .errors import (
    DuplicateDocIdError,
    EmptyCorpusError,
    InputValidationError,
    MalformedRecordError,
    MissingQrelsError,
)
from .mmf import FeedbackSet, feedback_tf, run_em
from .schemas import ComparisonReport, FeedbackConfig, MethodResult
from .separation import dsm

logger = logging.getLogger(__name__)

DEFAULT_MU = 1000.0
DEFAULT_DEPTH = 1000
DEFAULT_RESAMPLES = 10000
DEGENERATE_LAMBDA = 1e-6
LAMBDA_SWEEP = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

Query = Tuple[str, Tuple[str, ...]]
Qrels = Dict[str, Dict[str, int]]


@dataclass(frozen=True, eq=False)
class Corpus:
    """Document term counts over a vocabulary in which every term occurs."""

    vocab: Vocabulary
    doc_ids: Tuple[str, ...]
    counts: np.ndarray
    collection_model: TermDistribution
    doc_lengths: np.ndarray
    doc_index: Dict[str, int] = field(repr=False)

    @classmethod
    def from_counts(cls, terms: Sequence[str], doc_ids: Sequence[str], counts) -> "Corpus":
        """Build a corpus from a (docs x terms) count matrix, dropping terms that never occur."""
        doc_ids = tuple(doc_ids)
        if not doc_ids:
            raise EmptyCorpusError("corpus has no documents")
        doc_index = {}
        for i, doc_id in enumerate(doc_ids):
            if doc_id in doc_index:
                raise DuplicateDocIdError(doc_id)
            doc_index[doc_id] = i
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (len(doc_ids), len(terms)):
            raise InputValidationError(f"count matrix shape {counts.shape} does not match corpus")
        occurring = counts.sum(axis=0) > 0
        counts = np.ascontiguousarray(counts[:, occurring])
        vocab = Vocabulary(tuple(t for t, keep in zip(terms, occurring) if keep))
        counts.setflags(write=False)
        lengths = counts.sum(axis=1)
        lengths.setflags(write=False)
        return cls(
            vocab=vocab,
            doc_ids=doc_ids,
            counts=counts,
            collection_model=normalize(counts.sum(axis=0).astype(float), vocab),
            doc_lengths=lengths,
            doc_index=doc_index,
        )

    @property
    def docs(self) -> Dict[str, np.ndarray]:
        return {doc_id: self.counts[i] for i, doc_id in enumerate(self.doc_ids)}

    def doc_counts(self, doc_id: str) -> np.ndarray:
        return self.counts[self.doc_index[doc_id]]


@dataclass(frozen=True)
class RunRanking:
    """Ranked (doc_id, score) pairs, score descending, doc_id ascending on ties."""

    query_id: str
    entries: Tuple[Tuple[str, float], ...]

    @property
    def doc_ids(self) -> Tuple[str, ...]:
        return tuple(doc_id for doc_id, _ in self.entries)


@dataclass(frozen=True)
class FeedbackEstimate:
    model: TermDistribution
    method: str
    lambda_used: float
    lambda_lower: Optional[float] = None
    em_iterations: Optional[int] = None


@dataclass(frozen=True)
class MapResult:
    map: float
    per_query: Dict[str, float]


# ---------------------------------------------------------------------------
# Input / output

def ingest_corpus(lines: Iterable[str], source: str = "corpus") -> Corpus:
    """Corpus from JSONL records {"doc_id": str, "terms": [str, ...]}.

    The vocabulary is the lexicographically sorted union of all terms.
    """
    records: List[Tuple[str, Counter]] = []
    seen = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(f"invalid JSON ({exc.msg})", lineno, source) from None
        if not isinstance(record, dict) or "doc_id" not in record or "terms" not in record:
            raise MalformedRecordError("record needs 'doc_id' and 'terms'", lineno, source)
        doc_id, terms = record["doc_id"], record["terms"]
        if not isinstance(doc_id, str) or not doc_id:
            raise MalformedRecordError("doc_id must be a non-empty string", lineno, source)
        if not isinstance(terms, list) or not all(isinstance(t, str) and t for t in terms):
            raise MalformedRecordError("terms must be a list of non-empty strings", lineno, source)
        if doc_id in seen:
            raise DuplicateDocIdError(doc_id)
        seen.add(doc_id)
        records.append((doc_id, Counter(terms)))

    if not records:
        raise EmptyCorpusError(f"{source}: no documents")
    terms = sorted(set().union(*(counter.keys() for _, counter in records)))
    index = {t: i for i, t in enumerate(terms)}
    counts = np.zeros((len(records), len(terms)), dtype=np.int64)
    for row, (_, counter) in enumerate(records):
        for term, c in counter.items():
            counts[row, index[term]] = c
    corpus = Corpus.from_counts(terms, [doc_id for doc_id, _ in records], counts)
    logger.info("ingested %d documents, %d terms from %s", len(corpus.doc_ids), corpus.vocab.size, source)
    return corpus


def load_corpus(path) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise InputValidationError(f"corpus file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return ingest_corpus(f, source=str(path))


def read_queries(path) -> List[Query]:
    """TSV lines: query_id<TAB>term term term"""
    path = Path(path)
    if not path.is_file():
        raise InputValidationError(f"queries file not found: {path}")
    queries, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            qid, tab, text = line.rstrip("\n").partition("\t")
            terms = tuple(text.split())
            if not tab or not qid.strip() or not terms:
                raise MalformedRecordError("expected query_id<TAB>terms", lineno, str(path))
            if qid in seen:
                raise MalformedRecordError(f"duplicate query id {qid!r}", lineno, str(path))
            seen.add(qid)
            queries.append((qid.strip(), terms))
    return queries


def read_qrels(path) -> Qrels:
    """TREC qrels: query_id 0 doc_id relevance"""
    path = Path(path)
    if not path.is_file():
        raise InputValidationError(f"qrels file not found: {path}")
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise MalformedRecordError("expected 'query_id 0 doc_id relevance'", lineno, str(path))
            qid, _, doc_id, rel = parts
            try:
                qrels.setdefault(qid, {})[doc_id] = int(rel)
            except ValueError:
                raise MalformedRecordError(f"relevance must be an integer, got {rel!r}", lineno, str(path)) from None
    return qrels


def write_corpus_jsonl(records: Iterable[Tuple[str, Sequence[str]]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, terms in records:
            f.write(json.dumps({"doc_id": doc_id, "terms": list(terms)}) + "\n")


def write_queries(queries: Iterable[Query], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, terms in queries:
            f.write(f"{qid}\t{' '.join(terms)}\n")


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, judgments in qrels.items():
            for doc_id, rel in judgments.items():
                f.write(f"{qid} 0 {doc_id} {rel}\n")


# ---------------------------------------------------------------------------
# Retrieval

def _rank(query_id: str, doc_ids: Sequence[str], scores: np.ndarray, k: int) -> RunRanking:
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))[:k]
    return RunRanking(query_id, tuple((doc_ids[i], float(scores[i])) for i in order))


def _known_terms(query_terms: Sequence[str], corpus: Corpus) -> List[str]:
    known = [t for t in query_terms if t in corpus.vocab]
    if len(known) < len(query_terms):
        logger.debug("query terms not in corpus: %s", sorted(set(query_terms) - set(known)))
    return known


def _dirichlet_log_probs(corpus: Corpus, term_indices: Sequence[int], mu: float) -> np.ndarray:
    """log p(w | d) for the given terms, (docs x terms)."""
    idx = np.asarray(term_indices, dtype=int)
    numer = corpus.counts[:, idx] + mu * corpus.collection_model.probs[idx]
    return np.log(numer / (corpus.doc_lengths[:, np.newaxis] + mu))


def initial_retrieval(
    query_terms: Sequence[str],
    corpus: Corpus,
    mu: float = DEFAULT_MU,
    k: int = DEFAULT_DEPTH,
    query_id: str = "",
) -> RunRanking:
    """Top-k documents by Dirichlet-smoothed query log-likelihood.

    Terms outside the vocabulary add the same constant to every document and
    are dropped.
    """
    if mu <= 0:
        raise InputValidationError(f"mu must be > 0, got {mu}")
    if k < 1:
        raise InputValidationError(f"k must be >= 1, got {k}")
    known = _known_terms(query_terms, corpus)
    if known:
        scores = _dirichlet_log_probs(corpus, [corpus.vocab.index[t] for t in known], mu).sum(axis=1)
    else:
        scores = np.zeros(len(corpus.doc_ids))
    return _rank(query_id, corpus.doc_ids, scores, k)


def feedback_set(
    corpus: Corpus,
    doc_ids: Sequence[str],
    query_terms: Sequence[str] = (),
    fb_terms: Optional[int] = None,
) -> FeedbackSet:
    """Counts of the feedback documents over the terms they contain plus the query terms.

    With fb_terms only the fb_terms most frequent feedback terms are kept
    (ties go to the earlier vocabulary entry), still plus the query terms.
    """
    if fb_terms is not None and fb_terms < 1:
        raise InputValidationError(f"fb_terms must be >= 1, got {fb_terms}")
    counts = np.stack([corpus.doc_counts(d) for d in doc_ids])
    totals = counts.sum(axis=0)
    keep = totals > 0
    if fb_terms is not None and keep.sum() > fb_terms:
        top = np.argsort(-totals, kind="stable")[:fb_terms]
        keep = np.zeros_like(keep)
        keep[top] = True
    for term in query_terms:
        if term in corpus.vocab:
            keep[corpus.vocab.index[term]] = True
    if keep.sum() < 2:
        keep[:] = True
    vocab = Vocabulary(tuple(t for t, k in zip(corpus.vocab.terms, keep) if k))
    return FeedbackSet(vocab, counts[:, keep], tuple(doc_ids))


def _seed_for(topdocs: FeedbackSet, corpus: Corpus) -> TermDistribution:
    if topdocs.vocab == corpus.vocab:
        return corpus.collection_model
    return corpus.collection_model.restrict(topdocs.vocab)


def estimate_feedback(topdocs: FeedbackSet, corpus: Corpus, config: FeedbackConfig) -> FeedbackEstimate:
    """Feedback model from TF of the top documents and the collection model."""
    background = _seed_for(topdocs, corpus)
    if config.method == "mmf":
        em = run_em(topdocs, background, config.lam, tol=config.em_tol, max_iter=config.em_max_iter)
        return FeedbackEstimate(em.theta, config.label, config.lam, em_iterations=em.iterations)

    result = dsm(feedback_tf(topdocs), background, config.strategy())
    if result.lambda_lower < DEGENERATE_LAMBDA:
        logger.warning(
            "feedback documents look like background (lambda_L=%.3g); the %s model is degenerate",
            result.lambda_lower, config.label,
        )
    return FeedbackEstimate(result.output, config.label, result.lambda_used, lambda_lower=result.lambda_lower)


def feedback_model(topdocs: FeedbackSet, corpus: Corpus, config: FeedbackConfig) -> TermDistribution:
    return estimate_feedback(topdocs, corpus, config).model


def rerank_with_feedback(
    query_terms: Sequence[str],
    corpus: Corpus,
    config: FeedbackConfig,
    query_id: str = "",
    depth: int = DEFAULT_DEPTH,
) -> RunRanking:
    """Rank by -KL(q' || p(. | d)) with q' = alpha * query model + (1 - alpha) * feedback model."""
    known = _known_terms(query_terms, corpus)
    initial = initial_retrieval(known, corpus, config.mu, config.top_k, query_id)
    topdocs = feedback_set(corpus, initial.doc_ids, known, config.fb_terms)
    estimate = estimate_feedback(topdocs, corpus, config)
    logger.debug("query %s: %s feedback with lambda=%.4g", query_id, estimate.method, estimate.lambda_used)

    expanded = (1.0 - config.alpha) * estimate.model.probs
    if known:
        query_model = np.zeros(topdocs.vocab.size)
        for term in known:
            query_model[topdocs.vocab.index[term]] += 1.0
        expanded = expanded + config.alpha * query_model / query_model.sum()
    else:
        expanded = estimate.model.probs
    support = np.flatnonzero(expanded > 0)
    weights = expanded[support] / expanded[support].sum()
    term_indices = [corpus.vocab.index[topdocs.vocab.terms[i]] for i in support]

    log_probs = _dirichlet_log_probs(corpus, term_indices, config.mu)
    scores = log_probs @ weights - float(weights @ np.log(weights))
    return _rank(query_id, corpus.doc_ids, scores, depth)


# ---------------------------------------------------------------------------
# Evaluation

def average_precision(ranking: RunRanking, judgments: Mapping[str, int]) -> float:
    relevant = {doc_id for doc_id, rel in judgments.items() if rel > 0}
    if not relevant:
        return 0.0
    hits, total = 0, 0.0
    for rank, doc_id in enumerate(ranking.doc_ids, 1):
        if doc_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def evaluate_map(runs: Sequence[RunRanking], qrels: Qrels) -> MapResult:
    """Uninterpolated AP per query and their mean; unretrieved relevant docs count 0."""
    if not runs:
        raise InputValidationError("no runs to evaluate")
    per_query = {}
    for run in runs:
        if run.query_id not in qrels:
            raise MissingQrelsError(f"no relevance judgments for query {run.query_id!r}")
        per_query[run.query_id] = average_precision(run, qrels[run.query_id])
    return MapResult(float(np.mean(list(per_query.values()))), per_query)


def paired_permutation_test(deltas: Sequence[float], resamples: int = DEFAULT_RESAMPLES, seed: int = 0) -> float:
    """Two-sided sign-flip permutation p-value for the mean of paired differences."""
    d = np.asarray(deltas, dtype=float)
    if d.size == 0:
        return 1.0
    observed = abs(d.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(resamples, d.size))
    flipped = np.abs((signs * d).mean(axis=1))
    extreme = int(np.count_nonzero(flipped >= observed - 1e-12))
    return (extreme + 1) / (resamples + 1)


def _significance(p_value: float) -> str:
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


def run_method(
    corpus: Corpus,
    queries: Sequence[Query],
    qrels: Qrels,
    config: FeedbackConfig,
    depth: int = DEFAULT_DEPTH,
) -> MapResult:
    runs = [rerank_with_feedback(terms, corpus, config, qid, depth) for qid, terms in queries]
    return evaluate_map(runs, qrels)


def best_fixed_lambda(
    corpus: Corpus,
    queries: Sequence[Query],
    qrels: Qrels,
    template: FeedbackConfig,
    grid: Sequence[float] = LAMBDA_SWEEP,
    depth: int = DEFAULT_DEPTH,
) -> Tuple[FeedbackConfig, MapResult]:
    """The fixed-lambda config (template's method) with the highest MAP; first wins ties."""
    best = None
    for lam in grid:
        config = template.model_copy(update={"lam": float(lam)})
        result = run_method(corpus, queries, qrels, config, depth)
        logger.info("%s: MAP=%.4f", config.label, result.map)
        if best is None or result.map > best[1].map:
            best = (config, result)
    return best


def compare_methods(
    corpus: Corpus,
    queries: Sequence[Query],
    qrels: Qrels,
    configs: Sequence[FeedbackConfig],
    labels: Optional[Sequence[str]] = None,
    baseline: int = 0,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    depth: int = DEFAULT_DEPTH,
    sink: Optional[TextIO] = None,
) -> ComparisonReport:
    """MAP per method, % change over the baseline and a paired permutation test per method."""
    if len(configs) < 2:
        raise InputValidationError("compare at least two feedback methods")
    if not 0 <= baseline < len(configs):
        raise InputValidationError(f"baseline index {baseline} out of range")
    labels = list(labels) if labels is not None else [c.label for c in configs]
    if len(labels) != len(configs):
        raise InputValidationError("one label per config")

    results = []
    for label, config in zip(labels, configs):
        result = run_method(corpus, queries, qrels, config, depth)
        logger.info("%s: MAP=%.4f over %d queries", label, result.map, len(result.per_query))
        results.append(result)

    base = results[baseline]
    methods = []
    for label, config, result in zip(labels, configs, results):
        deltas = {qid: result.per_query[qid] - base.per_query[qid] for qid in result.per_query}
        p_value = paired_permutation_test(list(deltas.values()), resamples, seed)
        if base.map > 0:
            pct = (result.map - base.map) / base.map * 100.0
        else:
            pct = 0.0 if result.map == base.map else None
        methods.append(MethodResult(
            label=label,
            config=config,
            map=result.map,
            pct_change=pct,
            p_value=p_value,
            significance=_significance(p_value),
            per_query_ap=result.per_query,
            per_query_delta=deltas,
        ))

    report = ComparisonReport(
        baseline=labels[baseline],
        num_queries=len(queries),
        resamples=resamples,
        methods=methods,
    )
    if sink is not None:
        sink.write(report.model_dump_json(indent=2) + "\n")
    return report
