"""Mixture model feedback (MMF).

Feedback documents are modelled as a two-component multinomial mixture
lambda * theta_F + (1 - lambda) * C with a fixed lambda and the collection
model C. EM estimates theta_F; at an interior fixed point the mixture equals
the feedback term frequencies TF, so theta_F is the linear separation
C + (TF - C) / lambda and EM can be replaced by that closed form. When the
separation leaves the simplex the maximizer is found by thresholding terms
on TF / C instead.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .dist_core import (
    DUST_TOLERANCE,
    TermDistribution,
    Vocabulary,
    check_same_vocab,
    kl_divergence,
    l1_distance,
    normalize,
)
from .errors import (
    EmptyFeedbackError,
    InputValidationError,
    LambdaOutOfRangeError,
    VocabMismatchError,
    ZeroDenominatorError,
    ZeroMixtureProbabilityError,
)
from .separation import separate_raw

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000
GAP_SMOOTHING = 1e-12
# relative log-likelihood drop tolerated when starting from the maximizer
LOGLIK_SLACK = 1e-15

IterationCallback = Callable[[int, TermDistribution, float], None]


@dataclass(frozen=True, eq=False)
class FeedbackSet:
    """Per-document term counts c(w; d) of the feedback documents."""

    vocab: Vocabulary
    counts: np.ndarray
    doc_ids: Tuple[str, ...]

    def __post_init__(self):
        counts = np.array(self.counts)
        if counts.ndim == 1:
            counts = counts[np.newaxis, :]
        if counts.ndim != 2 or counts.shape[1] != self.vocab.size:
            raise VocabMismatchError(
                f"count matrix has shape {counts.shape}, vocabulary has {self.vocab.size} terms"
            )
        if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
            raise InputValidationError("term counts must be integers")
        if np.any(counts < 0):
            raise InputValidationError("term counts must be nonnegative")
        doc_ids = tuple(self.doc_ids) if self.doc_ids else tuple(f"d{i}" for i in range(counts.shape[0]))
        if len(doc_ids) != counts.shape[0]:
            raise InputValidationError(f"{len(doc_ids)} doc ids for {counts.shape[0]} count vectors")
        if counts.sum() <= 0:
            raise EmptyFeedbackError("feedback documents contain no terms")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "doc_ids", doc_ids)

    @property
    def term_counts(self) -> np.ndarray:
        """c(w, F) = sum over documents of c(w; d)."""
        return self.counts.sum(axis=0)


@dataclass(frozen=True)
class EMResult:
    theta: TermDistribution
    iterations: int
    loglik_trace: Tuple[float, ...]
    converged: bool
    final_delta: float
    lam: float
    background: TermDistribution
    tf: TermDistribution


@dataclass(frozen=True)
class EquivalenceReport:
    kl_em_vs_closed: float
    linearity_residual: float
    clamped: bool


def _check_lambda(lam: float) -> None:
    if not 0.0 < lam <= 1.0:
        raise LambdaOutOfRangeError(f"lambda must be in (0, 1], got {lam}")


def feedback_tf(F: FeedbackSet) -> TermDistribution:
    """tf(w, F) = c(w, F) / sum of all counts."""
    totals = F.term_counts.astype(float)
    if totals.sum() <= 0:
        raise EmptyFeedbackError("feedback documents contain no terms")
    return normalize(totals, F.vocab)


def _mixture(theta: TermDistribution, C: TermDistribution, lam: float) -> np.ndarray:
    return lam * theta.probs + (1.0 - lam) * C.probs


def mmf_log_likelihood(F: FeedbackSet, theta: TermDistribution, C: TermDistribution, lam: float) -> float:
    """sum_d sum_w c(w; d) log(lambda theta(w) + (1 - lambda) C(w))."""
    check_same_vocab(theta, C)
    if theta.vocab != F.vocab:
        raise VocabMismatchError("feedback set and distributions use different vocabularies")
    _check_lambda(lam)
    counts = F.term_counts
    mixture = _mixture(theta, C, lam)
    counted = counts > 0
    if np.any(mixture[counted] <= 0):
        i = int(np.flatnonzero(counted & (mixture <= 0))[0])
        raise ZeroMixtureProbabilityError(f"counted term {F.vocab.terms[i]!r} has zero mixture probability")
    return float(np.sum(counts[counted] * np.log(mixture[counted])))


def em_step(F: FeedbackSet, theta_n: TermDistribution, C: TermDistribution, lam: float) -> TermDistribution:
    """One E step (background posterior per term) and M step (reweighted counts).

    Where the mixture probability is 0 the background posterior is taken as 1.
    """
    check_same_vocab(theta_n, C)
    if theta_n.vocab != F.vocab:
        raise VocabMismatchError("feedback set and distributions use different vocabularies")
    _check_lambda(lam)
    topic = lam * theta_n.probs
    mixture = topic + (1.0 - lam) * C.probs
    # topic share 1 - p(background | w), 0 where the mixture vanishes
    share = np.zeros_like(mixture)
    np.divide(topic, mixture, out=share, where=mixture > 0)
    weighted = share * F.term_counts
    total = float(weighted.sum())
    if total <= 0:
        raise ZeroDenominatorError("E step attributes all feedback mass to the background")
    return normalize(weighted, F.vocab)


def run_em(
    F: FeedbackSet,
    C: TermDistribution,
    lam: float,
    init: Optional[TermDistribution] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    on_iteration: Optional[IterationCallback] = None,
    accelerate: bool = True,
) -> EMResult:
    """Iterate EM until the fixed-point residual ||em_step(theta) - theta||_1
    drops below tol or max_iter iterations.

    With accelerate, EM starts from the exact likelihood maximizer
    (mixture_optimum) unless init already scores higher, so boundary optima
    are reached instead of approached at the sublinear rate of plain EM.
    The steps that follow are plain EM steps either way.
    """
    if tol <= 0:
        raise InputValidationError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise InputValidationError(f"max_iter must be >= 1, got {max_iter}")
    _check_lambda(lam)
    if C.vocab != F.vocab:
        raise VocabMismatchError("feedback set and collection model use different vocabularies")

    theta = init if init is not None else TermDistribution.uniform(F.vocab)
    check_same_vocab(theta, C)
    if accelerate:
        theta = _warm_start(F, theta, C, lam)
    trace = []
    delta = math.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        updated = em_step(F, theta, C, lam)
        loglik = mmf_log_likelihood(F, updated, C, lam)
        delta = l1_distance(updated, theta)
        theta = updated
        trace.append(loglik)
        if on_iteration is not None:
            on_iteration(iterations, theta, loglik)
        if delta < tol:
            converged = True
            break

    if converged:
        logger.debug("EM converged after %d iterations (residual=%.3g)", iterations, delta)
    else:
        logger.info("EM stopped after %d iterations without converging (residual=%.3g)", iterations, delta)
    return EMResult(
        theta=theta,
        iterations=iterations,
        loglik_trace=tuple(trace),
        converged=converged,
        final_delta=float(delta),
        lam=float(lam),
        background=C,
        tf=feedback_tf(F),
    )



def closed_form_theta(TF: TermDistribution, C: TermDistribution, lam: float) -> Tuple[TermDistribution, bool]:
    """theta = (1/lambda) TF + (1 - 1/lambda) C, clamped to the simplex if needed.

    Returns (theta, clamped); clamped is True when the raw vector had entries
    below -1e-9 that were cut to 0 before renormalizing.
    """
    _check_lambda(lam)
    raw = separate_raw(TF, C, lam)
    clamped = bool(raw.min() < -DUST_TOLERANCE)
    return normalize(np.where(raw < 0, 0.0, raw), TF.vocab), clamped


def mixture_optimum(TF: TermDistribution, C: TermDistribution, lam: float) -> Tuple[TermDistribution, bool]:
    """The theta maximizing sum_w TF(w) log(lambda theta(w) + (1 - lambda) C(w)).

    Equals closed_form_theta whenever that is not clamped. Otherwise terms are
    ranked by TF / C and theta(w) = (kappa TF(w) - (1 - lambda) C(w)) / lambda
    on the longest prefix where it stays positive, with kappa fixing unit
    mass; every other term gets 0. Returns (theta, clamped).
    """
    closed, clamped = closed_form_theta(TF, C, lam)
    if not clamped:
        return closed, False
    t = TF.probs
    b = (1.0 - lam) * C.probs
    ratio = np.full(t.size, -np.inf)
    np.divide(t, b, out=ratio, where=(t > 0) & (b > 0))
    ratio[(t > 0) & (b <= 0)] = np.inf
    order = np.argsort(-ratio, kind="stable")
    kappa = (lam + np.cumsum(b[order])) / np.cumsum(t[order])
    inside = (kappa * t[order] > b[order]) & (t[order] > 0)
    outside = np.flatnonzero(~inside)
    size = int(outside[0]) if outside.size else t.size
    support = order[:size]
    probs = np.zeros(t.size)
    probs[support] = (kappa[size - 1] * t[support] - b[support]) / lam
    return normalize(np.maximum(probs, 0.0), TF.vocab), True


def _warm_start(F: FeedbackSet, theta: TermDistribution, C: TermDistribution, lam: float) -> TermDistribution:
    candidate, clamped = mixture_optimum(feedback_tf(F), C, lam)
    candidate_loglik = mmf_log_likelihood(F, candidate, C, lam)
    try:
        start_loglik = mmf_log_likelihood(F, theta, C, lam)
    except ZeroMixtureProbabilityError:
        return candidate
    if candidate_loglik >= start_loglik - LOGLIK_SLACK * max(1.0, abs(start_loglik)):
        logger.debug("EM starts from the likelihood maximizer (clamped=%s)", clamped)
        return candidate
    return theta


def em_equivalence_gap(em: EMResult, closed: TermDistribution) -> EquivalenceReport:
    """How far the EM estimate is from the closed-form separation.

    kl_em_vs_closed is KL(closed || theta_EM) with both sides smoothed by 1e-12;
    linearity_residual is max_w |lambda theta_EM + (1 - lambda) C - TF|;
    clamped is recomputed from the run's own TF, C and lambda.
    """
    check_same_vocab(em.theta, closed)
    _, clamped = closed_form_theta(em.tf, em.background, em.lam)
    gap = kl_divergence(closed.smooth(GAP_SMOOTHING), em.theta.smooth(GAP_SMOOTHING))
    mixture = _mixture(em.theta, em.background, em.lam)
    residual = float(np.abs(mixture - em.tf.probs).max())
    return EquivalenceReport(kl_em_vs_closed=gap, linearity_residual=residual, clamped=clamped)


def equivalence_trace(
    F: FeedbackSet,
    C: TermDistribution,
    lam: float,
    init: Optional[TermDistribution] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    accelerate: bool = False,
) -> Sequence[Tuple[int, float, float]]:
    """(iteration, log-likelihood, KL(closed || theta_n)) for every EM iteration.

    Plain EM steps by default, so the rows follow the textbook EM path.
    """
    closed, _ = closed_form_theta(feedback_tf(F), C, lam)
    smoothed_closed = closed.smooth(GAP_SMOOTHING)
    rows = []

    def record(iteration: int, theta: TermDistribution, loglik: float) -> None:
        rows.append((iteration, loglik, kl_divergence(smoothed_closed, theta.smooth(GAP_SMOOTHING))))

    run_em(F, C, lam, init=init, tol=tol, max_iter=max_iter, on_iteration=record, accelerate=accelerate)
    return rows
