"""Vocabulary-indexed probability vectors and the numerical primitives shared
by separation and feedback estimation: linear combination, Pearson
correlation, the KL / symmetrized KL / JS divergences and their analytic
derivatives along the separation path.

All logarithms are natural (nats).
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from .errors import (
    AllZeroError,
    InfiniteDivergenceError,
    InputValidationError,
    LambdaOutOfRangeError,
    NegativeEntryError,
    NegativeWeightError,
    VocabMismatchError,
)

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-9
DUST_TOLERANCE = 1e-9
# sum of squared deviations below this counts as a uniform vector
ZERO_VARIANCE = 1e-24


@dataclass(frozen=True)
class Vocabulary:
    """Ordered list of unique terms with its inverse index."""

    terms: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        if len(terms) < 2:
            raise InputValidationError(f"vocabulary needs at least 2 terms, got {len(terms)}")
        index = {term: i for i, term in enumerate(terms)}
        if len(index) != len(terms):
            seen, dupes = set(), []
            for term in terms:
                if term in seen:
                    dupes.append(term)
                seen.add(term)
            raise InputValidationError(f"duplicate terms in vocabulary: {sorted(set(dupes))[:5]}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "index", index)

    @classmethod
    def from_terms(cls, terms: Iterable[str]) -> "Vocabulary":
        return cls(tuple(terms))

    @classmethod
    def synthetic(cls, m: int) -> "Vocabulary":
        width = max(4, len(str(m - 1)))
        return cls(tuple(f"w{i:0{width}d}" for i in range(m)))

    @property
    def size(self) -> int:
        return len(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def restrict(self, terms: Iterable[str]) -> "Vocabulary":
        """Sub-vocabulary of the given terms, in this vocabulary's order."""
        wanted = set(terms)
        missing = wanted - self.index.keys()
        if missing:
            raise VocabMismatchError(f"terms not in vocabulary: {sorted(missing)[:5]}")
        return Vocabulary(tuple(t for t in self.terms if t in wanted))


@dataclass(frozen=True, eq=False)
class TermDistribution:
    """A probability vector over a shared vocabulary.

    The array is copied and frozen on construction; instances are safe to
    share between threads.
    """

    vocab: Vocabulary
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.shape[0] != self.vocab.size:
            raise VocabMismatchError(
                f"distribution has shape {probs.shape}, vocabulary has {self.vocab.size} terms"
            )
        if not np.all(np.isfinite(probs)):
            raise InputValidationError("distribution contains non-finite values")
        if np.any(probs < 0):
            raise NegativeWeightError(f"negative probability {probs.min():.3g}")
        total = float(probs.sum())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InputValidationError(f"probabilities sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, vocab: Vocabulary) -> "TermDistribution":
        return cls(vocab, np.full(vocab.size, 1.0 / vocab.size))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float], vocab: Vocabulary) -> "TermDistribution":
        """Normalized distribution from term weights; absent terms get 0."""
        unknown = set(mapping) - vocab.index.keys()
        if unknown:
            raise VocabMismatchError(f"terms not in vocabulary: {sorted(unknown)[:5]}")
        weights = np.zeros(vocab.size)
        for term, weight in mapping.items():
            weights[vocab.index[term]] = weight
        return normalize(weights, vocab)

    @property
    def size(self) -> int:
        return self.vocab.size

    def prob(self, term: str) -> float:
        return float(self.probs[self.vocab.index[term]])

    def as_dict(self) -> Dict[str, float]:
        return {t: float(p) for t, p in zip(self.vocab.terms, self.probs)}

    def support_size(self) -> int:
        return int(np.count_nonzero(self.probs))

    def restrict(self, sub_vocab: Vocabulary) -> "TermDistribution":
        """Mass over a sub-vocabulary, renormalized."""
        idx = [self.vocab.index[t] for t in sub_vocab.terms]
        return normalize(self.probs[idx], sub_vocab)

    def smooth(self, eps: float) -> "TermDistribution":
        """Add eps to every entry and renormalize."""
        if eps < 0:
            raise InputValidationError(f"smoothing epsilon must be >= 0, got {eps}")
        if eps == 0:
            return self
        return normalize(self.probs + eps, self.vocab)


@dataclass(frozen=True)
class DivergenceProfilePoint:
    """Correlation and divergences between a separated distribution and the seed."""

    lambda_hat: float
    rho: Optional[float]
    kl: float
    skl: float
    js: float
    infinite: bool = False


class DerivativeKind(str, Enum):
    KL = "kl"
    SKL_REVERSE = "skl_reverse"
    SKL = "skl"
    JS = "js"


def check_same_vocab(P: TermDistribution, Q: TermDistribution) -> None:
    if P.vocab is not Q.vocab and P.vocab != Q.vocab:
        raise VocabMismatchError(
            f"distributions use different vocabularies ({P.vocab.size} vs {Q.vocab.size} terms)"
        )


def normalize(weights: Sequence[float], vocab: Vocabulary) -> TermDistribution:
    w = np.asarray(weights, dtype=float)
    if w.shape != (vocab.size,):
        raise VocabMismatchError(f"expected {vocab.size} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InputValidationError("weights contain non-finite values")
    if np.any(w < 0):
        raise NegativeWeightError(f"negative weight {w.min():.3g}")
    total = w.sum()
    if total <= 0:
        raise AllZeroError("cannot normalize an all-zero weight vector")
    return TermDistribution(vocab, w / total)


def linear_combine(F: TermDistribution, G: TermDistribution, lam: float) -> TermDistribution:
    """lam * F + (1 - lam) * G."""
    check_same_vocab(F, G)
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRangeError(f"lambda must be in [0, 1], got {lam}")
    return TermDistribution(F.vocab, lam * F.probs + (1.0 - lam) * G.probs)


def l1_distance(P: TermDistribution, Q: TermDistribution) -> float:
    check_same_vocab(P, Q)
    return float(np.abs(P.probs - Q.probs).sum())


def linf_distance(P: TermDistribution, Q: TermDistribution) -> float:
    check_same_vocab(P, Q)
    return float(np.abs(P.probs - Q.probs).max())


def pearson_correlation(P: TermDistribution, Q: TermDistribution) -> Optional[float]:
    """Pearson correlation over the m paired entries, or None for a uniform input.

    The mean of a probability vector over m entries is exactly 1/m, so
    deviations are taken from 1/m directly.
    """
    check_same_vocab(P, Q)
    centre = 1.0 / P.size
    dp = P.probs - centre
    dq = Q.probs - centre
    sp = float(dp @ dp)
    sq = float(dq @ dq)
    if sp <= ZERO_VARIANCE or sq <= ZERO_VARIANCE:
        return None
    rho = float(dp @ dq) / math.sqrt(sp * sq)
    return min(1.0, max(-1.0, rho))


def kl_divergence(P: TermDistribution, Q: TermDistribution) -> float:
    """D(P || Q) in nats; raises when P puts mass where Q has none."""
    check_same_vocab(P, Q)
    summands = rel_entr(P.probs, Q.probs)
    if np.isinf(summands).any():
        i = int(np.argmax(np.isinf(summands)))
        raise InfiniteDivergenceError(
            f"KL divergence is infinite: term {P.vocab.terms[i]!r} has P={P.probs[i]:.3g} and Q=0"
        )
    return max(0.0, float(summands.sum()))


def symmetrized_kl(P: TermDistribution, Q: TermDistribution) -> float:
    return kl_divergence(P, Q) + kl_divergence(Q, P)


def js_divergence(P: TermDistribution, Q: TermDistribution) -> float:
    check_same_vocab(P, Q)
    midpoint = 0.5 * (P.probs + Q.probs)
    value = 0.5 * float(rel_entr(P.probs, midpoint).sum()) + 0.5 * float(rel_entr(Q.probs, midpoint).sum())
    return min(math.log(2.0), max(0.0, value))


def separated_entries(M: TermDistribution, I_S: TermDistribution, xi: float) -> np.ndarray:
    """xi * (M - I_S) + I_S with floating-point dust cleaned to 0."""
    lhat = I_S.probs + xi * (M.probs - I_S.probs)
    lowest = float(lhat.min())
    if lowest < -DUST_TOLERANCE:
        i = int(np.argmin(lhat))
        raise NegativeEntryError(
            f"xi={xi:.6g} gives a negative entry {lowest:.3g} at term {M.vocab.terms[i]!r}"
        )
    return np.where(lhat < 0, 0.0, lhat)


def divergence_derivative(
    kind: DerivativeKind,
    M: TermDistribution,
    I_S: TermDistribution,
    xi: float,
) -> float:
    """Derivative with respect to xi = 1/lambda_hat of the divergence between the
    separated distribution and I_S.

    KL is D(l_hat || I_S), SKL_REVERSE is D(I_S || l_hat), SKL their sum and
    JS the Jensen-Shannon divergence. Returns inf at a boundary xi where an
    entry of l_hat that still moves has reached 0.
    """
    check_same_vocab(M, I_S)
    kind = DerivativeKind(kind)
    if xi < 1.0:
        raise LambdaOutOfRangeError(f"xi must be >= 1, got {xi}")
    if kind is DerivativeKind.SKL:
        forward = divergence_derivative(DerivativeKind.KL, M, I_S, xi)
        reverse = divergence_derivative(DerivativeKind.SKL_REVERSE, M, I_S, xi)
        return forward + reverse

    seed = I_S.probs
    delta = M.probs - seed
    lhat = separated_entries(M, I_S, xi)
    moving = delta != 0
    if np.any(moving & (lhat == 0)):
        return math.inf

    if kind is DerivativeKind.KL:
        if np.any((seed == 0) & (lhat > 0)):
            raise InfiniteDivergenceError("KL divergence to the seed is infinite: seed has zero entries")
        mask = moving & (seed > 0)
        return float(np.sum(delta[mask] * np.log(lhat[mask] / seed[mask])))
    if kind is DerivativeKind.SKL_REVERSE:
        mask = moving & (seed > 0)
        return float(np.sum(-seed[mask] * delta[mask] / lhat[mask]))
    # JS
    ratio = 2.0 * lhat[moving] / (lhat[moving] + seed[moving])
    return 0.5 * float(np.sum(delta[moving] * np.log(ratio)))
