"""Distribution separation: recover l(R, I_unknown) from a mixture M by
linearly removing a seed irrelevance distribution I_S.

    M = lambda * l + (1 - lambda) * I_S    =>    l_hat = I_S + (M - I_S) / lambda_hat

lambda_hat is bounded below by lambda_L = max_i (1 - M(i) / I_S(i)); below the
bound l_hat has negative entries. Three ways of choosing lambda_hat are
provided: the bound itself (DSM-), the minimum squared correlation with the
seed (DSM), and a fixed value (DSM with lambda fixed, i.e. the MMF closed form).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dist_core import (
    DUST_TOLERANCE,
    ZERO_VARIANCE,
    DivergenceProfilePoint,
    TermDistribution,
    check_same_vocab,
    js_divergence,
    kl_divergence,
    normalize,
    pearson_correlation,
)
from .errors import (
    DegenerateSeedError,
    GridError,
    InfiniteDivergenceError,
    LambdaBelowBoundError,
    LambdaOutOfRangeError,
    UniformSeedError,
)

logger = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-12
BOUND_SLACK = 1e-12
DEFAULT_PROFILE_POINTS = 64


class StrategyKind(str, Enum):
    LOWER_BOUND = "lower-bound"
    MIN_SQUARED_CORRELATION = "min-rho2"
    FIXED = "fixed"


@dataclass(frozen=True)
class LambdaStrategy:
    """How lambda_hat is chosen: DSM- (lower bound), DSM (min rho^2) or fixed."""

    kind: StrategyKind
    value: Optional[float] = None

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StrategyKind.FIXED:
            if self.value is None or not 0.0 < self.value <= 1.0:
                raise LambdaOutOfRangeError(f"fixed lambda must be in (0, 1], got {self.value}")
        elif self.value is not None:
            raise LambdaOutOfRangeError(f"strategy {kind.value} takes no lambda value")

    @classmethod
    def lower_bound(cls) -> "LambdaStrategy":
        return cls(StrategyKind.LOWER_BOUND)

    @classmethod
    def min_squared_correlation(cls) -> "LambdaStrategy":
        return cls(StrategyKind.MIN_SQUARED_CORRELATION)

    @classmethod
    def fixed(cls, value: float) -> "LambdaStrategy":
        return cls(StrategyKind.FIXED, float(value))

    @classmethod
    def parse(cls, text: str) -> "LambdaStrategy":
        """Accepts 'dsm-', 'dsm', 'dsm-fixed:0.3' and the StrategyKind names."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("dsm-", "lower-bound"):
            strategy = cls.lower_bound()
        elif name in ("dsm", "min-rho2"):
            strategy = cls.min_squared_correlation()
        elif name in ("dsm-fixed", "fixed"):
            try:
                return cls.fixed(float(arg))
            except ValueError:
                raise LambdaOutOfRangeError(f"fixed strategy needs a numeric lambda: {text!r}") from None
        else:
            raise LambdaOutOfRangeError(f"unknown lambda strategy: {text!r}")
        if arg:
            raise LambdaOutOfRangeError(f"strategy {name} takes no lambda value: {text!r}")
        return strategy

    @property
    def label(self) -> str:
        if self.kind is StrategyKind.LOWER_BOUND:
            return "dsm-"
        if self.kind is StrategyKind.MIN_SQUARED_CORRELATION:
            return "dsm"
        return f"dsm-fixed:{self.value:g}"


@dataclass(frozen=True)
class SeparationResult:
    output: TermDistribution
    lambda_lower: float
    lambda_used: float
    strategy: LambdaStrategy
    rho_at_lambda: Optional[float]
    clamped_mass: float
    lambda_clamped: bool
    diagnostics: DivergenceProfilePoint


def lambda_lower_bound(M: TermDistribution, I_S: TermDistribution) -> float:
    """max_i (1 - M(i) / I_S(i)) over entries with I_S(i) > 0, floored at LAMBDA_FLOOR."""
    check_same_vocab(M, I_S)
    seed = I_S.probs
    defined = seed > 0
    if not defined.any():
        raise DegenerateSeedError("seed distribution has no positive entries")
    bound = float(np.max(1.0 - M.probs[defined] / seed[defined]))
    return min(1.0, max(LAMBDA_FLOOR, bound))


def separate_raw(M: TermDistribution, I_S: TermDistribution, lambda_hat: float) -> np.ndarray:
    """Unclamped I_S + (M - I_S) / lambda_hat; exact when M equals I_S."""
    check_same_vocab(M, I_S)
    if not 0.0 < lambda_hat <= 1.0:
        raise LambdaOutOfRangeError(f"lambda_hat must be in (0, 1], got {lambda_hat}")
    return I_S.probs + (M.probs - I_S.probs) / lambda_hat


def _separate(
    M: TermDistribution,
    I_S: TermDistribution,
    lambda_hat: float,
    bound: Optional[float] = None,
) -> Tuple[TermDistribution, float]:
    raw = separate_raw(M, I_S, lambda_hat)
    if bound is None:
        bound = lambda_lower_bound(M, I_S)
    if lambda_hat < bound - BOUND_SLACK:
        raise LambdaBelowBoundError(
            f"lambda_hat={lambda_hat:.6g} is below the lower bound {bound:.6g}; "
            "the separated vector would have negative entries"
        )
    lowest = float(raw.min())
    if lowest < -DUST_TOLERANCE:
        raise LambdaBelowBoundError(f"separation at lambda_hat={lambda_hat:.6g} leaves entry {lowest:.3g}")
    negative = raw < 0
    clamped_mass = float(-raw[negative].sum())
    return normalize(np.where(negative, 0.0, raw), M.vocab), clamped_mass


def separate(M: TermDistribution, I_S: TermDistribution, lambda_hat: float) -> TermDistribution:
    return _separate(M, I_S, lambda_hat)[0]


def zero_correlation_lambda(M: TermDistribution, I_S: TermDistribution) -> Optional[float]:
    """lambda_hat = -a/b at which the separated distribution is uncorrelated with I_S.

    a = sum (I_S(i) - 1/m)(M(i) - I_S(i)), b = sum (I_S(i) - 1/m)^2.
    None when I_S is uniform.
    """
    check_same_vocab(M, I_S)
    deviation = I_S.probs - 1.0 / I_S.size
    a = float(deviation @ (M.probs - I_S.probs))
    b = float(deviation @ deviation)
    if b <= ZERO_VARIANCE:
        return None
    return -a / b + 0.0


def _rho_at(M: TermDistribution, I_S: TermDistribution, lambda_hat: float, bound: float) -> Optional[float]:
    lhat, _ = _separate(M, I_S, lambda_hat, bound)
    return pearson_correlation(lhat, I_S)


def estimate_lambda_min_rho2(M: TermDistribution, I_S: TermDistribution) -> float:
    """argmin of rho(l_hat, I_S)^2 over lambda_hat in [lambda_L, 1].

    rho is monotone in lambda_hat, so the optimum is the zero-correlation point
    when it lies inside the interval and otherwise the better endpoint
    (ties go to lambda_L).
    """
    bound = lambda_lower_bound(M, I_S)
    zero = zero_correlation_lambda(M, I_S)
    if zero is None:
        raise UniformSeedError("seed distribution is uniform: correlation with it is undefined")
    if bound <= zero <= 1.0:
        return zero
    rho_low = _rho_at(M, I_S, bound, bound)
    rho_high = _rho_at(M, I_S, 1.0, bound)
    if rho_low is None or rho_high is None:
        raise UniformSeedError("separated distribution is uniform at an interval endpoint")
    return bound if rho_low ** 2 <= rho_high ** 2 else 1.0


def profile_point(lhat: TermDistribution, I_S: TermDistribution, lambda_hat: float) -> DivergenceProfilePoint:
    infinite = False
    try:
        kl = kl_divergence(lhat, I_S)
    except InfiniteDivergenceError:
        kl, infinite = math.inf, True
    try:
        skl = kl + kl_divergence(I_S, lhat)
    except InfiniteDivergenceError:
        skl, infinite = math.inf, True
    return DivergenceProfilePoint(
        lambda_hat=float(lambda_hat),
        rho=pearson_correlation(lhat, I_S),
        kl=kl,
        skl=skl,
        js=js_divergence(lhat, I_S),
        infinite=infinite,
    )


def dsm(M: TermDistribution, I_S: TermDistribution, strategy: LambdaStrategy) -> SeparationResult:
    bound = lambda_lower_bound(M, I_S)
    lambda_clamped = False
    if strategy.kind is StrategyKind.LOWER_BOUND:
        lambda_hat = bound
    elif strategy.kind is StrategyKind.MIN_SQUARED_CORRELATION:
        lambda_hat = estimate_lambda_min_rho2(M, I_S)
    else:
        lambda_hat = strategy.value
        if lambda_hat < bound:
            logger.warning("fixed lambda %.6g is below the lower bound %.6g; using the bound", lambda_hat, bound)
            lambda_hat = bound
            lambda_clamped = True

    output, clamped_mass = _separate(M, I_S, lambda_hat, bound)
    diagnostics = profile_point(output, I_S, lambda_hat)
    logger.debug(
        "separated with %s: lambda_L=%.6g lambda_hat=%.6g rho=%s",
        strategy.label, bound, lambda_hat, diagnostics.rho,
    )
    return SeparationResult(
        output=output,
        lambda_lower=bound,
        lambda_used=float(lambda_hat),
        strategy=strategy,
        rho_at_lambda=diagnostics.rho,
        clamped_mass=clamped_mass,
        lambda_clamped=lambda_clamped,
        diagnostics=diagnostics,
    )


def default_grid(M: TermDistribution, I_S: TermDistribution, points: int = DEFAULT_PROFILE_POINTS) -> List[float]:
    """Log-spaced descending grid from 1 to lambda_L, both endpoints exact."""
    if points < 2:
        raise GridError(f"a profile grid needs at least 2 points, got {points}")
    bound = lambda_lower_bound(M, I_S)
    grid = np.geomspace(1.0, bound, points)
    grid[0], grid[-1] = 1.0, bound
    return [float(v) for v in grid]


def divergence_profile(
    M: TermDistribution,
    I_S: TermDistribution,
    grid: Optional[Sequence[float]] = None,
) -> List[DivergenceProfilePoint]:
    """Correlation and divergences between l_hat and I_S along a descending lambda_hat grid.

    Infinite divergences are recorded as inf with the row flagged.
    """
    bound = lambda_lower_bound(M, I_S)
    values = default_grid(M, I_S) if grid is None else [float(v) for v in grid]
    if not values:
        raise GridError("empty lambda grid")
    for value in values:
        if not bound - BOUND_SLACK <= value <= 1.0:
            raise GridError(f"grid value {value:g} is outside [lambda_L={bound:.6g}, 1]")
    if any(later > earlier for earlier, later in zip(values, values[1:])):
        raise GridError("lambda grid must be sorted in descending order")

    points = []
    for value in values:
        lhat, _ = _separate(M, I_S, value, bound)
        points.append(profile_point(lhat, I_S, value))
    return points
