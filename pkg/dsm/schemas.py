"""Pydantic models for everything that leaves the process: feedback
configurations and the JSON reports emitted by the CLI.
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import InputValidationError
from .separation import LambdaStrategy

FeedbackMethod = Literal["mmf", "dsm-fixed", "dsm-", "dsm"]


class FeedbackConfig(BaseModel):
    """Which feedback model to estimate and how to fold it into the query."""

    model_config = ConfigDict(frozen=True)

    method: FeedbackMethod
    lam: Optional[float] = None
    top_k: int = Field(10, ge=1)
    # None keeps every term of the feedback documents
    fb_terms: Optional[int] = Field(None, ge=1)
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    mu: float = Field(1000.0, gt=0.0)
    em_tol: float = Field(1e-8, gt=0.0)
    em_max_iter: int = Field(2000, ge=1)

    @model_validator(mode="after")
    def check_lambda(self):
        if self.method in ("mmf", "dsm-fixed"):
            if self.lam is None or not 0.0 < self.lam <= 1.0:
                raise ValueError(f"{self.method} needs lambda in (0, 1], got {self.lam}")
        elif self.lam is not None:
            raise ValueError(f"{self.method} estimates lambda itself; do not pass one")
        return self

    @classmethod
    def parse(cls, text: str, **defaults) -> "FeedbackConfig":
        """'mmf:0.5', 'dsm-fixed:0.3', 'dsm-' or 'dsm', plus shared defaults."""
        method, _, arg = text.strip().lower().partition(":")
        try:
            lam = float(arg) if arg else None
            return cls(method=method, lam=lam, **defaults)
        except (ValueError, ValidationError) as exc:
            raise InputValidationError(f"bad feedback method {text!r}: {exc}") from None

    @property
    def label(self) -> str:
        return f"{self.method}:{self.lam:g}" if self.lam is not None else self.method

    def strategy(self) -> LambdaStrategy:
        if self.method == "mmf":
            raise InputValidationError("mmf is estimated by EM, not by a separation strategy")
        return LambdaStrategy.parse(self.label)


class DivergencesOut(BaseModel):
    """Divergences of a separated distribution from the seed; None marks infinity."""

    rho: Optional[float]
    kl: Optional[float]
    skl: Optional[float]
    js: float
    infinite: bool = False


class SeparationReport(BaseModel):
    strategy: str
    lambda_lower: float
    lambda_used: float
    lambda_clamped: bool
    clamped_mass: float
    divergences: DivergencesOut
    distribution: Dict[str, float]


class ProfileRowOut(BaseModel):
    lambda_hat: float
    rho: Optional[float]
    kl: Optional[float]
    skl: Optional[float]
    js: float
    infinite: bool = False


class ProfileReport(BaseModel):
    lambda_lower: float
    rows: List[ProfileRowOut]


class EquivalenceOut(BaseModel):
    kl_em_vs_closed: float
    linearity_residual: float
    clamped: bool
    closed_form: Dict[str, float]


class TraceRowOut(BaseModel):
    iteration: int
    loglik: float
    kl_to_closed: float


class MmfReport(BaseModel):
    lam: float
    iterations: int
    converged: bool
    final_delta: float
    loglik_trace: List[float]
    theta: Dict[str, float]
    equivalence: Optional[EquivalenceOut] = None
    trace: Optional[List[TraceRowOut]] = None


class MethodResult(BaseModel):
    label: str
    config: FeedbackConfig
    map: float
    pct_change: Optional[float]
    p_value: float
    significance: str
    per_query_ap: Dict[str, float]
    per_query_delta: Dict[str, float]


class ComparisonReport(BaseModel):
    baseline: str
    num_queries: int
    resamples: int
    methods: List[MethodResult]
    source: str = ""
    settings: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
