"""Command-line interface: ``python -m dsm <command>``.

Commands:
    separate    separate I_S from M and report lambda and divergences
    profile     correlation/divergence curves along a lambda grid (CSV)
    mmf         fit the MMF mixture by EM, optionally against the closed form
    experiment  pseudo-relevance feedback comparison with MAP and p-values
    gen         write a synthetic corpus, queries and qrels
"""
import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ValidationError

from .dist_core import TermDistribution, Vocabulary
from .errors import DsmError, InputValidationError, MalformedRecordError
from .harness import (
    best_fixed_lambda,
    compare_methods,
    load_corpus,
    read_qrels,
    read_queries,
)
from .mmf import (
    FeedbackSet,
    closed_form_theta,
    em_equivalence_gap,
    equivalence_trace,
    feedback_tf,
    run_em,
)
from .schemas import (
    ComparisonReport,
    DivergencesOut,
    EquivalenceOut,
    FeedbackConfig,
    MmfReport,
    ProfileReport,
    ProfileRowOut,
    SeparationReport,
    TraceRowOut,
)
from .separation import LambdaStrategy, default_grid, divergence_profile, dsm, lambda_lower_bound
from .settings import SettingsManager
from .synth import export_corpus, generate_corpus

logger = logging.getLogger(__name__)

SUM_WARNING = 1e-6
GRID_BEST = "mmf-grid-best"
DEFAULT_FORMATS = {
    "separate": "json",
    "profile": "csv",
    "mmf": "json",
    "experiment": "json",
    "gen": "text",
}


# ---------------------------------------------------------------------------
# Input files

def _csv_rows(path: Path):
    """(line number, term, value text) for each data row of a two-column CSV."""
    if not path.is_file():
        raise InputValidationError(f"input file not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise MalformedRecordError(f"expected 2 columns, got {len(row)}", lineno, str(path))
            term, value = row[0].strip(), row[1].strip()
            if lineno == 1 and term.lower() == "term":
                continue
            if not term:
                raise MalformedRecordError("empty term", lineno, str(path))
            yield lineno, term, value


def read_distribution(path) -> Dict[str, float]:
    """term,prob rows; renormalized when the sum is off."""
    path = Path(path)
    weights: Dict[str, float] = {}
    for lineno, term, value in _csv_rows(path):
        try:
            prob = float(value)
        except ValueError:
            raise MalformedRecordError(f"probability is not a number: {value!r}", lineno, str(path)) from None
        if not math.isfinite(prob) or prob < 0:
            raise MalformedRecordError(f"probability must be finite and >= 0, got {value}", lineno, str(path))
        if term in weights:
            raise MalformedRecordError(f"duplicate term {term!r}", lineno, str(path))
        weights[term] = prob
    total = sum(weights.values())
    if total <= 0:
        raise InputValidationError(f"{path}: probabilities sum to 0")
    if abs(total - 1.0) > SUM_WARNING:
        logger.warning("%s: probabilities sum to %.9g; renormalizing", path, total)
    return {term: w / total for term, w in weights.items()}


def read_counts(path) -> Dict[str, int]:
    """term,count rows of nonnegative integers."""
    path = Path(path)
    counts: Dict[str, int] = {}
    for lineno, term, value in _csv_rows(path):
        try:
            count = float(value)
        except ValueError:
            raise MalformedRecordError(f"count is not a number: {value!r}", lineno, str(path)) from None
        if count < 0 or not count.is_integer():
            raise MalformedRecordError(f"count must be a nonnegative integer, got {value}", lineno, str(path))
        counts[term] = counts.get(term, 0) + int(count)
    return counts


def align(*mappings: Dict[str, float]) -> Tuple[Vocabulary, List[TermDistribution]]:
    """Distributions over the union of terms, first mapping's order first."""
    terms: Dict[str, None] = {}
    for mapping in mappings:
        terms.update(dict.fromkeys(mapping))
    vocab = Vocabulary(tuple(terms))
    return vocab, [TermDistribution.from_mapping(m, vocab) for m in mappings]


def _load_pair(args, smooth: Optional[float]) -> Tuple[TermDistribution, TermDistribution]:
    _, (M, I_S) = align(read_distribution(args.mixture), read_distribution(args.seed_dist))
    if smooth:
        M, I_S = M.smooth(smooth), I_S.smooth(smooth)
    return M, I_S


# ---------------------------------------------------------------------------
# Output

def _number(value: Optional[float]) -> Optional[float]:
    if value is None or math.isinf(value):
        return None
    return float(value)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(header: Sequence[str], rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def _table(header: Sequence[str], rows) -> str:
    cells = [list(header)] + [[_cell(v) if not isinstance(v, float) else f"{v:.6g}" for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells) + "\n"


def _distribution_rows(dist: Dict[str, float]):
    return [(term, prob) for term, prob in dist.items()]


class GenReport(BaseModel):
    files: Dict[str, str]
    num_docs: int
    num_queries: int


def render(report: BaseModel, fmt: str) -> str:
    if fmt == "json":
        return report.model_dump_json(indent=2) + "\n"
    if isinstance(report, ProfileReport):
        rows = [(r.lambda_hat, r.rho, _inf(r.kl), _inf(r.skl), r.js) for r in report.rows]
        header = ("lambda", "rho", "kl", "skl", "js")
        return _csv_text(header, rows) if fmt == "csv" else _table(header, rows)
    if isinstance(report, SeparationReport):
        if fmt == "csv":
            return _csv_text(("term", "prob"), _distribution_rows(report.distribution))
        d = report.divergences
        summary = [
            ("strategy", report.strategy),
            ("lambda_L", report.lambda_lower),
            ("lambda_hat", report.lambda_used),
            ("rho", d.rho),
            ("kl", _inf(d.kl)),
            ("skl", _inf(d.skl)),
            ("js", d.js),
        ]
        return _table(("field", "value"), summary) + "\n" + _table(("term", "prob"), _distribution_rows(report.distribution))
    if isinstance(report, MmfReport):
        if fmt == "csv":
            if report.trace is not None:
                return _csv_text(("iteration", "loglik", "kl_to_closed"),
                                 [(r.iteration, r.loglik, r.kl_to_closed) for r in report.trace])
            return _csv_text(("term", "prob"), _distribution_rows(report.theta))
        summary = [
            ("lambda", report.lam),
            ("iterations", report.iterations),
            ("converged", report.converged),
            ("final_delta", report.final_delta),
            ("loglik", report.loglik_trace[-1]),
        ]
        if report.equivalence is not None:
            summary += [
                ("kl_em_vs_closed", report.equivalence.kl_em_vs_closed),
                ("linearity_residual", report.equivalence.linearity_residual),
                ("clamped", report.equivalence.clamped),
            ]
        return _table(("field", "value"), summary) + "\n" + _table(("term", "prob"), _distribution_rows(report.theta))
    if isinstance(report, ComparisonReport):
        rows = [(m.label, m.map, m.pct_change, m.p_value, m.significance) for m in report.methods]
        header = ("method", "map", "pct_change", "p_value", "sig")
        return _csv_text(header, rows) if fmt == "csv" else _table(header, rows)
    if isinstance(report, GenReport):
        if fmt == "csv":
            return _csv_text(("file", "path"), report.files.items())
        return _table(("file", "path"), report.files.items())
    raise InputValidationError(f"format {fmt!r} not supported for this command")


def _inf(value: Optional[float]) -> Optional[float]:
    return math.inf if value is None else value


def emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands

def _strategy(args) -> LambdaStrategy:
    if args.lam is not None:
        return LambdaStrategy.fixed(args.lam)
    if args.strategy == "fixed":
        raise InputValidationError("--strategy fixed needs --lambda")
    return LambdaStrategy.parse(args.strategy)


def cmd_separate(args, manager: SettingsManager) -> SeparationReport:
    M, I_S = _load_pair(args, args.smooth)
    result = dsm(M, I_S, _strategy(args))
    point = result.diagnostics
    return SeparationReport(
        strategy=result.strategy.label,
        lambda_lower=result.lambda_lower,
        lambda_used=result.lambda_used,
        lambda_clamped=result.lambda_clamped,
        clamped_mass=result.clamped_mass,
        divergences=DivergencesOut(
            rho=point.rho, kl=_number(point.kl), skl=_number(point.skl), js=point.js, infinite=point.infinite,
        ),
        distribution=result.output.as_dict(),
    )


def _parse_grid(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputValidationError(f"--grid expects comma-separated numbers, got {text!r}") from None


def cmd_profile(args, manager: SettingsManager) -> ProfileReport:
    M, I_S = _load_pair(args, args.smooth)
    points = args.points if args.points is not None else manager.settings.profile.points
    grid = _parse_grid(args.grid) if args.grid else default_grid(M, I_S, points)
    rows = divergence_profile(M, I_S, grid)
    return ProfileReport(
        lambda_lower=lambda_lower_bound(M, I_S),
        rows=[
            ProfileRowOut(
                lambda_hat=p.lambda_hat, rho=p.rho, kl=_number(p.kl), skl=_number(p.skl), js=p.js, infinite=p.infinite,
            )
            for p in rows
        ],
    )


def cmd_mmf(args, manager: SettingsManager) -> MmfReport:
    em_settings = manager.settings.em
    tol = args.tol if args.tol is not None else em_settings.tol
    max_iter = args.max_iter if args.max_iter is not None else em_settings.max_iter
    background = read_distribution(args.collection)
    counts = read_counts(args.counts)
    vocab = Vocabulary(tuple(background) + tuple(t for t in counts if t not in background))
    C = TermDistribution.from_mapping(background, vocab)
    F = FeedbackSet(vocab, [counts.get(t, 0) for t in vocab.terms], ("F",))

    em = run_em(F, C, args.lam, tol=tol, max_iter=max_iter)
    report = MmfReport(
        lam=em.lam,
        iterations=em.iterations,
        converged=em.converged,
        final_delta=em.final_delta,
        loglik_trace=list(em.loglik_trace),
        theta=em.theta.as_dict(),
    )
    if args.compare_closed:
        closed, _ = closed_form_theta(feedback_tf(F), C, args.lam)
        gap = em_equivalence_gap(em, closed)
        report.equivalence = EquivalenceOut(
            kl_em_vs_closed=gap.kl_em_vs_closed,
            linearity_residual=gap.linearity_residual,
            clamped=gap.clamped,
            closed_form=closed.as_dict(),
        )
    if args.trace:
        report.trace = [
            TraceRowOut(iteration=i, loglik=ll, kl_to_closed=kl)
            for i, ll, kl in equivalence_trace(F, C, args.lam, tol=tol, max_iter=max_iter)
        ]
    return report


def _apply_synthetic_flags(args, manager: SettingsManager) -> None:
    s = manager.settings
    overrides = {
        "num_docs": args.num_docs,
        "num_queries": args.num_queries,
        "doc_length": args.doc_length,
        "relevant_fraction": args.relevant_fraction,
        "noise_spread": args.noise_spread,
        "vocab_size": args.vocab_size,
        "lambda_gen": args.lambda_gen,
        "topic_sharpness": args.topic_sharpness,
    }
    s.synthetic = replace(s.synthetic, **{k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        s.experiment = replace(s.experiment, seed=args.seed)


def _synthetic_corpus(manager: SettingsManager):
    s = manager.settings
    return generate_corpus(seed=s.experiment.seed, **vars(s.synthetic))


def cmd_experiment(args, manager: SettingsManager) -> ComparisonReport:
    s = manager.settings
    _apply_synthetic_flags(args, manager)
    flags = {"top_k": args.top_k, "fb_terms": args.fb_terms, "alpha": args.alpha}
    s.feedback = replace(s.feedback, **{k: v for k, v in flags.items() if v is not None})
    if s.feedback.fb_terms < 0:
        raise InputValidationError(f"fb_terms must be >= 0, got {s.feedback.fb_terms}")
    if args.mu is not None:
        s.retrieval = replace(s.retrieval, mu=args.mu)
    if args.resamples is not None:
        s.experiment = replace(s.experiment, resamples=args.resamples)
    if args.methods is not None:
        s.experiment = replace(s.experiment, methods=args.methods)

    if args.synthetic:
        synthetic = _synthetic_corpus(manager)
        corpus, queries, qrels = synthetic.to_corpus(), list(synthetic.queries), synthetic.qrels
        source = f"synthetic:seed={s.experiment.seed}"
    else:
        missing = [flag for flag in ("corpus", "queries", "qrels") if getattr(args, flag) is None]
        if missing:
            raise InputValidationError("experiment needs --synthetic or --corpus, --queries and --qrels "
                                       f"(missing: {', '.join('--' + m for m in missing)})")
        for flag in ("corpus", "queries", "qrels"):
            if not Path(getattr(args, flag)).is_file():
                raise InputValidationError(f"--{flag} file not found: {getattr(args, flag)}")
        corpus, queries, qrels = load_corpus(args.corpus), read_queries(args.queries), read_qrels(args.qrels)
        source = str(args.corpus)

    shared = {
        "top_k": s.feedback.top_k,
        "fb_terms": s.feedback.fb_terms or None,
        "alpha": s.feedback.alpha,
        "mu": s.retrieval.mu,
        "em_tol": s.feedback.em_tol,
        "em_max_iter": s.feedback.em_max_iter,
    }
    labels, configs = [], []
    for text in (m.strip() for m in s.experiment.methods.split(",")):
        if not text:
            continue
        if text.lower() == GRID_BEST:
            template = FeedbackConfig(method="mmf", lam=0.5, **shared)
            config, result = best_fixed_lambda(corpus, queries, qrels, template, depth=s.retrieval.depth)
            logger.info("best fixed lambda for mmf: %g (MAP=%.4f)", config.lam, result.map)
            labels.append(GRID_BEST)
        else:
            config = FeedbackConfig.parse(text, **shared)
            labels.append(config.label)
        configs.append(config)

    baseline = 0
    if args.baseline is not None:
        if args.baseline not in labels:
            raise InputValidationError(f"--baseline {args.baseline!r} is not one of {labels}")
        baseline = labels.index(args.baseline)

    report = compare_methods(
        corpus, queries, qrels, configs,
        labels=labels,
        baseline=baseline,
        resamples=s.experiment.resamples,
        seed=s.experiment.seed,
        depth=s.retrieval.depth,
    )
    report.source = source
    report.settings = manager.as_dict()
    return report


def cmd_gen(args, manager: SettingsManager) -> GenReport:
    _apply_synthetic_flags(args, manager)
    synthetic = _synthetic_corpus(manager)
    paths = export_corpus(synthetic, args.out_dir)
    return GenReport(
        files={name: str(path) for name, path in paths.items()},
        num_docs=len(synthetic.doc_ids),
        num_queries=len(synthetic.queries),
    )


COMMANDS = {
    "separate": cmd_separate,
    "profile": cmd_profile,
    "mmf": cmd_mmf,
    "experiment": cmd_experiment,
    "gen": cmd_gen,
}


# ---------------------------------------------------------------------------
# Parser

def _add_pair_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("mixture", help="CSV term,prob of the mixture M")
    parser.add_argument("seed_dist", metavar="seed", help="CSV term,prob of the seed irrelevance distribution I_S")
    parser.add_argument("--smooth", type=float, default=None, metavar="EPS",
                        help="add EPS to both distributions before separating")


def _add_synthetic_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--num-docs", type=int, default=None)
    parser.add_argument("--num-queries", type=int, default=None)
    parser.add_argument("--doc-length", type=int, default=None)
    parser.add_argument("--relevant-fraction", type=float, default=None)
    parser.add_argument("--noise-spread", type=float, default=None,
                        help="per-query spread of the generating lambda")
    parser.add_argument("--vocab-size", type=int, default=None)
    parser.add_argument("--lambda-gen", type=float, default=None)
    parser.add_argument("--topic-sharpness", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key=value settings file (default: config/dsm.conf if present)")
    common.add_argument("--format", choices=("json", "text", "csv"), default=None)
    common.add_argument("--output", default=None, help="write the report here instead of stdout")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default) or ERROR")

    parser = argparse.ArgumentParser(prog="dsm", description="Distribution separation for pseudo-relevance feedback")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", parents=[common], help="separate a seed distribution from a mixture")
    _add_pair_args(p)
    p.add_argument("--strategy", choices=("lower-bound", "min-rho2", "fixed"), default="min-rho2")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed lambda_hat (implies --strategy fixed)")

    p = sub.add_parser("profile", parents=[common], help="correlation and divergence curves along a lambda grid")
    _add_pair_args(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--points", type=int, default=None, help="log-spaced grid size")
    group.add_argument("--grid", default=None, help="comma-separated descending lambda values")

    p = sub.add_parser("mmf", parents=[common], help="fit the feedback mixture model by EM")
    p.add_argument("counts", help="CSV term,count of the feedback documents")
    p.add_argument("collection", help="CSV term,prob of the collection model C")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--compare-closed", action="store_true", help="report the gap to the closed-form estimate")
    p.add_argument("--trace", action="store_true", help="per-iteration log-likelihood and KL to the closed form")

    p = sub.add_parser("experiment", parents=[common], help="compare feedback methods by MAP")
    p.add_argument("--corpus", default=None, help="JSONL corpus")
    p.add_argument("--queries", default=None, help="TSV queries")
    p.add_argument("--qrels", default=None, help="TREC qrels")
    p.add_argument("--synthetic", action="store_true", help="generate the collection instead of reading it")
    _add_synthetic_args(p)
    p.add_argument("--methods", default=None,
                   help="comma-separated: mmf:L, dsm-fixed:L, dsm-, dsm, mmf-grid-best")
    p.add_argument("--baseline", default=None, help="method label to compare against (default: the first)")
    p.add_argument("--resamples", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--fb-terms", type=int, default=None, help="feedback terms kept by count (0 keeps all)")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic corpus")
    _add_synthetic_args(p)
    p.add_argument("--out-dir", required=True)
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.getenv("DSM_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2

    configure_logging(args.log_level)
    try:
        manager = SettingsManager(args.config or os.getenv("DSM_CONFIG"))
        report = COMMANDS[args.command](args, manager)
        emit(render(report, args.format or DEFAULT_FORMATS[args.command]), args.output)
    except DsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
