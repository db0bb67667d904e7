#!/usr/bin/env python3
"""
Feedback Method Sweep - See DSM and MMF side by side on synthetic collections!

This script will:
1. Compare MMF(lambda) with DSM at the same fixed lambda (should be very close)
2. Compare adaptive DSM with MMF at its best fixed lambda over many seeds
3. Print the MAP numbers and the win rate
"""

import argparse
import logging
import sys

from dsm.harness import best_fixed_lambda, run_method
from dsm.schemas import FeedbackConfig
from dsm.settings import SettingsManager
from dsm.synth import generate_corpus

FIXED_LAMBDAS = (0.1, 0.2, 0.3, 0.5)


def build_collection(settings, seed, noise_spread):
    params = vars(settings.synthetic).copy()
    params["noise_spread"] = noise_spread
    synthetic = generate_corpus(seed=seed, **params)
    return synthetic.to_corpus(), list(synthetic.queries), synthetic.qrels


def shared_options(settings):
    return {
        "top_k": settings.feedback.top_k,
        "fb_terms": settings.feedback.fb_terms or None,
        "alpha": settings.feedback.alpha,
        "mu": settings.retrieval.mu,
        "em_tol": settings.feedback.em_tol,
        "em_max_iter": settings.feedback.em_max_iter,
    }


def fixed_lambda_check(settings, seed):
    """MMF(lambda) vs DSM with the same fixed lambda"""
    print(f"\n1️⃣ MMF vs DSM at fixed lambda (seed {seed})")
    print("=" * 45)
    corpus, queries, qrels = build_collection(settings, seed, 0.0)
    shared = shared_options(settings)
    depth = settings.retrieval.depth
    worst = 0.0
    for lam in FIXED_LAMBDAS:
        mmf = run_method(corpus, queries, qrels, FeedbackConfig(method="mmf", lam=lam, **shared), depth)
        fixed = run_method(corpus, queries, qrels, FeedbackConfig(method="dsm-fixed", lam=lam, **shared), depth)
        rel = abs(fixed.map - mmf.map) / mmf.map * 100.0 if mmf.map > 0 else 0.0
        worst = max(worst, rel)
        print(f"   lambda={lam:<4}  MMF={mmf.map:.4f}  DSM-fixed={fixed.map:.4f}  diff={rel:.2f}%")
    return worst


def adaptive_sweep(settings, seeds, noise_spread):
    """Adaptive DSM vs MMF at its best fixed lambda, one collection per seed"""
    print(f"\n2️⃣ Adaptive DSM vs best fixed-lambda MMF ({len(seeds)} seeds, noise spread {noise_spread})")
    print("=" * 45)
    shared = shared_options(settings)
    depth = settings.retrieval.depth
    wins = 0
    for seed in seeds:
        corpus, queries, qrels = build_collection(settings, seed, noise_spread)
        template = FeedbackConfig(method="mmf", lam=0.5, **shared)
        best, mmf = best_fixed_lambda(corpus, queries, qrels, template, depth=depth)
        adaptive = run_method(corpus, queries, qrels, FeedbackConfig(method="dsm", **shared), depth)
        won = adaptive.map >= mmf.map
        wins += won
        mark = "✅" if won else "❌"
        print(f"   {mark} seed={seed:<3} DSM={adaptive.map:.4f}  MMF(best lambda={best.lam:g})={mmf.map:.4f}")
    return wins / len(seeds)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--first-seed", type=int, default=1)
    parser.add_argument("--noise-spread", type=float, default=0.4)
    parser.add_argument("--config", default=None)
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    settings = SettingsManager(args.config).settings

    print("🚀 FEEDBACK METHOD SWEEP")
    print("=" * 45)
    print(f"Collection: {settings.synthetic.num_docs} docs, {settings.synthetic.num_queries} queries, "
          f"vocabulary {settings.synthetic.vocab_size}")

    worst = fixed_lambda_check(settings, settings.experiment.seed)
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    win_rate = adaptive_sweep(settings, seeds, args.noise_spread)

    print("\n🎯 SUMMARY")
    print("=" * 30)
    print(f"Largest MMF vs DSM-fixed MAP difference: {worst:.2f}% (target <= 1%)")
    print(f"Adaptive DSM >= best fixed-lambda MMF on {win_rate:.0%} of seeds (target >= 70%)")
    return 0 if worst <= 1.0 and win_rate >= 0.7 else 1


if __name__ == "__main__":
    sys.exit(main())
