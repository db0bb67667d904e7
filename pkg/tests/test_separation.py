import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dsm.dist_core import Vocabulary, l1_distance, linear_combine, normalize, pearson_correlation
from dsm.errors import GridError, LambdaBelowBoundError, LambdaOutOfRangeError
from dsm.separation import (
    LAMBDA_FLOOR,
    LambdaStrategy,
    StrategyKind,
    default_grid,
    divergence_profile,
    dsm,
    estimate_lambda_min_rho2,
    lambda_lower_bound,
    separate,
    zero_correlation_lambda,
)
from dsm.synth import make_mixture, random_distribution, with_small_entry

from .conftest import dist


def _random_pair(rng, m):
    vocab = Vocabulary.synthetic(m)
    return normalize(rng.dirichlet(np.ones(m)), vocab), normalize(rng.dirichlet(np.ones(m)), vocab)


class TestLowerBound:
    def test_identical_inputs_hit_the_floor(self):
        I_S = dist(0.5, 0.3, 0.2)
        assert lambda_lower_bound(I_S, I_S) == LAMBDA_FLOOR

    def test_exact_mixture(self, exact_mixture):
        assert lambda_lower_bound(*exact_mixture) == pytest.approx(0.6, abs=1e-12)

    def test_two_terms(self):
        assert lambda_lower_bound(dist(0.5, 0.5), dist(0.8, 0.2)) == pytest.approx(0.375, abs=1e-12)

    def test_recovers_mixing_weight(self):
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            m = int(rng.integers(3, 501))
            zeros = int(rng.integers(1, m))
            R = random_distribution(m, zeros, seed=trial)
            I_seed = random_distribution(m, 0, seed=10_000 + trial)
            lam = 1.0 - rng.random()
            mixture = make_mixture(R, R, I_seed, 1.0, lam)
            bound = lambda_lower_bound(mixture.M, I_seed)
            assert abs(bound - lam) <= 1e-9
            assert l1_distance(separate(mixture.M, I_seed, bound), mixture.l_true) <= 1e-9

    def test_small_entries_stay_close(self):
        means = []
        for delta in (1e-3, 1e-4, 1e-5):
            errors = []
            for seed in range(100):
                rng = np.random.default_rng(seed)
                m = int(rng.integers(3, 51))
                I_S = random_distribution(m, 0, seed=500 + seed)
                l_true = with_small_entry(random_distribution(m, 0, seed=seed), delta, int(np.argmax(I_S.probs)))
                lam = float(rng.uniform(0.1, 1.0))
                M = linear_combine(l_true, I_S, lam)
                error = l1_distance(separate(M, I_S, lambda_lower_bound(M, I_S)), l_true)
                assert error <= 10 * delta * m
                errors.append(error)
            means.append(np.mean(errors))
        assert means[0] > means[1] > means[2]


class TestSeparate:
    def test_lambda_one_is_identity(self, crossing_pair):
        M, I_S = crossing_pair
        assert_allclose(separate(M, I_S, 1.0).probs, M.probs)

    def test_exact_mixture(self, exact_mixture):
        assert_allclose(separate(*exact_mixture, 0.6).probs, [0.0, 0.7, 0.3], atol=1e-12)

    def test_zero_lands_on_the_bound_index(self):
        assert_allclose(separate(dist(0.5, 0.5), dist(0.8, 0.2), 0.375).probs, [0.0, 1.0], atol=1e-12)

    def test_below_bound(self, exact_mixture):
        with pytest.raises(LambdaBelowBoundError):
            separate(*exact_mixture, 0.3)

    def test_lambda_range(self, exact_mixture):
        with pytest.raises(LambdaOutOfRangeError):
            separate(*exact_mixture, 1.2)


class TestMinSquaredCorrelation:
    def test_zero_correlation_point(self, crossing_pair):
        assert zero_correlation_lambda(*crossing_pair) == pytest.approx(1.9286, abs=1e-4)

    def test_zero_correlation_identical(self):
        I_S = dist(0.5, 0.3, 0.2)
        assert zero_correlation_lambda(I_S, I_S) == 0.0

    def test_uniform_seed(self):
        assert zero_correlation_lambda(dist(0.5, 0.3, 0.2), dist(1 / 3, 1 / 3, 1 / 3)) is None

    def test_endpoint_when_outside_interval(self, crossing_pair):
        assert estimate_lambda_min_rho2(*crossing_pair) == 1.0

    def test_identical_inputs_keep_the_mixture(self):
        I_S = dist(0.5, 0.3, 0.2)
        result = dsm(I_S, I_S, LambdaStrategy.min_squared_correlation())
        assert_allclose(result.output.probs, I_S.probs, atol=1e-12)

    def test_matches_grid_search(self):
        rng = np.random.default_rng(5)
        interior = 0
        for _ in range(500):
            M, I_S = _random_pair(rng, int(rng.integers(3, 51)))
            bound = lambda_lower_bound(M, I_S)
            chosen = estimate_lambda_min_rho2(M, I_S)

            grid = np.append(np.arange(1.0, bound, -1e-3), bound)
            lhat = I_S.probs + (M.probs - I_S.probs) / grid[:, np.newaxis]
            lhat = np.clip(lhat, 0.0, None)
            lhat /= lhat.sum(axis=1, keepdims=True)
            centred = lhat - 1.0 / M.size
            seed = I_S.probs - 1.0 / M.size
            rho = centred @ seed / np.sqrt((centred ** 2).sum(axis=1) * (seed @ seed))
            assert abs(chosen - grid[int(np.argmin(rho ** 2))]) <= 1e-3 + 1e-12

            zero = zero_correlation_lambda(M, I_S)
            if bound <= zero <= 1.0:
                interior += 1
                assert abs(pearson_correlation(separate(M, I_S, chosen), I_S)) <= 1e-9
        assert interior > 0


class TestDsm:
    def test_fixed_one(self, crossing_pair):
        M, I_S = crossing_pair
        result = dsm(M, I_S, LambdaStrategy.fixed(1.0))
        assert_allclose(result.output.probs, M.probs)
        assert result.lambda_used == 1.0

    def test_lower_bound(self, exact_mixture):
        result = dsm(*exact_mixture, LambdaStrategy.lower_bound())
        assert_allclose(result.output.probs, [0.0, 0.7, 0.3], atol=1e-12)
        assert result.lambda_used == pytest.approx(0.6)
        assert result.diagnostics.infinite  # reverse KL blows up on the new zero

    def test_fixed_below_bound_is_clamped(self, exact_mixture):
        result = dsm(*exact_mixture, LambdaStrategy.fixed(0.1))
        assert result.lambda_used == pytest.approx(0.6)
        assert result.lambda_clamped


class TestStrategy:
    @pytest.mark.parametrize("text, kind, label", [
        ("dsm-", StrategyKind.LOWER_BOUND, "dsm-"),
        ("min-rho2", StrategyKind.MIN_SQUARED_CORRELATION, "dsm"),
        ("dsm-fixed:0.3", StrategyKind.FIXED, "dsm-fixed:0.3"),
    ])
    def test_parse(self, text, kind, label):
        strategy = LambdaStrategy.parse(text)
        assert strategy.kind is kind
        assert strategy.label == label

    @pytest.mark.parametrize("text", ["dsm-fixed", "dsm:0.4", "rm3", "fixed:1.5"])
    def test_parse_rejects(self, text):
        with pytest.raises(LambdaOutOfRangeError):
            LambdaStrategy.parse(text)


class TestProfile:
    def test_single_point(self, crossing_pair):
        M, I_S = crossing_pair
        (row,) = divergence_profile(M, I_S, [1.0])
        assert row.lambda_hat == 1.0
        assert row.rho == pytest.approx(pearson_correlation(M, I_S))

    def test_monotone_on_fixture(self, crossing_pair):
        grid = [round(1.0 - 0.05 * i, 10) for i in range(9)]
        rows = divergence_profile(*crossing_pair, grid)
        rho = [r.rho for r in rows]
        assert all(b < a for a, b in zip(rho, rho[1:]))
        for column in ("kl", "skl", "js"):
            values = [getattr(r, column) for r in rows]
            assert all(b > a for a, b in zip(values, values[1:]))
        assert rows[-1].infinite and math.isinf(rows[-1].skl)

    def test_identical_inputs_are_flat(self):
        I_S = dist(0.5, 0.3, 0.2)
        rows = divergence_profile(I_S, I_S)
        assert len(rows) == 64
        for r in rows:
            assert r.kl == pytest.approx(0.0, abs=1e-12)
            assert r.js == pytest.approx(0.0, abs=1e-12)
            assert r.rho == pytest.approx(1.0)

    def test_grid_outside_range(self, crossing_pair):
        with pytest.raises(GridError):
            divergence_profile(*crossing_pair, [1.0, 0.5])

    def test_grid_must_descend(self, crossing_pair):
        with pytest.raises(GridError):
            divergence_profile(*crossing_pair, [0.7, 0.9])

    def test_default_grid_endpoints(self, crossing_pair):
        grid = default_grid(*crossing_pair)
        assert grid[0] == 1.0
        assert grid[-1] == lambda_lower_bound(*crossing_pair)
        assert len(grid) == 64

    def test_random_profiles_are_monotone(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            M, I_S = _random_pair(rng, int(rng.integers(3, 51)))
            rows = divergence_profile(M, I_S)
            rho = np.array([r.rho for r in rows])
            assert np.all(np.diff(rho) < 1e-12)
            assert rho[-1] < rho[0]
            for column in ("kl", "skl", "js"):
                values = np.array([getattr(r, column) for r in rows])
                assert np.all(np.diff(values) > -1e-12)
                assert values[-1] >= values.max() - 1e-12
