import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from dsm.dist_core import (
    DerivativeKind,
    TermDistribution,
    Vocabulary,
    divergence_derivative,
    js_divergence,
    kl_divergence,
    l1_distance,
    linear_combine,
    normalize,
    pearson_correlation,
    separated_entries,
    symmetrized_kl,
)
from dsm.errors import (
    AllZeroError,
    InfiniteDivergenceError,
    InputValidationError,
    LambdaOutOfRangeError,
    NegativeEntryError,
    NegativeWeightError,
    VocabMismatchError,
)
from dsm.separation import separate

from .conftest import dist

weights = st.lists(st.floats(min_value=0.0, max_value=100.0), min_size=2, max_size=30)
positive_weights = st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=2, max_size=30)


def _pair(draw_weights, other):
    vocab = Vocabulary.synthetic(len(draw_weights))
    return normalize(draw_weights, vocab), normalize(other[: len(draw_weights)], vocab)


class TestVocabulary:
    def test_index_follows_order(self):
        vocab = Vocabulary.from_terms(["x", "y", "z"])
        assert vocab.index == {"x": 0, "y": 1, "z": 2}
        assert "y" in vocab and "q" not in vocab
        assert len(vocab) == 3

    def test_rejects_duplicates_and_tiny(self):
        with pytest.raises(InputValidationError):
            Vocabulary(("a", "a"))
        with pytest.raises(InputValidationError):
            Vocabulary(("a",))

    def test_restrict_keeps_order(self):
        vocab = Vocabulary(("a", "b", "c", "d"))
        assert vocab.restrict(["d", "b"]).terms == ("b", "d")
        with pytest.raises(VocabMismatchError):
            vocab.restrict(["zz", "a"])


class TestTermDistribution:
    def test_probs_are_read_only(self):
        d = dist(0.5, 0.3, 0.2)
        with pytest.raises(ValueError):
            d.probs[0] = 0.9

    def test_rejects_bad_vectors(self):
        vocab = Vocabulary(("a", "b"))
        with pytest.raises(InputValidationError):
            TermDistribution(vocab, [0.5, 0.6])
        with pytest.raises(NegativeWeightError):
            TermDistribution(vocab, [1.5, -0.5])
        with pytest.raises(VocabMismatchError):
            TermDistribution(vocab, [0.2, 0.3, 0.5])

    def test_from_mapping_and_restrict(self):
        vocab = Vocabulary(("a", "b", "c"))
        d = TermDistribution.from_mapping({"a": 2, "c": 2}, vocab)
        assert d.as_dict() == {"a": 0.5, "b": 0.0, "c": 0.5}
        assert d.support_size() == 2
        sub = dist(0.5, 0.3, 0.2).restrict(Vocabulary(("b", "c")))
        assert_allclose(sub.probs, [0.6, 0.4])

    def test_smooth_fills_zeros(self):
        smoothed = dist(1.0, 0.0, 0.0).smooth(1e-3)
        assert smoothed.support_size() == 3
        assert math.isclose(smoothed.probs.sum(), 1.0)


class TestNormalize:
    def test_examples(self):
        vocab = Vocabulary(("a", "b"))
        assert_allclose(normalize([2, 2], vocab).probs, [0.5, 0.5])
        assert_allclose(normalize([3, 1], vocab).probs, [0.75, 0.25])

    def test_all_zero(self):
        with pytest.raises(AllZeroError):
            normalize([0, 0], Vocabulary(("a", "b")))

    def test_negative(self):
        with pytest.raises(NegativeWeightError):
            normalize([1, -1], Vocabulary(("a", "b")))

    @given(weights)
    def test_closure(self, w):
        assume(sum(w) > 1e-6)
        d = normalize(w, Vocabulary.synthetic(len(w)))
        assert abs(d.probs.sum() - 1.0) <= 1e-9
        assert (d.probs >= 0).all()


class TestLinearCombine:
    def test_example(self):
        combined = linear_combine(dist(0, 0.7, 0.3), dist(0.5, 0.3, 0.2), 0.6)
        assert_allclose(combined.probs, [0.2, 0.54, 0.26], atol=1e-12)

    def test_identity_and_idempotence(self):
        F, G = dist(0.1, 0.2, 0.7), dist(0.3, 0.3, 0.4)
        assert_allclose(linear_combine(F, G, 1.0).probs, F.probs)
        assert_allclose(linear_combine(F, F, 0.37).probs, F.probs)

    def test_lambda_range(self):
        with pytest.raises(LambdaOutOfRangeError):
            linear_combine(dist(0.1, 0.2, 0.7), dist(0.3, 0.3, 0.4), 1.5)


class TestPearson:
    def test_self_correlation(self):
        assert math.isclose(pearson_correlation(dist(0.5, 0.3, 0.2), dist(0.5, 0.3, 0.2)), 1.0)

    def test_reversed(self):
        assert pearson_correlation(dist(0.5, 0.3, 0.2), dist(0.2, 0.3, 0.5)) == pytest.approx(-0.9286, abs=1e-4)

    def test_uniform_is_undefined(self):
        assert pearson_correlation(dist(1 / 3, 1 / 3, 1 / 3), dist(0.5, 0.3, 0.2)) is None


class TestDivergences:
    def test_kl_examples(self):
        P, Q = dist(0.5, 0.5), dist(0.25, 0.75)
        assert kl_divergence(P, P) == 0.0
        assert kl_divergence(P, Q) == pytest.approx(0.14384, abs=1e-5)

    def test_kl_disjoint_support(self):
        with pytest.raises(InfiniteDivergenceError):
            kl_divergence(dist(1.0, 0.0), dist(0.0, 1.0))

    def test_symmetrized(self):
        P, Q = dist(0.5, 0.5), dist(0.25, 0.75)
        assert symmetrized_kl(P, P) == 0.0
        assert symmetrized_kl(P, Q) == pytest.approx(0.27465, abs=1e-5)

    def test_js_examples(self):
        assert js_divergence(dist(0.3, 0.7), dist(0.3, 0.7)) == 0.0
        assert js_divergence(dist(1.0, 0.0), dist(0.0, 1.0)) == pytest.approx(math.log(2))

    @given(positive_weights, positive_weights)
    def test_gibbs_inequality(self, a, b):
        n = min(len(a), len(b))
        P, Q = _pair(a[:n], b)
        assert kl_divergence(P, Q) >= 0.0

    @given(weights, weights)
    def test_js_bounded_and_symmetric(self, a, b):
        n = min(len(a), len(b))
        assume(sum(a[:n]) > 1e-6 and sum(b[:n]) > 1e-6)
        P, Q = _pair(a[:n], b)
        value = js_divergence(P, Q)
        assert 0.0 <= value <= math.log(2)
        assert value == pytest.approx(js_divergence(Q, P), abs=1e-12)

    @settings(max_examples=50)
    @given(positive_weights, positive_weights, st.floats(min_value=0.05, max_value=1.0))
    def test_separation_inverts_mixing(self, a, b, lam):
        n = min(len(a), len(b))
        l, I_S = _pair(a[:n], b)
        M = linear_combine(l, I_S, lam)
        assert l1_distance(separate(M, I_S, lam), l) <= 1e-8


class TestDerivatives:
    M = dist(0.5, 0.3, 0.2)
    I_S = dist(0.2, 0.3, 0.5)

    @staticmethod
    def _curve(kind, M, I_S):
        def value(xi):
            lhat = TermDistribution(M.vocab, separated_entries(M, I_S, xi))
            if kind is DerivativeKind.KL:
                return kl_divergence(lhat, I_S)
            if kind is DerivativeKind.SKL_REVERSE:
                return kl_divergence(I_S, lhat)
            if kind is DerivativeKind.SKL:
                return symmetrized_kl(lhat, I_S)
            return js_divergence(lhat, I_S)
        return value

    @pytest.mark.parametrize("kind", list(DerivativeKind))
    def test_matches_central_difference(self, kind):
        f = self._curve(kind, self.M, self.I_S)
        h = 1e-6
        numeric = (f(1.2 + h) - f(1.2 - h)) / (2 * h)
        analytic = divergence_derivative(kind, self.M, self.I_S, 1.2)
        assert analytic > 0
        assert abs(analytic - numeric) <= 1e-5 * abs(numeric)

    @pytest.mark.parametrize("kind", list(DerivativeKind))
    def test_zero_when_mixture_is_seed(self, kind):
        assert divergence_derivative(kind, self.I_S, self.I_S, 1.5) == 0.0

    def test_random_instances(self):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(100):
            m = int(rng.integers(3, 40))
            vocab = Vocabulary.synthetic(m)
            M = normalize(rng.dirichlet(np.ones(m)), vocab)
            I_S = normalize(rng.dirichlet(np.ones(m)), vocab)
            # stay well inside [1, 1 / lambda_L]
            xi_max = 1.0 / max(1e-12, float(np.max(1.0 - M.probs / I_S.probs)))
            xi = 1.0 + 0.5 * (min(xi_max, 50.0) - 1.0)
            for kind in DerivativeKind:
                f = self._curve(kind, M, I_S)
                numeric = (f(xi + h) - f(xi - h)) / (2 * h)
                analytic = divergence_derivative(kind, M, I_S, xi)
                assert analytic > 0
                assert abs(analytic - numeric) <= 1e-5 * abs(numeric)

    def test_infinite_at_boundary(self):
        # lambda_L = 0.5, so xi = 2 zeroes the first entry
        M, I_S = dist(0.25, 0.75), dist(0.5, 0.5)
        assert divergence_derivative(DerivativeKind.SKL_REVERSE, M, I_S, 2.0) == math.inf
        assert divergence_derivative(DerivativeKind.KL, M, I_S, 2.0) == math.inf

    def test_past_boundary_raises(self):
        with pytest.raises(NegativeEntryError):
            divergence_derivative(DerivativeKind.KL, dist(0.25, 0.75), dist(0.5, 0.5), 3.0)

    def test_xi_below_one(self):
        with pytest.raises(LambdaOutOfRangeError):
            divergence_derivative(DerivativeKind.JS, self.M, self.I_S, 0.5)
