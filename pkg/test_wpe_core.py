"""
WPE kernel tests: ordinal patterns, vector weights, weighted distributions
and the normalised entropy, checked against the reference oracle in conftest.
"""

import itertools
import math

import numpy as np
import pytest

from analysis.errors import ContractViolation, ShortWindowWarning
from analysis.wpe_core import (
    EmbeddingConfig,
    OrdinalPattern,
    embedding_vectors,
    lehmer_codes,
    ordinal_pattern,
    vector_weight,
    weighted_distribution,
    wpe,
)
from conftest import naive_pattern, naive_wpe

HILL = [1, 2, 3, 2, 1]
# -(2·(3/7)·log2(3/7) + (1/7)·log2(1/7)), evaluated by hand
HILL_RAW_BITS = 1.4488156357251846


class TestEmbeddingConfig:
    def test_defaults(self):
        cfg = EmbeddingConfig()
        assert (cfg.d, cfg.tau) == (6, 3)
        assert cfg.span == 15
        assert cfg.n_patterns == 720
        assert cfg.recommended_window == 3600

    @pytest.mark.parametrize("d", [2, 8])
    def test_dimension_out_of_range(self, d):
        with pytest.raises(ContractViolation):
            EmbeddingConfig(d, 1)

    def test_tau_must_be_positive(self):
        with pytest.raises(ContractViolation):
            EmbeddingConfig(3, 0)

    def test_rejects_non_integers(self):
        with pytest.raises(ContractViolation):
            EmbeddingConfig(3.5, 1)


class TestOrdinalPattern:
    def test_documented_example(self):
        assert str(ordinal_pattern([4, 3, 7])) == "2-1-3"

    def test_sorted_vector(self):
        assert ordinal_pattern([1, 2, 3]).ranks == (1, 2, 3)

    def test_ties_rank_earlier_index_lower(self):
        assert ordinal_pattern([2, 3, 2]).ranks == (1, 3, 2)

    def test_matches_stable_sort_on_all_small_integer_vectors(self):
        for vector in itertools.product([1, 2, 3], repeat=3):
            order = naive_pattern(vector)
            expected = [0] * 3
            for rank, index in enumerate(order, start=1):
                expected[index] = rank
            assert ordinal_pattern(vector).ranks == tuple(expected), vector

    def test_wrong_length(self):
        with pytest.raises(ContractViolation):
            ordinal_pattern([1, 2, 3, 4], d=3)

    def test_invalid_permutation(self):
        with pytest.raises(ContractViolation):
            OrdinalPattern((1, 1, 3))

    def test_codes_are_a_bijection_onto_the_histogram(self):
        for d in (3, 4, 5):
            codes = {OrdinalPattern(tuple(p)).code for p in itertools.permutations(range(1, d + 1))}
            assert codes == set(range(math.factorial(d)))

    def test_from_code_inverts_code(self):
        pattern = OrdinalPattern((3, 1, 4, 2))
        assert OrdinalPattern.from_code(pattern.code, 4) == pattern

    def test_vectorised_codes_agree_with_pattern_codes(self, rng):
        # small integer range forces plenty of ties
        vectors = rng.integers(0, 3, size=(500, 5)).astype(float)
        expected = [ordinal_pattern(v).code for v in vectors]
        assert lehmer_codes(vectors).tolist() == expected


class TestVectorWeight:
    def test_constant_vector(self):
        assert vector_weight([5, 5, 5]) == 0.0

    def test_population_variance(self):
        assert vector_weight([1, 2, 3]) == pytest.approx(2 / 3, abs=1e-15)

    def test_two_element_vector(self):
        assert vector_weight([0, 6], d=2) == 9.0


class TestWeightedDistribution:
    def test_hand_enumerated_window(self):
        dist = weighted_distribution(HILL, EmbeddingConfig(3, 1))
        assert dist.total_weight == pytest.approx(2 / 3 + 2 / 9 + 2 / 3, abs=1e-15)
        # Lehmer codes: 1-2-3 -> 0, 1-3-2 -> 1, 3-2-1 -> 5
        assert dist.probs[0] == pytest.approx(3 / 7, abs=1e-15)
        assert dist.probs[1] == pytest.approx(1 / 7, abs=1e-15)
        assert dist.probs[5] == pytest.approx(3 / 7, abs=1e-15)
        assert dist.probs[[2, 3, 4]].sum() == 0.0

    def test_constant_window(self):
        dist = weighted_distribution([7.0] * 10, EmbeddingConfig(3, 1))
        assert dist.total_weight == 0.0
        assert not dist.defined
        assert np.all(dist.probs == 0.0)

    def test_monotone_window_has_single_pattern(self):
        dist = weighted_distribution(np.arange(1, 101), EmbeddingConfig(4, 2))
        assert dist.probs[0] == 1.0
        assert dist.probs[1:].sum() == 0.0

    def test_probabilities_sum_to_one(self, rng):
        dist = weighted_distribution(rng.random(400), EmbeddingConfig(5, 2))
        assert dist.probs.size == 120
        assert abs(dist.probs.sum() - 1.0) < 1e-9
        assert np.all(dist.probs >= 0)

    def test_window_too_short(self):
        with pytest.raises(ContractViolation):
            weighted_distribution([1, 2, 3, 4], EmbeddingConfig(3, 2))

    def test_embedding_vectors_follow_the_delay(self):
        vectors = embedding_vectors(np.arange(10.0), EmbeddingConfig(3, 2))
        assert vectors.shape == (6, 3)
        assert vectors[0].tolist() == [0.0, 2.0, 4.0]
        assert vectors[-1].tolist() == [5.0, 7.0, 9.0]


@pytest.mark.filterwarnings("ignore::analysis.errors.ShortWindowWarning")
class TestWpe:
    def test_golden_hill_window(self):
        value = wpe(HILL, EmbeddingConfig(3, 1))
        expected = -(2 * (3 / 7) * math.log2(3 / 7) + (1 / 7) * math.log2(1 / 7))
        assert abs(value.raw_bits - expected) < 1e-12
        assert abs(value.raw_bits - HILL_RAW_BITS) < 1e-9
        assert abs(value.normalized - expected / math.log2(6)) < 1e-12

    @pytest.mark.parametrize("d,tau", [(3, 1), (4, 2), (6, 3), (7, 1)])
    def test_monotone_window_is_exactly_zero(self, d, tau):
        assert wpe(np.linspace(-5, 5, 400), EmbeddingConfig(d, tau)).normalized == 0.0
        assert wpe(np.arange(400, 0, -1), EmbeddingConfig(d, tau)).normalized == 0.0

    def test_constant_window_is_undefined(self):
        value = wpe([3.0] * 50, EmbeddingConfig(3, 1))
        assert value.is_undefined
        assert math.isnan(value.as_float())

    def test_iid_uniform_is_near_maximal(self, rng):
        assert wpe(rng.random(50_000), EmbeddingConfig(3, 1)).normalized > 0.99

    def test_matches_reference_oracle(self, rng):
        for _ in range(1000):
            d = int(rng.choice([3, 4]))
            tau = int(rng.integers(1, 4))
            window = rng.normal(size=int(rng.integers(50, 201)))
            if rng.random() < 0.2:
                # quantised windows exercise the tie rule
                window = np.round(window, 1)
            expected = naive_wpe(window, d, tau)
            value = wpe(window, EmbeddingConfig(d, tau))
            assert value.normalized is not None
            assert abs(value.normalized - expected) < 1e-12

    def test_affine_invariance(self, rng):
        cfg = EmbeddingConfig(4, 2)
        for _ in range(500):
            window = rng.random(int(rng.integers(50, 201)))
            reference = wpe(window, cfg).normalized
            for a in (0.5, 3.0, -2.0):
                for b in (-1.0, 0.0, 10.0):
                    assert abs(wpe(a * window + b, cfg).normalized - reference) < 1e-12

    def test_normalised_value_is_bounded(self, rng):
        for d in range(3, 8):
            value = wpe(rng.normal(size=6000), EmbeddingConfig(d, 1))
            assert 0.0 <= value.normalized <= 1.0

    def test_window_too_short(self):
        with pytest.raises(ContractViolation):
            wpe([1.0, 2.0], EmbeddingConfig(3, 1))

    def test_non_finite_samples_rejected(self):
        with pytest.raises(ContractViolation):
            wpe([1.0, np.nan, 2.0, 3.0], EmbeddingConfig(3, 1))


def test_short_window_warns_but_computes():
    with pytest.warns(ShortWindowWarning):
        value = wpe(np.arange(30.0), EmbeddingConfig(3, 1))
    assert value.normalized == 0.0


if __name__ == "__main__":
    pytest.main([__file__])
