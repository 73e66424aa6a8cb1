import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from laber.errors import AllZeroError, LengthMismatchError, NonFiniteError, ZeroProbabilityError
from laber.sampling import (
    PriorityVector,
    expected_squared_norm,
    importance_weights,
    normalize_priorities,
    optimal_distribution,
    sample_indices,
    total_variation,
    uniform,
)

# (1 + 1e-10)^0.6 / ((1 + 1e-10)^0.6 + (4 + 1e-10)^0.6), 40-digit mpmath evaluation
PER_DEFAULT_PROBS = (0.3032695450324359833399287, 0.6967304549675640166600713)


class TestNormalizePriorities:
    def test_counter_example_td_errors(self):
        p = normalize_priorities(PriorityVector([1, 4], alpha=1.0, c=0.0))
        np.testing.assert_allclose(p, [0.2, 0.8], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.6, 1.0])
    def test_equal_values_give_uniform(self, alpha):
        p = normalize_priorities(PriorityVector([7, 7, 7], alpha=alpha, c=0.0))
        np.testing.assert_allclose(p, [1 / 3] * 3, atol=1e-15)

    def test_per_defaults_against_high_precision(self):
        p = normalize_priorities(PriorityVector([1, 4], alpha=0.6, c=1e-10))
        np.testing.assert_allclose(p, PER_DEFAULT_PROBS, rtol=1e-14)

    def test_all_zero_rejected(self):
        with pytest.raises(AllZeroError):
            normalize_priorities(PriorityVector([0, 0, 0], alpha=0.6, c=0.0))

    def test_all_zero_alpha_zero_rejected(self):
        with pytest.raises(AllZeroError):
            normalize_priorities(PriorityVector([0, 0], alpha=0.0, c=0.0))

    def test_floor_rescues_zero_vector(self):
        p = normalize_priorities(PriorityVector([0, 0], alpha=0.6, c=1e-10))
        np.testing.assert_allclose(p, [0.5, 0.5])

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NonFiniteError):
            normalize_priorities(PriorityVector([1.0, bad]))


class TestImportanceWeights:
    def test_uniform_gives_unit_weights(self):
        np.testing.assert_array_equal(importance_weights(uniform(8), 1.0), np.ones(8))

    def test_optimal_counter_example(self):
        np.testing.assert_allclose(importance_weights([2 / 3, 1 / 3], 1.0), [0.75, 1.5], rtol=1e-15)

    def test_half_beta(self):
        w = importance_weights([2 / 3, 1 / 3], 0.5)
        np.testing.assert_allclose(w, [0.8660254037844386467637232, 1.224744871391589049098642], rtol=1e-15)

    def test_zero_probability_rejected(self):
        with pytest.raises(ZeroProbabilityError):
            importance_weights([1.0, 0.0])


class TestOptimalDistribution:
    def test_counter_example(self):
        np.testing.assert_allclose(optimal_distribution([10, 5]), [2 / 3, 1 / 3], rtol=1e-15)

    def test_equal_norms(self):
        np.testing.assert_allclose(optimal_distribution([3, 3, 3, 3]), uniform(4))

    def test_all_zero(self):
        with pytest.raises(AllZeroError):
            optimal_distribution([0, 0])

    def test_beats_random_search(self):
        rng = np.random.default_rng(11)
        g = rng.exponential(size=8)
        best = expected_squared_norm(optimal_distribution(g), g)
        candidates = rng.dirichlet(np.ones(8), size=10_000)
        values = np.array([expected_squared_norm(q, g) for q in candidates])
        assert best <= values.min()
        # local search around p* as well, where a wrong optimum would show up
        p_star = optimal_distribution(g)
        for _ in range(1000):
            q = p_star * np.exp(rng.normal(scale=0.05, size=8))
            assert best <= expected_squared_norm(q / q.sum(), g)


class TestExpectedSquaredNorm:
    @pytest.mark.parametrize(
        "p, expected",
        [((0.5, 0.5), 62.5), ((2 / 3, 1 / 3), 56.25), ((0.2, 0.8), 132.8125)],
    )
    def test_counter_example_values(self, p, expected):
        assert expected_squared_norm(p, [10, 5]) == pytest.approx(expected, abs=1e-12)

    def test_zero_probability_on_support(self):
        with pytest.raises(ZeroProbabilityError):
            expected_squared_norm([1.0, 0.0], [1.0, 2.0])

    def test_zero_probability_off_support_is_fine(self):
        assert expected_squared_norm([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            expected_squared_norm([1.0], [1.0, 2.0])


class TestTotalVariation:
    def test_identity(self):
        assert total_variation([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_disjoint(self):
        assert total_variation([1, 0], [0, 1]) == 2.0

    def test_arithmetic(self):
        assert total_variation([0.2, 0.8], [0.5, 0.5]) == pytest.approx(0.6, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            total_variation([1.0], [0.5, 0.5])


class TestSampleIndices:
    def test_point_mass(self):
        p = np.zeros(6)
        p[4] = 1.0
        for method in ("inverse_cdf", "sumtree"):
            idx = sample_indices(p, 500, np.random.default_rng(0), method)
            assert np.all(idx == 4)

    def test_uniform_frequencies(self):
        n = 1_000_000
        idx = sample_indices(uniform(4), n, np.random.default_rng(1))
        freq = np.bincount(idx, minlength=4) / n
        sigma = np.sqrt(0.25 * 0.75 / n)
        assert np.all(np.abs(freq - 0.25) < 3 * sigma)

    @pytest.mark.parametrize("seed", range(5))
    def test_methods_agree(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = rng.dirichlet(np.ones(37) * 0.5)
        a = sample_indices(p, 5000, np.random.default_rng(seed), "inverse_cdf")
        b = sample_indices(p, 5000, np.random.default_rng(seed), "sumtree")
        np.testing.assert_array_equal(a, b)


# -- properties -----------------------------------------------------------------

positive_norms = arrays(
    np.float64,
    st.integers(1, 32),
    elements=st.one_of(st.just(0.0), st.floats(1e-6, 1e3)),
).filter(lambda g: g.max() > 0)


@settings(max_examples=200, deadline=None)
@given(g=positive_norms, data=st.data())
def test_optimality_property(g, data):
    q = data.draw(arrays(np.float64, g.size, elements=st.floats(1e-3, 1.0)))
    q = q / q.sum()
    p_star = optimal_distribution(g)
    best = expected_squared_norm(p_star, g)
    other = expected_squared_norm(q, g)
    assert best <= other * (1 + 1e-12)
    if np.allclose(q[g > 0] / q[g > 0].sum(), p_star[g > 0], rtol=1e-9, atol=0) and np.all(q[g == 0] == 0):
        assert other == pytest.approx(best)


@settings(max_examples=200, deadline=None)
@given(g=positive_norms, scale=st.floats(1e-6, 1e6))
def test_scale_invariance(g, scale):
    np.testing.assert_allclose(optimal_distribution(scale * g), optimal_distribution(g), rtol=1e-12, atol=1e-300)


@settings(max_examples=200, deadline=None)
@given(g=positive_norms)
def test_distributions_normalized(g):
    assert abs(optimal_distribution(g).sum() - 1) <= 1e-12
    assert abs(normalize_priorities(PriorityVector(g, alpha=0.6, c=1e-10)).sum() - 1) <= 1e-12


def test_equality_iff_optimal():
    g = np.array([3.0, 1.0, 2.0])
    p_star = optimal_distribution(g)
    assert expected_squared_norm(p_star, g) == pytest.approx(expected_squared_norm(p_star.copy(), g))
    q = p_star + np.array([1e-3, -1e-3, 0.0])
    assert expected_squared_norm(q, g) > expected_squared_norm(p_star, g)


def test_weighted_mean_independent_of_p():
    rng = np.random.default_rng(5)
    n, d = 12, 7
    grads = rng.normal(size=(n, d))
    reference = (uniform(n) * importance_weights(uniform(n)))[:, None] * grads
    reference = reference.sum(axis=0)
    for _ in range(100):
        p = rng.dirichlet(np.ones(n)) + 1e-6
        p /= p.sum()
        value = ((p * importance_weights(p))[:, None] * grads).sum(axis=0)
        np.testing.assert_allclose(value, reference, rtol=0, atol=1e-10)


def test_counter_example_td_sampling_is_worse():
    g = [10, 5]
    p_td = normalize_priorities(PriorityVector([1, 4], alpha=1.0, c=0.0))
    assert expected_squared_norm(p_td, g) > expected_squared_norm(uniform(2), g)


@settings(max_examples=200, deadline=None)
@given(data=st.data(), n=st.integers(1, 20))
def test_tv_metric_properties(data, n):
    def draw():
        v = data.draw(arrays(np.float64, n, elements=st.floats(0.0, 1.0)))
        v = v + 1e-9
        return v / v.sum()

    p, q, r = draw(), draw(), draw()
    d = total_variation(p, q)
    assert 0.0 <= d <= 2.0 + 1e-12
    assert d == total_variation(q, p)
    assert total_variation(p, r) <= d + total_variation(q, r) + 1e-12
