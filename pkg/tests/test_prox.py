import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sortedl1.model import INF, validate_weights
from sortedl1.prox import fixed_point_residual, prox_oracle, prox_sorted_l1, scalar_threshold_value

from conftest import random_weights, vectors, weight_sequences


def objective(u, x, w, beta):
    from sortedl1.penalty import eval_sorted_l1

    return beta * eval_sorted_l1(u, w) + 0.5 * float(np.dot(u - x, u - x))


class TestProxExamples:
    def test_tie_canonical(self):
        w = validate_weights([0, 1])
        res = prox_sorted_l1([1, 1], w, 1.0)
        assert res.u.tolist() == [1.0, 0.0]
        assert objective(np.array([0.0, 1.0]), np.array([1.0, 1.0]), w, 1.0) == res.objective
        assert list(res.permutation.order) == [0, 1]

    def test_zero(self):
        res = prox_sorted_l1(np.zeros(3), validate_weights([1, 2, 3]), 0.7)
        assert res.u.tolist() == [0, 0, 0]
        assert res.objective == 0.0

    def test_two(self):
        res = prox_sorted_l1([3, -1], validate_weights([1, 2]), 1.0)
        assert res.u.tolist() == [2.0, 0.0]

    @pytest.mark.parametrize("x,lam", [([1, 1], [0, 1]), ([0, 0, 0], [1, 2, 3]), ([3, -1], [1, 2])])
    def test_oracle_on_examples(self, x, lam):
        w = validate_weights(lam)
        assert prox_sorted_l1(x, w, 1.0).objective == pytest.approx(prox_oracle(x, w, 1.0), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            prox_sorted_l1([1, 2], validate_weights([1]), 1.0)
        with pytest.raises(ValueError):
            prox_sorted_l1([1], validate_weights([1]), 0.0)


class TestOracle:
    def test_equal_weights_sum_huber(self, rng):
        x = rng.standard_normal(5)
        w = validate_weights([0.7] * 5)
        assert prox_oracle(x, w, 1.0) == pytest.approx(sum(scalar_threshold_value(t, 0.7) for t in x), abs=1e-14)

    @pytest.mark.parametrize("t,c,beta", [(0.3, 1.0, 1.0), (2.5, 1.0, 1.0), (-4.0, 0.5, 3.0)])
    def test_scalar(self, t, c, beta):
        bc = beta * c
        expected = 0.5 * t * t if abs(t) < bc else bc * abs(t) - 0.5 * bc * bc
        assert prox_oracle([t], validate_weights([c]), beta) == pytest.approx(expected, abs=1e-15)

    def test_too_large(self):
        with pytest.raises(ValueError):
            prox_oracle(np.zeros(9), validate_weights(np.ones(9)), 1.0)

    def test_infinite_weight_forces_zero(self):
        w = validate_weights([0, INF])
        assert prox_oracle([3, 1], w, 1.0) == 0.5
        assert prox_sorted_l1([3, 1], w, 1.0).u.tolist() == [3.0, 0.0]


class TestScalarThreshold:
    def test_values(self):
        assert scalar_threshold_value(0.5, 1) == 0.125
        assert scalar_threshold_value(2, 1) == 1.5
        assert scalar_threshold_value(-7.25, 0) == 0.0
        assert scalar_threshold_value(3.0, INF) == 4.5

    def test_matches_direct_minimization(self):
        grid = np.linspace(-5, 5, 200001)
        for x, lam in [(0.5, 1.0), (2.0, 1.0), (-3.3, 0.8)]:
            direct = np.min(lam * np.abs(grid) + 0.5 * (grid - x) ** 2)
            assert scalar_threshold_value(x, lam) == pytest.approx(direct, abs=1e-8)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            scalar_threshold_value(1.0, -1.0)


class TestProxProperties:
    def test_matches_oracle_random(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 7))
            x = rng.standard_normal(n) * rng.choice([0.1, 1, 10])
            if rng.random() < 0.3:
                x[rng.integers(0, n)] = x[0]  # ties
            w = random_weights(rng, n)
            beta = float(rng.uniform(0.05, 3.0))
            res = prox_sorted_l1(x, w, beta)
            assert res.objective == pytest.approx(prox_oracle(x, w, beta), abs=1e-10)
            assert res.objective == pytest.approx(objective(res.u, x, w, beta), abs=1e-12)

    @given(st.integers(1, 9).flatmap(lambda n: st.tuples(vectors(n), weight_sequences(n))),
           st.floats(0.01, 5.0))
    def test_sign_magnitude_order(self, args, beta):
        x, w = args
        u = prox_sorted_l1(x, w, beta).u
        assert np.all((np.sign(u) == np.sign(x)) | (u == 0))
        assert np.all(np.abs(u) <= np.abs(x))
        assert np.max(np.abs(u), initial=0) <= np.max(np.abs(x), initial=0)
        ax, au = np.abs(x), np.abs(u)
        bigger = ax[:, None] > ax[None, :]
        assert np.all((au[:, None] >= au[None, :])[bigger])

    @given(st.integers(1, 12).flatmap(lambda n: vectors(n)), st.floats(0.0, 3.0), st.floats(0.01, 5.0))
    def test_soft_threshold_reduction(self, x, c, beta):
        w = validate_weights([max(c, 1e-3)] * x.size)
        c = w.values[0]
        expected = np.sign(x) * np.maximum(np.abs(x) - beta * c, 0.0)
        assert np.array_equal(prox_sorted_l1(x, w, beta).u, expected)

    @given(st.integers(1, 12).flatmap(lambda n: st.tuples(vectors(n), st.integers(0, n))), st.floats(0.01, 5.0))
    def test_hard_threshold_reduction(self, args, beta):
        x, k = args
        if k == x.size:
            k -= 1  # all-zero weights with no tail are not a valid sequence
        w = validate_weights([0.0] * k + [INF] * (x.size - k))
        keep = np.argsort(-np.abs(x), kind="stable")[:k]
        expected = np.zeros_like(x)
        expected[keep] = x[keep]
        assert np.array_equal(prox_sorted_l1(x, w, beta).u, expected)


class TestFixedPointResidual:
    def test_zero(self):
        w = validate_weights([1, 2])
        assert fixed_point_residual(np.zeros(2), w, 1.0, np.zeros(2)) == 0.0

    def test_below_threshold(self, rng):
        u = rng.uniform(-0.4, 0.4, 6)
        w = validate_weights(np.linspace(0.5, 1.0, 6))
        assert fixed_point_residual(u, w, 1.0, np.zeros(6)) == pytest.approx(np.max(np.abs(u)))


class TestSortedThresholdKernel:
    @given(st.integers(1, 12).flatmap(lambda n: st.tuples(vectors(n), weight_sequences(n))),
           st.floats(0.01, 5.0))
    def test_matches_prox(self, args, beta):
        from sortedl1.penalty import eval_sorted_l1
        from sortedl1.prox import sorted_threshold

        x, w = args
        lam = np.ascontiguousarray(w.finite)
        u, pen = sorted_threshold(x, lam, beta * lam)
        assert np.array_equal(u, prox_sorted_l1(x, w, beta).u)
        assert pen == pytest.approx(eval_sorted_l1(u, w), rel=1e-13, abs=1e-300)
