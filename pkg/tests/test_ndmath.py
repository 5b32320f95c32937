import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from atdoc.ndmath import cosine_sim, softmax_rows, topk_indices


def brute_topk(scores, k, exclude=None):
    order = sorted(
        (i for i in range(len(scores)) if i != exclude), key=lambda i: (-scores[i], i)
    )
    return order[:k]


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]], atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = softmax_rows([[1000.0, 1000.0, 1000.0]])
        np.testing.assert_allclose(out, [[1 / 3] * 3], atol=1e-15)

    def test_hand_value(self):
        e = math.e
        np.testing.assert_allclose(softmax_rows([[1.0, 0.0]]), [[e / (e + 1), 1 / (e + 1)]], atol=1e-15)
        np.testing.assert_allclose(softmax_rows([[1.0, 0.0]]), [[0.7311, 0.2689]], atol=1e-4)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty input"):
            softmax_rows(np.zeros((0, 3)))

    @settings(max_examples=200, deadline=None)
    @given(
        hnp.arrays(
            np.float64,
            hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
            elements=st.floats(-700, 700),
        )
    )
    def test_rows_sum_to_one(self, z):
        p = softmax_rows(z)
        assert np.all(p >= 0)
        assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-12)


class TestCosine:
    def test_orthogonal(self):
        assert cosine_sim([[1.0, 0.0]], [[0.0, 1.0]])[0, 0] == 0.0

    def test_scale_invariant(self):
        assert cosine_sim([[2.0, 0.0]], [[1.0, 0.0]])[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_diagonal(self):
        assert cosine_sim([[1.0, 1.0]], [[1.0, 0.0]])[0, 0] == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_zero_vector(self):
        with pytest.raises(ValueError, match="zero vector has undefined direction"):
            cosine_sim([[0.0, 0.0]], [[1.0, 0.0]])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cosine_sim([[1.0, 0.0]], [[1.0, 0.0, 0.0]])

    def test_self_similarity_diagonal(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((50, 7))
        s = cosine_sim(a, a)
        assert np.all(np.abs(np.diag(s) - 1.0) < 1e-12)
        assert np.all(np.abs(s) <= 1.0)


class TestTopk:
    def test_ordering(self):
        assert topk_indices([0.1, 0.9, 0.5], 2) == [1, 2]

    def test_tie_lowest_index(self):
        assert topk_indices([0.7, 0.7], 1) == [0]

    def test_exclude(self):
        assert topk_indices([0.1, 0.9, 0.5], 2, exclude=1) == [2, 0]

    def test_too_large(self):
        with pytest.raises(ValueError, match="neighborhood larger than bank"):
            topk_indices([0.1, 0.2], 2, exclude=0)

    def test_random_200(self):
        rng = np.random.default_rng(1)
        s = rng.standard_normal(200)
        assert topk_indices(s, 5) == brute_topk(list(s), 5)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            # coarse values force plenty of ties
            s = rng.integers(0, 5, n).astype(float)
            exclude = int(rng.integers(0, n)) if rng.random() < 0.5 else None
            usable = n - (exclude is not None)
            k = int(rng.integers(0, usable + 1))
            assert topk_indices(s, k, exclude) == brute_topk(list(s), k, exclude)
