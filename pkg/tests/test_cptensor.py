"""Factored value tables: evaluation, gradients, materialization, layout."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgcoord.cptensor import (
    MAX_DENSE_SIZE,
    CpTensor,
    DenseTensor,
    cp_evaluate,
    cp_evaluate_batch,
    cp_evaluate_batch_grad,
    cp_evaluate_grad,
    cp_flatten,
    cp_from_heads,
    cp_materialize,
    cp_materialize_batch,
)


def rank1_example():
    # one component, two binary modes: table is outer([1,2],[3,4])
    return CpTensor(np.array([[[1.0, 2.0]], [[3.0, 4.0]]]))


class TestEvaluate:
    def test_rank1_values(self):
        cp = rank1_example()
        assert cp_evaluate(cp, (0, 0)) == pytest.approx(3.0)
        assert cp_evaluate(cp, (0, 1)) == pytest.approx(4.0)
        assert cp_evaluate(cp, (1, 0)) == pytest.approx(6.0)
        assert cp_evaluate(cp, (1, 1)) == pytest.approx(8.0)

    def test_rank2_sums_components(self):
        factors = np.ones((2, 2, 3))
        assert cp_evaluate(CpTensor(factors), (2, 1)) == pytest.approx(2.0)

    def test_rejects_bad_action(self):
        with pytest.raises(ValueError):
            cp_evaluate(rank1_example(), (0, 2))
        with pytest.raises(ValueError):
            cp_evaluate(rank1_example(), (0,))


class TestMaterialize:
    def test_rank1_table(self):
        dense = cp_materialize(rank1_example())
        np.testing.assert_allclose(dense.as_ndarray(), [[3.0, 4.0], [6.0, 8.0]])

    def test_lookup_matches_array(self):
        dense = DenseTensor(2, 3, np.arange(9.0).reshape(3, 3))
        assert dense.lookup((2, 1)) == pytest.approx(7.0)

    def test_size_guard(self):
        huge = CpTensor(np.ones((10, 1, 60)))
        assert 60**10 > MAX_DENSE_SIZE
        with pytest.raises(ValueError):
            cp_materialize(huge)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_pointwise_evaluation(self, seed):
        rng = np.random.default_rng(seed)
        d, k, a = (int(rng.integers(1, 5)), int(rng.integers(1, 5)),
                   int(rng.integers(2, 6)))
        cp = CpTensor(rng.standard_normal((d, k, a)))
        dense = cp_materialize(cp)
        for _ in range(5):
            joint = rng.integers(a, size=d)
            assert cp_evaluate(cp, joint) == pytest.approx(dense.lookup(joint), abs=1e-9)


class TestGradient:
    def test_rank1_analytic(self):
        cp = rank1_example()
        value, grad = cp_evaluate_grad(cp, (1, 0))
        assert value == pytest.approx(6.0)
        expected = np.zeros((2, 1, 2))
        expected[0, 0, 1] = 3.0  # d/df0[u0] = f1[u1]
        expected[1, 0, 0] = 2.0
        np.testing.assert_allclose(grad, expected)

    def test_finite_difference(self):
        rng = np.random.default_rng(5)
        cp = CpTensor(rng.standard_normal((3, 2, 4)))
        joint = (1, 3, 0)
        value, grad = cp_evaluate_grad(cp, joint)
        step = 1e-6
        for _ in range(20):
            idx = tuple(int(rng.integers(s)) for s in cp.factors.shape)
            bumped = cp.factors.copy()
            bumped[idx] += step
            fd = (cp_evaluate(CpTensor(bumped), joint) - value) / step
            assert grad[idx] == pytest.approx(fd, abs=1e-4)


class TestHeadLayout:
    def test_reshape_order(self):
        cp = cp_from_heads(np.arange(12.0), modes=2, rank=2, actions=3)
        np.testing.assert_allclose(cp.factors[0, 0], [0, 1, 2])
        np.testing.assert_allclose(cp.factors[0, 1], [3, 4, 5])
        np.testing.assert_allclose(cp.factors[1, 0], [6, 7, 8])
        np.testing.assert_allclose(cp.factors[1, 1], [9, 10, 11])

    def test_flatten_inverts(self):
        vec = np.arange(24.0)
        cp = cp_from_heads(vec, modes=2, rank=3, actions=4)
        np.testing.assert_allclose(cp_flatten(cp), vec)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            cp_from_heads(np.arange(11.0), modes=2, rank=2, actions=3)


class TestBatch:
    def test_matches_single_evaluation(self):
        rng = np.random.default_rng(11)
        factors = rng.standard_normal((6, 3, 2, 4))
        actions = rng.integers(4, size=(6, 3))
        values = cp_evaluate_batch(factors, actions)
        for r in range(6):
            single = cp_evaluate(CpTensor(factors[r]), actions[r])
            assert values[r] == pytest.approx(single, abs=1e-12)

    def test_batch_grad_matches_single(self):
        rng = np.random.default_rng(12)
        factors = rng.standard_normal((4, 2, 3, 5))
        actions = rng.integers(5, size=(4, 2))
        values, grads = cp_evaluate_batch_grad(factors, actions)
        for r in range(4):
            v, g = cp_evaluate_grad(CpTensor(factors[r]), actions[r])
            assert values[r] == pytest.approx(v, abs=1e-12)
            np.testing.assert_allclose(grads[r], g, atol=1e-12)

    def test_materialize_batch_matches_single(self):
        rng = np.random.default_rng(13)
        factors = rng.standard_normal((3, 2, 2, 3))
        tables = cp_materialize_batch(factors)
        assert tables.shape == (3, 9)
        for r in range(3):
            dense = cp_materialize(CpTensor(factors[r]))
            np.testing.assert_allclose(tables[r], dense.as_ndarray().reshape(-1),
                                       atol=1e-12)
