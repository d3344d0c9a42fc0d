import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import naive_depthwise, naive_dense_conv, naive_pointwise
from retdict.exceptions import ConfigurationError, ShapeError
from retdict.retriever import (
    FusedKernel,
    RetrieverWeights,
    coefficient_generator,
    fuse_weights,
    fused_retriever,
    global_information_exchanger,
    param_count,
    retriever_core,
)


def weights(pointwise, depthwise):
    return RetrieverWeights(np.array(pointwise, float), np.array(depthwise, float))


def rand_weights(rng, f, n, k):
    return RetrieverWeights(rng.standard_normal((n, f)), rng.standard_normal((n, k, k)))


class TestCoefficientGenerator:
    def test_identity_projection(self):
        w = weights(np.eye(2), np.ones((2, 1, 1)))
        out = coefficient_generator(np.array([5.0, -3.0]).reshape(2, 1, 1), w)
        assert out.ravel().tolist() == [5.0, -3.0]

    def test_hand_matrix_vector(self):
        w = weights([[1, 2], [3, 4]], np.ones((2, 1, 1)))
        out = coefficient_generator(np.ones((2, 1, 1)), w)
        assert out.ravel().tolist() == [3.0, 7.0]

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        w = rand_weights(rng, 12, 7, 3)
        x = rng.standard_normal((12, 9, 6))
        np.testing.assert_allclose(coefficient_generator(x, w), naive_pointwise(x, w.pointwise),
                                   rtol=0, atol=1e-12)

    def test_full_scale_against_loop_sample(self):
        # full 512x512x80x80 loop is too slow in pure Python; check a random
        # subset of output elements with an explicit dot-product loop
        rng = np.random.default_rng(1)
        w = rand_weights(rng, 512, 512, 5)
        x = rng.standard_normal((512, 80, 80))
        out = coefficient_generator(x, w)
        assert out.shape == (512, 80, 80)
        for c, i, j in rng.integers(0, [512, 80, 80], size=(200, 3)):
            ref = sum(w.pointwise[c, q] * x[q, i, j] for q in range(512))
            assert abs(out[c, i, j] - ref) < 1e-6

    def test_channel_mismatch_names_both_dims(self):
        w = weights(np.ones((3, 4)), np.ones((3, 1, 1)))
        with pytest.raises(ShapeError, match=r"5 channels.*f=4"):
            coefficient_generator(np.ones((5, 2, 2)), w)


class TestExchanger:
    def test_unit_1x1_kernel_is_identity(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal((3, 4, 5))
        w = weights(np.ones((3, 2)), np.ones((3, 1, 1)))
        assert np.array_equal(global_information_exchanger(y, w), y)

    def test_box_filter_by_hand(self):
        w = weights(np.ones((1, 1)), np.ones((1, 3, 3)))
        out = global_information_exchanger(np.ones((1, 3, 3)), w)[0]
        np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(3)
        w = rand_weights(rng, 4, 8, 5)
        y = rng.standard_normal((8, 16, 16))
        diff = np.abs(global_information_exchanger(y, w) - naive_depthwise(y, w.depthwise)).max()
        assert diff < 1e-6

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            weights(np.ones((2, 2)), np.ones((2, 2, 2)))

    def test_atom_mismatch(self):
        w = weights(np.ones((2, 2)), np.ones((2, 3, 3)))
        with pytest.raises(ShapeError):
            global_information_exchanger(np.ones((3, 4, 4)), w)

    def test_channel_isolation(self):
        rng = np.random.default_rng(4)
        w = rand_weights(rng, 3, 6, 3)
        y = rng.standard_normal((6, 7, 7))
        base = global_information_exchanger(y, w)
        for j in range(6):
            y2 = y.copy()
            y2[j] += rng.standard_normal((7, 7))
            changed = np.abs(global_information_exchanger(y2, w) - base).max(axis=(1, 2)) > 0
            assert changed.tolist() == [c == j for c in range(6)]


class TestRetrieverCore:
    def test_identities_compose(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 4, 4))
        w = weights(np.eye(3), np.ones((3, 1, 1)))
        assert np.array_equal(retriever_core(x, w), x)

    def test_scalar_case(self):
        w = weights([[1, 1]], [[[2]]])
        out = retriever_core(np.array([3.0, 4.0]).reshape(2, 1, 1), w)
        assert out.item() == 14.0

    def test_is_composition(self):
        rng = np.random.default_rng(6)
        w = rand_weights(rng, 5, 4, 3)
        x = rng.standard_normal((5, 6, 6))
        expected = global_information_exchanger(coefficient_generator(x, w), w)
        assert np.array_equal(retriever_core(x, w), expected)

    def test_matches_fused_oracle(self):
        rng = np.random.default_rng(7)
        w = rand_weights(rng, 16, 8, 3)
        x = rng.standard_normal((16, 10, 10))
        diff = np.abs(retriever_core(x, w) - fused_retriever(x, fuse_weights(w))).max()
        assert diff < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        w = rand_weights(rng, 4, 3, 3)
        x1, x2 = rng.standard_normal((2, 4, 5, 5))
        lhs = retriever_core(a * x1 + b * x2, w)
        rhs = a * retriever_core(x1, w) + b * retriever_core(x2, w)
        assert np.abs(lhs - rhs).max() < 1e-9

    @settings(max_examples=20, deadline=None)
    @given(f=st.integers(1, 6), n=st.integers(1, 6), k=st.sampled_from([1, 3, 5]),
           h=st.integers(1, 9), w=st.integers(1, 9))
    def test_shape_preservation(self, f, n, k, h, w):
        rng = np.random.default_rng(0)
        wt = rand_weights(rng, f, n, k)
        assert retriever_core(rng.standard_normal((f, h, w)), wt).shape == (n, h, w)


class TestFuse:
    def test_scalar(self):
        assert fuse_weights(weights([[2]], [[[3]]])).data.tolist() == [[[[6.0]]]]

    def test_annihilation(self):
        rng = np.random.default_rng(8)
        w = rand_weights(rng, 4, 3, 3)
        w.pointwise[1] = 0.0
        assert not fuse_weights(w).data[1].any()

    def test_rank_one_minors(self):
        rng = np.random.default_rng(9)
        w = rand_weights(rng, 16, 8, 3)
        eq = fuse_weights(w).data.reshape(8, 16, 9)
        worst = 0.0
        for c in range(8):
            m = eq[c]
            for (r1, r2), (c1, c2) in itertools.product(
                itertools.combinations(range(16), 2), itertools.combinations(range(9), 2)
            ):
                worst = max(worst, abs(m[r1, c1] * m[r2, c2] - m[r1, c2] * m[r2, c1]))
        assert worst < 1e-10

    def test_elementwise_formula(self):
        rng = np.random.default_rng(10)
        w = rand_weights(rng, 3, 2, 3)
        eq = fuse_weights(w).data
        for c, i, m, n in itertools.product(range(2), range(3), range(3), range(3)):
            assert eq[c, i, m, n] == w.pointwise[c, i] * w.depthwise[c, m, n]


class TestFusedRetriever:
    def test_unit_kernel_identity(self):
        x = np.arange(6.0).reshape(1, 2, 3)
        assert np.array_equal(fused_retriever(x, FusedKernel(np.ones((1, 1, 1, 1)))), x)

    def test_matches_naive_dense_conv(self):
        rng = np.random.default_rng(11)
        kernel = rng.standard_normal((3, 4, 3, 3))
        x = rng.standard_normal((4, 6, 5))
        np.testing.assert_allclose(fused_retriever(x, FusedKernel(kernel)),
                                   naive_dense_conv(x, kernel), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fused_retriever(np.ones((3, 2, 2)), FusedKernel(np.ones((1, 2, 1, 1))))


class TestParamCount:
    # oracle values: 512*512 + 512*25 and 512*512*25
    def test_split(self):
        assert param_count("split", 512, 512, 5) == 274_944

    def test_fused(self):
        assert param_count("fused", 512, 512, 5) == 6_553_600

    def test_difference(self):
        f = n = 512
        k = 5
        diff = param_count("fused", f, n, k) - param_count("split", f, n, k)
        assert diff == 6_278_656 == n * f * k * k - (f * n + n * k * k)

    def test_matches_stored_reals(self):
        w = rand_weights(np.random.default_rng(0), 7, 5, 3)
        assert param_count("split", 7, 5, 3) == w.size

    @pytest.mark.parametrize("dims", [(0, 1, 1), (1, -2, 1), (1, 1, 0)])
    def test_rejects_non_positive(self, dims):
        with pytest.raises(ValueError):
            param_count("split", *dims)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            param_count("dense", 1, 1, 1)
