import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_oracles import adjoint_dense, embed_loops
from lppg import hankel_ops as ho
from lppg.hankel_ops import HankelShape
from lppg.signals import generate_signal


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


SHAPES = [(5,), (6,), (31,), (3, 3), (7, 6), (5, 4, 3)]


@st.composite
def shapes(draw):
    d = draw(st.integers(1, 3))
    levels = []
    for _ in range(d):
        n = draw(st.integers(1, 7))
        p = draw(st.integers(1, n))
        levels.append((n, p, n + 1 - p))
    return HankelShape(tuple(levels))


class TestShape:
    def test_dims(self):
        s = HankelShape.from_dims((63,))
        assert (s.P, s.Q, s.N) == (32, 32, 63)
        s = HankelShape.from_dims((15, 15, 15))
        assert (s.P, s.Q, s.N) == (512, 512, 3375)

    def test_split_override(self):
        s = HankelShape.from_dims((64,), splits=32)
        assert s.levels == ((64, 32, 33),)

    @pytest.mark.parametrize("levels", [((5, 3, 2),), ((5, 0, 6),), ((3, 2, 2), (4, 4, 4))])
    def test_bad_levels(self, levels):
        with pytest.raises(ho.ShapeError):
            HankelShape(levels)

    def test_cell_count(self):
        for dims in SHAPES:
            s = HankelShape.from_dims(dims)
            assert s.P * s.Q >= s.N


class TestWeights:
    def test_symmetric_1d(self):
        np.testing.assert_array_equal(ho.hankel_weights(HankelShape(((5, 3, 3),))), [1, 2, 3, 2, 1])

    def test_trivial(self):
        np.testing.assert_array_equal(ho.hankel_weights(HankelShape(((1, 1, 1),))), [1])

    def test_two_level(self):
        w = ho.hankel_weights(HankelShape(((3, 2, 2), (3, 2, 2))))
        np.testing.assert_array_equal(w.reshape(3, 3, order="F"), [[1, 2, 1], [2, 4, 2], [1, 2, 1]])

    @pytest.mark.parametrize("n,p", [(10, 6), (31, 16), (8, 8), (9, 3)])
    def test_1d_pattern(self, n, p):
        q = n + 1 - p
        lo, hi = min(p, q), max(p, q)
        expected = list(range(1, lo)) + [lo] * (hi - lo + 1) + list(range(lo - 1, 0, -1))
        np.testing.assert_array_equal(ho.hankel_weights(HankelShape(((n, p, q),))), expected)

    @pytest.mark.parametrize("dims", SHAPES)
    def test_counts_match_index_map(self, dims):
        s = HankelShape.from_dims(dims)
        idx = ho._dense_index(s)
        counts = np.bincount(idx.ravel(), minlength=s.N)
        np.testing.assert_array_equal(counts, ho.hankel_weights(s))
        assert ho.hankel_weights(s).sum() == s.P * s.Q


class TestEmbed:
    def test_small(self):
        M = ho.hankel_embed(np.array([1, 2, 3]), HankelShape.from_dims(3))
        np.testing.assert_array_equal(M, [[1, 2], [2, 3]])

    def test_rows(self):
        x = np.arange(5.0)
        M = ho.hankel_embed(x, HankelShape.from_dims(5))
        np.testing.assert_array_equal(M[0], [0, 1, 2])
        np.testing.assert_array_equal(M[-1], [2, 3, 4])

    def test_block_layout(self):
        rng = np.random.default_rng(0)
        X = crandn(rng, 3, 3)
        s = HankelShape(((3, 2, 2), (3, 2, 2)))
        s1 = HankelShape(((3, 2, 2),))
        blocks = [ho.hankel_embed(X[:, j], s1) for j in range(3)]
        expected = np.block([[blocks[0], blocks[1]], [blocks[1], blocks[2]]])
        np.testing.assert_array_equal(ho.hankel_embed(X.ravel(order="F"), s), expected)

    @pytest.mark.parametrize("dims", SHAPES)
    def test_matches_loops(self, dims):
        s = HankelShape.from_dims(dims)
        x = crandn(np.random.default_rng(1), s.N)
        np.testing.assert_array_equal(ho.hankel_embed(x, s), embed_loops(x, s))

    def test_size_guard(self):
        s = HankelShape.from_dims(64)
        with ho.dense_limit(63):
            with pytest.raises(ho.DenseSizeError):
                ho.hankel_embed(np.ones(64), s)
        assert ho.hankel_embed(np.ones(64), s).shape == (33, 32)

    def test_length_mismatch(self):
        with pytest.raises(ho.ShapeError):
            ho.hankel_embed(np.ones(4), HankelShape.from_dims(5))


class TestProducts:
    def test_matvec_small(self):
        s = HankelShape.from_dims(3)
        np.testing.assert_allclose(ho.hankel_matvec(np.array([1, 2, 3]), np.array([1, 0]), s), [1, 2])
        np.testing.assert_allclose(ho.hankel_matvec(np.array([1, 2, 3]), np.zeros(2), s), 0)

    def test_rmatvec_small(self):
        s = HankelShape.from_dims(3)
        x = np.array([1 + 1j, 2 - 1j, 3])
        np.testing.assert_allclose(ho.hankel_rmatvec(x, np.array([1, 0]), s), np.conj(x[:2]))
        np.testing.assert_allclose(ho.hankel_rmatvec(x, np.zeros(2), s), 0)

    @pytest.mark.parametrize("dims", SHAPES + [(64,)])
    def test_fft_equals_dense(self, dims):
        rng = np.random.default_rng(2)
        s = HankelShape.from_dims(dims)
        x = crandn(rng, s.N)
        M = embed_loops(x, s)
        v, u = crandn(rng, s.Q), crandn(rng, s.P)
        tol = 1e-10 * np.linalg.norm(M)
        assert np.max(np.abs(ho.hankel_matvec(x, v, s) - M @ v)) < tol * np.linalg.norm(v)
        assert np.max(np.abs(ho.hankel_rmatvec(x, u, s) - M.conj().T @ u)) < tol * np.linalg.norm(u)
        V, U = crandn(rng, s.Q, 3), crandn(rng, s.P, 3)
        op = ho.HankelOperator(x, s)
        np.testing.assert_allclose(op @ V, M @ V, atol=tol * np.linalg.norm(V))
        np.testing.assert_allclose(op.H @ U, M.conj().T @ U, atol=tol * np.linalg.norm(U))

    def test_adjoint_lowrank_examples(self):
        s = HankelShape.from_dims(5)
        e0P, e0Q = np.eye(s.P)[:, :1], np.eye(s.Q)[:, :1]
        np.testing.assert_allclose(ho.hankel_adjoint_lowrank(e0P, e0Q, s), np.eye(5)[0], atol=1e-15)
        s3 = HankelShape.from_dims(3)
        np.testing.assert_allclose(ho.hankel_adjoint_lowrank(np.ones((2, 1)), np.ones((2, 1)), s3), [1, 2, 1])

    @pytest.mark.parametrize("dims", [(63,), (7, 6), (5, 4, 3)])
    def test_adjoint_lowrank_dense(self, dims):
        rng = np.random.default_rng(3)
        s = HankelShape.from_dims(dims)
        U, V = crandn(rng, s.P, 3), crandn(rng, s.Q, 3)
        M = U @ V.conj().T
        ref = adjoint_dense(M, s)
        got = ho.hankel_adjoint_lowrank(U, V, s)
        assert np.max(np.abs(got - ref)) < 1e-10 * np.linalg.norm(M)
        np.testing.assert_allclose(ho.hankel_adjoint(M, s), ref, atol=1e-12 * np.linalg.norm(M))

    def test_lowrank_plus_hankel(self):
        rng = np.random.default_rng(4)
        s = HankelShape.from_dims((7, 6))
        y = crandn(rng, s.N)
        U, V = np.linalg.qr(crandn(rng, s.P, 2))[0], np.linalg.qr(crandn(rng, s.Q, 2))[0]
        S = crandn(rng, 2, 2)
        dense = 0.3 * U @ S @ V.conj().T + ho.hankel_embed(y, s)
        op = ho.LowRankPlusHankel(y, s, U, S, V, c=0.3)
        X = crandn(rng, s.Q, 2)
        np.testing.assert_allclose(op @ X, dense @ X, atol=1e-12)
        Y = crandn(rng, s.P, 2)
        np.testing.assert_allclose(op.H @ Y, dense.conj().T @ Y, atol=1e-12)


class TestLeftInverse:
    def test_identity(self):
        x = np.arange(1.0, 6.0)
        s = HankelShape.from_dims(5)
        np.testing.assert_allclose(ho.hankel_left_inverse(ho.hankel_embed(x, s), s), x)

    def test_arithmetic(self):
        s = HankelShape.from_dims(3)
        np.testing.assert_allclose(ho.hankel_left_inverse(np.array([[1.0, 2], [3, 4]]), s), [1, 2.5, 4])

    def test_factored_matches_dense(self):
        rng = np.random.default_rng(5)
        s = HankelShape.from_dims(31)
        U, V = crandn(rng, s.P, 2), crandn(rng, s.Q, 2)
        a = ho.hankel_left_inverse((U, V), s)
        b = ho.hankel_left_inverse(U @ V.conj().T, s)
        assert np.linalg.norm(a - b) < 1e-12 * np.linalg.norm(b)


@settings(max_examples=60, deadline=None)
@given(shapes(), st.integers(0, 2**32 - 1))
def test_adjoint_identity_property(shape, seed):
    rng = np.random.default_rng(seed)
    x = crandn(rng, shape.N)
    Y = crandn(rng, shape.P, shape.Q)
    lhs = np.vdot(ho.hankel_embed(x, shape), Y)
    rhs = np.vdot(x, ho.hankel_adjoint(Y, shape))
    assert abs(lhs - rhs) < 1e-10 * np.linalg.norm(x) * np.linalg.norm(Y)


@settings(max_examples=60, deadline=None)
@given(shapes(), st.integers(0, 2**32 - 1))
def test_weight_and_left_inverse_property(shape, seed):
    rng = np.random.default_rng(seed)
    x = crandn(rng, shape.N)
    M = ho.hankel_embed(x, shape)
    w = ho.hankel_weights(shape)
    assert np.linalg.norm(ho.hankel_adjoint(M, shape) - w * x) <= 1e-12 * np.linalg.norm(w * x)
    assert np.linalg.norm(ho.hankel_left_inverse(M, shape) - x) <= 1e-12 * np.linalg.norm(x)
    # the factored adjoint agrees with the dense one on a rank-2 matrix
    U, V = crandn(rng, shape.P, 2), crandn(rng, shape.Q, 2)
    ref = ho.hankel_adjoint(U @ V.conj().T, shape)
    assert np.linalg.norm(ho.hankel_adjoint_lowrank(U, V, shape) - ref) <= 1e-10 * max(np.linalg.norm(ref), 1)


@pytest.mark.parametrize("dims,r", [((63,), 5), ((31,), 3), ((9, 8), 4)])
def test_rank_certificate(dims, r):
    s = HankelShape.from_dims(dims)
    x, _ = generate_signal(dims, r, rng=np.random.default_rng(8))
    sv = np.linalg.svd(ho.hankel_embed(x, s), compute_uv=False)
    assert sv[r] < 1e-8 * sv[0]
