import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkz.tensor import (
    FourierSlices,
    as_tensor3,
    bcirc,
    fold,
    fro_norm,
    from_bcirc,
    from_fourier,
    from_tv,
    inner,
    parseval_weights,
    t_identity,
    t_pinv,
    t_pinv_dense,
    t_product,
    t_product_dense,
    t_transpose,
    to_fourier,
    tv,
    unfold,
)
from tkz.analysis import moore_penrose_residual


def brute_bcirc(a):
    # index-by-index assembly, no slicing tricks
    m, l, n = a.shape
    out = np.zeros((m * n, l * n))
    for bi in range(n):
        for bj in range(n):
            k = (bi - bj) % n
            for r in range(m):
                for c in range(l):
                    out[bi * m + r, bj * l + c] = a[r, c, k]
    return out


def rnd(rng, *shape):
    return rng.standard_normal(shape)


class TestBcirc:
    def test_depth_one_is_the_slice(self):
        a = np.arange(6.0).reshape(2, 3, 1)
        assert np.array_equal(bcirc(a), a[:, :, 0])

    def test_depth_two_block_pattern(self):
        a1 = np.array([[1.0, 2.0]])
        a2 = np.array([[3.0, 4.0]])
        a = np.stack([a1, a2], axis=2)
        expected = np.block([[a1, a2], [a2, a1]])
        assert np.array_equal(bcirc(a), expected)

    def test_matches_brute_force(self):
        a = rnd(np.random.default_rng(1), 2, 2, 3)
        assert np.array_equal(bcirc(a), brute_bcirc(a))

    def test_from_bcirc_inverts(self):
        a = rnd(np.random.default_rng(2), 3, 2, 4)
        assert np.array_equal(from_bcirc(bcirc(a), 4), a)


class TestFoldUnfold:
    def test_round_trip(self):
        a = rnd(np.random.default_rng(3), 3, 2, 4)
        assert np.array_equal(fold(unfold(a), 4), a)

    def test_depth_one(self):
        a = rnd(np.random.default_rng(4), 3, 2, 1)
        assert np.array_equal(unfold(a), a[:, :, 0])

    def test_stacks_slices(self):
        a = np.zeros((2, 1, 2))
        a[:, 0, 0] = [1, 2]
        a[:, 0, 1] = [3, 4]
        assert unfold(a).ravel().tolist() == [1, 2, 3, 4]

    def test_fold_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            fold(np.zeros((5, 2)), 2)


class TestTv:
    def test_tube(self):
        a = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 3)
        assert tv(a).tolist() == [1.0, 2.0, 3.0]

    def test_column_major_then_slices(self):
        a = np.zeros((2, 2, 2))
        a[:, :, 0] = [[1, 3], [2, 4]]
        a[:, :, 1] = [[5, 7], [6, 8]]
        assert tv(a).tolist() == [1, 2, 3, 4, 5, 6, 7, 8]

    def test_inner_product_preserved(self):
        rng = np.random.default_rng(5)
        a, b = rnd(rng, 3, 4, 2), rnd(rng, 3, 4, 2)
        triple = sum(a[i, j, k] * b[i, j, k] for i in range(3) for j in range(4) for k in range(2))
        assert tv(a) @ tv(b) == pytest.approx(triple, rel=1e-13)
        assert inner(a, b) == pytest.approx(triple, rel=1e-13)

    def test_zero_and_inverse(self):
        assert not tv(np.zeros((2, 3, 2))).any()
        a = rnd(np.random.default_rng(6), 2, 3, 2)
        assert np.array_equal(from_tv(tv(a), a.shape), a)


class TestProduct:
    def test_identity_law(self):
        a = rnd(np.random.default_rng(7), 3, 4, 5)
        assert np.allclose(t_product(a, t_identity(4, 5)), a, atol=1e-14)
        assert np.allclose(t_product(t_identity(3, 5), a), a, atol=1e-14)

    def test_depth_one_is_matmul(self):
        rng = np.random.default_rng(8)
        a, b = rnd(rng, 3, 4, 1), rnd(rng, 4, 2, 1)
        assert np.allclose(t_product(a, b)[:, :, 0], a[:, :, 0] @ b[:, :, 0], rtol=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 7])
    def test_matches_dense_definition(self, n):
        rng = np.random.default_rng(n)
        a, b = rnd(rng, 2, 3, n), rnd(rng, 3, 2, n)
        dense = fold(brute_bcirc(a) @ unfold(b), n)
        assert np.linalg.norm(t_product(a, b) - dense) <= 1e-12 * np.linalg.norm(dense)
        assert np.allclose(t_product_dense(a, b), dense, rtol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            t_product(np.zeros((2, 3, 2)), np.zeros((4, 1, 2)))
        with pytest.raises(ValueError):
            t_product(np.zeros((2, 3, 2)), np.zeros((3, 1, 3)))

    def test_homomorphism(self):
        rng = np.random.default_rng(9)
        a, b = rnd(rng, 3, 4, 4), rnd(rng, 4, 2, 4)
        assert np.allclose(bcirc(t_product(a, b)), bcirc(a) @ bcirc(b), rtol=1e-12, atol=1e-13)


class TestTranspose:
    def test_depth_one(self):
        a = rnd(np.random.default_rng(10), 2, 3, 1)
        assert np.array_equal(t_transpose(a)[:, :, 0], a[:, :, 0].T)

    def test_involution(self):
        a = rnd(np.random.default_rng(11), 2, 3, 4)
        assert np.array_equal(t_transpose(t_transpose(a)), a)

    def test_bcirc_of_transpose(self):
        a = rnd(np.random.default_rng(12), 2, 3, 4)
        assert np.array_equal(bcirc(t_transpose(a)), bcirc(a).T)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(13)
        a, b, c = rnd(rng, 3, 4, 3), rnd(rng, 4, 2, 3), rnd(rng, 3, 2, 3)
        lhs = inner(t_product(a, b), c)
        rhs = inner(b, t_product(t_transpose(a), c))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestIdentityAndNorm:
    def test_single_slice(self):
        assert np.array_equal(t_identity(2, 1)[:, :, 0], np.eye(2))

    def test_idempotent(self):
        i = t_identity(3, 4)
        assert np.allclose(t_product(i, i), i, atol=1e-15)

    def test_dense_identity(self):
        assert np.array_equal(bcirc(t_identity(3, 4)), np.eye(12))

    def test_norms(self):
        assert fro_norm(t_identity(1, 1)) == 1.0
        assert fro_norm(np.zeros((2, 2, 2))) == 0.0
        a = rnd(np.random.default_rng(14), 2, 2, 2)
        assert inner(a, a) > 0
        assert fro_norm(a) == pytest.approx(np.sqrt(inner(a, a)), rel=1e-15)

    def test_inner_shape_mismatch(self):
        with pytest.raises(ValueError):
            inner(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


class TestFourier:
    def test_depth_one_round_trip(self):
        a = rnd(np.random.default_rng(15), 2, 3, 1)
        assert np.allclose(from_fourier(to_fourier(a)), a, rtol=1e-15)

    def test_constant_tube_energy_in_slice_zero(self):
        a = np.ones((2, 2, 5))
        f = to_fourier(a, half=False).data
        assert np.allclose(f[0], 5.0)
        assert np.allclose(f[1:], 0.0, atol=1e-14)

    @pytest.mark.parametrize("n", [2, 5, 6])
    def test_matches_reference_dft(self, n):
        a = rnd(np.random.default_rng(n), 3, 2, n)
        ref = np.zeros((n, 3, 2), dtype=complex)
        for j in range(n):
            for k in range(n):
                ref[j] += a[:, :, k] * np.exp(-2j * np.pi * j * k / n)
        full = to_fourier(a, half=False).data
        assert np.allclose(full, ref, rtol=1e-12, atol=1e-12)
        assert np.allclose(to_fourier(a).full(), ref, rtol=1e-12, atol=1e-12)
        assert np.allclose(from_fourier(to_fourier(a)), a, rtol=1e-12, atol=1e-14)

    def test_conjugate_symmetry(self):
        n = 6
        f = to_fourier(rnd(np.random.default_rng(16), 2, 3, n), half=False).data
        for j in range(n):
            assert np.allclose(f[j], np.conj(f[(n - j) % n]), atol=1e-13)

    def test_parseval(self):
        for n in (1, 2, 5, 8):
            a = rnd(np.random.default_rng(n), 3, 2, n)
            fh = to_fourier(a).data
            energy = np.sum(parseval_weights(n)[:, None, None] * np.abs(fh) ** 2)
            assert energy == pytest.approx(np.sum(a * a), rel=1e-13)


class TestPinv:
    @pytest.mark.parametrize("shape", [(3, 5, 4), (5, 3, 3), (4, 4, 1), (1, 6, 2)])
    def test_moore_penrose(self, shape):
        a = rnd(np.random.default_rng(sum(shape)), *shape)
        p = t_pinv(a)
        assert moore_penrose_residual(bcirc(a), bcirc(p)) < 1e-12

    def test_rank_deficient_matches_dense(self):
        rng = np.random.default_rng(17)
        a = t_product(rnd(rng, 5, 2, 3), rnd(rng, 2, 4, 3))
        p = t_pinv(a)
        assert np.allclose(p, t_pinv_dense(a), atol=1e-11)
        assert moore_penrose_residual(bcirc(a), bcirc(p)) < 1e-11

    def test_zero(self):
        assert not t_pinv(np.zeros((2, 3, 2))).any()

    def test_range_projector(self):
        # A * pinv(A) * b == b exactly for b in range(A)
        rng = np.random.default_rng(18)
        a = rnd(rng, 3, 5, 3)
        b = t_product(a, rnd(rng, 5, 2, 3))
        assert np.allclose(t_product(a, t_product(t_pinv(a), b)), b, atol=1e-12)


class TestValidation:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            as_tensor3(np.array([[[np.nan]]]))

    def test_rejects_wrong_order(self):
        with pytest.raises(ValueError):
            as_tensor3(np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(
    dims=st.tuples(*[st.integers(1, 5)] * 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_product_property(dims, seed):
    m, l, p, n = dims
    rng = np.random.default_rng(seed)
    a, b = rnd(rng, m, l, n), rnd(rng, l, p, n)
    dense = fold(bcirc(a) @ unfold(b), n)
    assert np.linalg.norm(t_product(a, b) - dense) <= 1e-12 * max(np.linalg.norm(dense), 1e-300)
    assert np.allclose(t_transpose(t_product(a, b)), t_product(t_transpose(b), t_transpose(a)), atol=1e-12)
