import math

import numpy as np
import pytest

from tkz.problems import (
    PSNR_CAP,
    BlurSpec,
    InconsistentSystemError,
    SyntheticSpec,
    blur_matrices,
    blur_problem,
    gen_blur,
    gen_synthetic,
    least_norm_solution,
    psnr,
    rse,
    synthetic_video,
)
from tkz.tensor import bcirc, fold, t_identity, t_product, unfold


class TestSynthetic:
    def test_slices_have_rank_and_conditioning(self):
        spec = SyntheticSpec(20, 15, 3, 4, 6, 10.0, seed=2)
        pr = gen_synthetic(spec)
        for i in range(3):
            s = np.linalg.svd(pr.A[:, :, i], compute_uv=False)
            assert np.sum(s > 1e-10) == 6
            assert s[0] <= 10 + 1e-10 and s[5] >= 1 - 1e-10

    def test_shapes_and_consistency(self):
        pr = gen_synthetic(SyntheticSpec(20, 15, 3, 4, 15, 10.0))
        assert pr.B.shape == (20, 4, 3)
        assert pr.solution_shape == (15, 4, 3)
        assert np.linalg.norm(t_product(pr.A, pr.x_true) - pr.B) <= 1e-10 * np.linalg.norm(pr.B)

    def test_deterministic(self):
        a = gen_synthetic(SyntheticSpec(10, 8, 2, 2, 5, 4.0, seed=9))
        b = gen_synthetic(SyntheticSpec(10, 8, 2, 2, 5, 4.0, seed=9))
        assert np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B)

    def test_frozen_entries(self):
        pr = gen_synthetic(SyntheticSpec(40, 30, 3, 5, 30, 10.0, 1))
        assert float(pr.A[0, 0, 0]) == -0.07149626333955447
        assert float(pr.B[1, 2, 0]) == -10.345433132690992

    def test_earlier_slices_independent_of_depth(self):
        a = gen_synthetic(SyntheticSpec(10, 8, 2, 2, 5, 4.0, seed=1))
        b = gen_synthetic(SyntheticSpec(10, 8, 4, 2, 5, 4.0, seed=1))
        assert np.array_equal(a.A, b.A[:, :, :2])

    def test_large_configuration_builds(self):
        pr = gen_synthetic(SyntheticSpec(200, 120, 3, 120, 120, 10.0))
        assert pr.A.shape == (200, 120, 3)

    @pytest.mark.parametrize("kw", [dict(r=20), dict(kappa=1.0), dict(m=0)])
    def test_invalid(self, kw):
        base = dict(m=10, l=8, n=2, p=2, r=5, kappa=4.0)
        base.update(kw)
        with pytest.raises(ValueError):
            SyntheticSpec(**base)


class TestBlur:
    def test_default_kernel(self):
        s = BlurSpec(8, 3)
        assert (s.band, s.sigma) == (6, 1.8)

    def test_single_tap_is_scaled_identity(self):
        M1, _ = blur_matrices(BlurSpec(5, 2, band=1, sigma=1.3))
        assert np.allclose(M1, np.eye(5) / math.sqrt(2 * math.pi * 1.3), rtol=1e-15)

    def test_matches_index_oracle(self):
        l, n, band, sigma = 8, 3, 6, 1.8
        scale = 1 / math.sqrt(2 * math.pi * sigma)
        z = [math.exp(-(k**2) / (2 * sigma**2)) if k < band else 0.0 for k in range(l)]
        M1 = np.array([[scale * z[abs(i - j)] for j in range(l)] for i in range(l)])
        # M2 first column is z itself
        A = gen_blur(BlurSpec(l, n, band, sigma))
        for j in range(n):
            assert np.allclose(A[:, :, j], scale * z[j] * M1, rtol=1e-14, atol=0)

    def test_slices_are_toeplitz(self):
        A = gen_blur(BlurSpec(10, 4))
        for j in range(4):
            S = A[:, :, j]
            for i in range(1, 10):
                for k in range(1, 10):
                    assert S[i, k] == S[i - 1, k - 1]

    def test_m2_upper_row_uses_flipped_tail(self):
        _, M2 = blur_matrices(BlurSpec(6, 2, band=3, sigma=1.0))
        z1 = M2[:, 0]
        assert np.allclose(M2[0, 1:], z1[1:][::-1])

    def test_blur_problem_consistent(self):
        v = synthetic_video(12, 10, 4, seed=3)
        pr = blur_problem(v, BlurSpec(12, 4))
        assert pr.B.shape == v.shape
        assert np.allclose(t_product(pr.A, pr.x_star0), pr.B, atol=1e-9)

    def test_video_range(self):
        v = synthetic_video(16, 12, 3)
        assert v.min() == 0.0 and v.max() == 1.0

    @pytest.mark.parametrize("kw", [dict(band=0), dict(band=9), dict(sigma=0.0), dict(n=9)])
    def test_invalid(self, kw):
        base = dict(l=8, n=3)
        base.update(kw)
        with pytest.raises(ValueError):
            BlurSpec(**base)


class TestLeastNorm:
    def test_zero_rhs(self):
        A = np.random.default_rng(0).standard_normal((4, 3, 2))
        assert not least_norm_solution(A, np.zeros((4, 2, 2))).any()

    def test_identity(self):
        B = np.random.default_rng(1).standard_normal((3, 2, 4))
        assert np.allclose(least_norm_solution(t_identity(3, 4), B), B, rtol=1e-14)

    def test_smaller_than_other_solutions(self):
        rng = np.random.default_rng(2)
        pr = gen_synthetic(SyntheticSpec(8, 10, 2, 2, 3, 5.0, seed=4))
        X0 = pr.x_star0
        Ad = bcirc(pr.A)
        null = np.eye(Ad.shape[1]) - np.linalg.pinv(Ad) @ Ad
        for _ in range(20):
            Z = fold(null @ rng.standard_normal((Ad.shape[1], 2)), 2)
            Y = X0 + Z
            assert np.allclose(t_product(pr.A, Y), pr.B, atol=1e-9)
            assert np.linalg.norm(Y) > np.linalg.norm(X0)

    def test_inconsistent(self):
        A = np.zeros((2, 2, 1))
        A[0, 0, 0] = 1.0
        B = np.ones((2, 1, 1))
        with pytest.raises(InconsistentSystemError):
            least_norm_solution(A, B)


class TestMetrics:
    def test_rse_endpoints(self):
        rng = np.random.default_rng(5)
        xs, x0 = rng.standard_normal((3, 2, 2)), np.zeros((3, 2, 2))
        assert rse(xs, xs, x0) == 0.0
        assert rse(x0, xs, x0) == 1.0

    def test_rse_undefined(self):
        with pytest.raises(ValueError):
            rse(np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.ones((1, 1, 1)))

    def test_psnr_twenty_db(self):
        ref = np.zeros((4, 4))
        ref[0, 0] = 1.0
        assert psnr(ref + 0.1, ref) == pytest.approx(20.0, abs=1e-12)

    def test_psnr_perfect(self):
        ref = np.ones((3, 3))
        assert psnr(ref, ref) == PSNR_CAP

    def test_psnr_explicit_peak(self):
        ref = np.full((2, 2), 0.5)
        assert psnr(ref + 0.1, ref, peak=1.0) == pytest.approx(20.0, abs=1e-12)
