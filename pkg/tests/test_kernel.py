"""Kernel evaluation, Gram construction, and matrix square roots."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapelearn import (
    GramMatrix,
    KernelConfig,
    SingularGramError,
    cross_kernel,
    gram,
    kernel_eval,
    sqrt_and_inv_sqrt,
)

coord = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False, allow_infinity=False)


class TestKernelEval:
    def test_identity_case(self):
        assert kernel_eval((0, 0), (0, 0)) == 1.0

    def test_distance_two(self):
        assert kernel_eval((0, 0), (2, 0)) == pytest.approx(math.exp(-2.0), abs=1e-15)

    def test_diagonal_pair(self):
        assert kernel_eval((1, 1), (2, 0)) == pytest.approx(math.exp(-1.0), abs=1e-15)

    def test_bandwidth_scales_exponent(self):
        cfg = KernelConfig(bandwidth_sq=4.0)
        assert kernel_eval((0, 0), (2, 0), cfg) == pytest.approx(math.exp(-0.5), abs=1e-15)

    @given(x0=coord, y0=coord, x1=coord, y1=coord)
    @settings(max_examples=200)
    def test_symmetric_and_bounded(self, x0, y0, x1, y1):
        a, b = (x0, y0), (x1, y1)
        k_ab = kernel_eval(a, b)
        assert k_ab == kernel_eval(b, a)
        assert 0.0 <= k_ab <= 1.0
        if (x0, y0) == (x1, y1):
            assert k_ab == 1.0
        # may underflow to exactly 0 only at extreme separations
        if abs(x0 - x1) < 10 and abs(y0 - y1) < 10:
            assert k_ab > 0.0

    def test_unity_only_at_equality(self):
        assert kernel_eval((0, 0), (1e-7, 0)) < 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            kernel_eval((np.nan, 0), (0, 0))

    def test_invalid_bandwidth(self):
        with pytest.raises(ValueError):
            KernelConfig(bandwidth_sq=0.0)


class TestGram:
    def test_single_point(self):
        g = gram([(0, 0)])
        assert g.entries.shape == (1, 1)
        assert g.entries[0, 0] == 1.0

    def test_two_points_closed_form(self):
        g = gram([(0, 0), (2, 0)])
        e2 = math.exp(-2.0)
        assert np.allclose(g.entries, [[1.0, e2], [e2, 1.0]], atol=1e-15)

    def test_duplicates_without_jitter_are_singular(self):
        with pytest.raises(SingularGramError):
            gram([(0, 0), (0, 0)], jitter=0.0)

    def test_duplicates_with_jitter_pass(self):
        g = gram([(0, 0), (0, 0)], jitter=1e-6)
        assert g.jitter_applied == 1e-6
        assert g.entries[0, 0] == 1.0 + 1e-6

    def test_entries_match_kernel_eval(self):
        pts = [(0.3, -1.2), (2.0, 0.5), (-1.0, 1.0)]
        g = gram(pts)
        for i, a in enumerate(pts):
            for j, b in enumerate(pts):
                expect = 1.0 if i == j else kernel_eval(a, b)
                assert g.entries[i, j] == pytest.approx(expect, abs=1e-15)

    def test_positive_definite_on_distinct_points(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(2, 30))
            pts = rng.uniform(-4, 4, size=(n, 2))
            diff = pts[:, None] - pts[None, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            np.fill_diagonal(d2, np.inf)
            if d2.min() < 0.01:
                continue
            g = gram(pts)
            assert np.linalg.eigvalsh(g.entries)[0] > 0

    def test_negative_jitter_rejected(self):
        with pytest.raises(ValueError):
            gram([(0, 0)], jitter=-1e-3)

    def test_gram_matrix_validates_symmetry(self):
        bad = np.array([[1.0, 0.5], [0.4, 1.0]])
        with pytest.raises(ValueError):
            GramMatrix(entries=bad)

    def test_entries_are_immutable(self):
        g = gram([(0, 0), (1, 0)])
        with pytest.raises(ValueError):
            g.entries[0, 0] = 2.0


class TestCrossKernel:
    def test_single_pair(self):
        ck = cross_kernel([(0, 0)], [(0, 0)])
        assert ck.entries[0, 0] == 1.0

    def test_one_data_two_grid(self):
        ck = cross_kernel([(0, 0)], [(2, 0), (0, 2)])
        e2 = math.exp(-2.0)
        assert np.allclose(ck.entries, [[e2, e2]], atol=1e-15)

    def test_two_data_one_grid(self):
        ck = cross_kernel([(1, 0), (0, 1)], [(0, 0)])
        eh = math.exp(-0.5)
        assert np.allclose(ck.entries, [[eh], [eh]], atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cross_kernel(np.zeros((0, 2)), [(0, 0)])


class TestSqrt:
    def test_identity(self):
        s, s_inv = sqrt_and_inv_sqrt(np.eye(3))
        assert np.allclose(s, np.eye(3), atol=1e-12)
        assert np.allclose(s_inv, np.eye(3), atol=1e-12)

    def test_scalar_spd(self):
        s, s_inv = sqrt_and_inv_sqrt(np.array([[4.0]]))
        assert s[0, 0] == pytest.approx(2.0, abs=1e-12)
        assert s_inv[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_reconstructs_two_point_gram(self):
        g = gram([(0, 0), (2, 0)])
        s, s_inv = sqrt_and_inv_sqrt(g)
        assert np.allclose(s @ s, g.entries, atol=1e-12)
        assert np.allclose(s @ s_inv, np.eye(2), atol=1e-12)
        assert np.allclose(s, s.T, atol=0)

    def test_roundtrip_random_grams_up_to_50(self):
        rng = np.random.default_rng(11)
        for _ in range(15):
            n = int(rng.integers(2, 51))
            pts = []
            while len(pts) < n:
                cand = rng.uniform(-6, 6, size=2)
                if all((cand[0] - p[0]) ** 2 + (cand[1] - p[1]) ** 2 > 0.25 for p in pts):
                    pts.append(cand)
            g = gram(np.array(pts), jitter=1e-10)
            s, s_inv = sqrt_and_inv_sqrt(g)
            rel = np.linalg.norm(s @ s - g.entries) / np.linalg.norm(g.entries)
            assert rel < 1e-9
            assert np.linalg.norm(s @ s_inv - np.eye(n)) < 1e-9

    def test_eigen_floor_raises(self):
        eps = 5e-13
        m = np.array([[1.0, 1.0 - eps], [1.0 - eps, 1.0]])
        with pytest.raises(SingularGramError):
            sqrt_and_inv_sqrt(m)
