import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginal_lds.errors import NotSpd, NotSymmetric, Overflow
from marginal_lds.linalg import (
    cholesky,
    condition_number,
    operator_norm,
    rank_one_inverse_update,
    solve_spd,
    spd_inverse,
    spectral_radius_estimate,
    sym_eig,
)


def random_spd(rng, n, floor=0.1):
    g = rng.standard_normal((n, n))
    return g @ g.T + floor * np.eye(n)


seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestSolveSpd:
    def test_diagonal(self):
        np.testing.assert_allclose(solve_spd(np.diag([2.0, 2.0]), [2.0, 4.0]), [1.0, 2.0], atol=1e-15)

    def test_identity(self):
        np.testing.assert_array_equal(solve_spd(np.eye(3), [1.0, -1.0, 0.0]), [1.0, -1.0, 0.0])

    def test_random_multiply_back(self):
        rng = np.random.default_rng(5)
        m = random_spd(rng, 5)
        b = rng.standard_normal(5)
        x = solve_spd(m, b)
        assert np.max(np.abs(m @ x - b)) <= 1e-9 * (1 + np.max(np.abs(b)))

    def test_matrix_rhs(self):
        rng = np.random.default_rng(1)
        m = random_spd(rng, 4)
        b = rng.standard_normal((4, 3))
        np.testing.assert_allclose(m @ solve_spd(m, b), b, atol=1e-10)

    def test_not_spd(self):
        with pytest.raises(NotSpd):
            solve_spd(np.array([[1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0])

    def test_singular_is_rejected(self):
        with pytest.raises(NotSpd):
            cholesky(np.ones((3, 3)))

    def test_asymmetric_input_is_not_spd(self):
        with pytest.raises(NotSpd):
            solve_spd(np.array([[2.0, 1.0], [0.0, 2.0]]), [1.0, 1.0])

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.integers(1, 8))
    def test_residual_property(self, seed, n):
        rng = np.random.default_rng(seed)
        m = random_spd(rng, n)
        b = rng.standard_normal(n) * 10
        x = solve_spd(m, b)
        assert np.max(np.abs(m @ x - b)) <= 1e-9 * (1 + np.max(np.abs(b)))

    def test_thousand_instances(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 7))
            m = random_spd(rng, n)
            b = rng.standard_normal(n)
            x = solve_spd(m, b)
            worst = max(worst, np.max(np.abs(m @ x - b)) / (1 + np.max(np.abs(b))))
        assert worst <= 1e-9


class TestRankOne:
    def test_unit_vector(self):
        np.testing.assert_allclose(rank_one_inverse_update(np.eye(2), [1.0, 0.0]), np.diag([0.5, 1.0]), atol=1e-15)

    def test_zero_update(self):
        rng = np.random.default_rng(0)
        p = np.linalg.inv(random_spd(rng, 3))
        np.testing.assert_array_equal(rank_one_inverse_update(p, np.zeros(3)), p)

    def test_matches_direct_inverse(self):
        rng = np.random.default_rng(3)
        sigma = random_spd(rng, 4)
        x = rng.standard_normal(4)
        got = rank_one_inverse_update(np.linalg.inv(sigma), x)
        np.testing.assert_allclose(got, np.linalg.inv(sigma + np.outer(x, x)), atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(seeds, st.integers(1, 6), st.integers(1, 500))
    def test_composition_property(self, seed, d, t):
        rng = np.random.default_rng(seed)
        mu = float(rng.uniform(0.5, 5.0))
        xs = rng.standard_normal((t, d))
        p = np.eye(d) / mu
        for x in xs:
            p = rank_one_inverse_update(p, x)
        direct = np.linalg.inv(mu * np.eye(d) + xs.T @ xs)
        assert np.linalg.norm(p - direct) <= 1e-8


class TestOperatorNorm:
    @pytest.mark.parametrize("d", [1, 3, 6])
    def test_identity(self, d):
        assert operator_norm(np.eye(d)) == pytest.approx(1.0, abs=1e-12)

    def test_single_entry(self):
        assert operator_norm(np.array([[0.0, 3.0], [0.0, 0.0]])) == pytest.approx(3.0, rel=1e-12)

    def test_jordan_cube(self):
        # exact singular values of [[1,k],[0,1]]: (k + sqrt(k^2 + 4)) / 2
        expected = (3 + math.sqrt(13)) / 2
        assert operator_norm(np.array([[1.0, 3.0], [0.0, 1.0]])) == pytest.approx(expected, rel=1e-8)
        assert expected == pytest.approx(3.3028, abs=1e-4)

    def test_zero(self):
        assert operator_norm(np.zeros((2, 3))) == 0.0

    def test_complex_rotation(self):
        assert operator_norm(np.array([[1j, 0], [0, -1j]])) == pytest.approx(1.0, rel=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(1, 6), st.integers(1, 6))
    def test_never_underestimates(self, seed, r, c):
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((r, c))
        nrm = operator_norm(m)
        u = rng.standard_normal((100, c))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        assert np.max(np.linalg.norm(u @ m.T, axis=1)) <= nrm * (1 + 1e-8)
        assert nrm == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], rel=1e-8)

    def test_condition_number(self):
        assert condition_number(np.diag([10.0, 1.0])) == pytest.approx(10.0, rel=1e-8)


class TestSymEig:
    def test_diagonal(self):
        lam, V = sym_eig(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(lam, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(V), np.eye(2), atol=1e-15)

    def test_swap(self):
        lam, _ = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(lam, [1.0, -1.0], atol=1e-14)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(NotSymmetric):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(1, 8))
    def test_recomposition(self, seed, n):
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n, n))
        m = g + g.T
        lam, V = sym_eig(m)
        assert np.all(np.diff(lam) <= 0)
        assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-10
        assert np.max(np.abs(V @ np.diag(lam) @ V.T - m)) <= 1e-9 * np.max(np.abs(m))
        np.testing.assert_allclose(lam, np.sort(np.linalg.eigvalsh(m))[::-1], atol=1e-9 * np.max(np.abs(m)))


class TestSpectralRadius:
    def test_diagonal(self):
        assert spectral_radius_estimate(np.diag([0.5, 0.2]), 256) == pytest.approx(0.5, abs=1e-3)

    def test_rotation(self):
        c = math.cos(math.pi / 4)
        R = np.array([[c, -c], [c, c]])
        assert spectral_radius_estimate(R, 256) == pytest.approx(1.0, abs=1e-6)

    def test_scalar(self):
        assert spectral_radius_estimate(np.array([[0.382]]), 512) == pytest.approx(0.382, abs=1e-6)

    def test_upper_biased_on_jordan(self):
        J = np.array([[0.9, 1.0], [0.0, 0.9]])
        assert spectral_radius_estimate(J, 1024) >= 0.9

    def test_needs_enough_iterations(self):
        with pytest.raises(ValueError):
            spectral_radius_estimate(np.eye(2), 10)

    def test_overflow(self):
        with pytest.raises(Overflow):
            spectral_radius_estimate(np.array([[10.0]]), 1 << 12)


def test_spd_inverse_matches_numpy():
    rng = np.random.default_rng(9)
    m = random_spd(rng, 5)
    np.testing.assert_allclose(spd_inverse(m), np.linalg.inv(m), atol=1e-10)
