import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, solve_ivp

from netlump.core import (
    GridFunction,
    as_square_matrix,
    expm,
    integrate_edge,
    matrix_exponential_apply,
    matrix_power,
    matrix_power_apply,
    norm_l1,
    norm_sup,
    project_average,
    simpson_weights,
)


def grid(fn, n=64, m=1):
    return GridFunction.from_profile(lambda x: np.vstack([fn(x)] * m) if m > 1 else fn(x), n)


class TestGridFunction:
    def test_values_read_only(self):
        u = GridFunction(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            u.values[0, 0] = 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            GridFunction([[0.0, np.nan, 1.0]])

    def test_rejects_ragged_or_too_short(self):
        with pytest.raises(ValueError):
            GridFunction(np.zeros((2, 1)))
        with pytest.raises(ValueError):
            GridFunction(np.zeros((2, 3, 4)))

    def test_arithmetic_and_shape_check(self):
        a = GridFunction.constant([1.0, 2.0], 4)
        b = GridFunction.constant([0.5, 0.5], 4)
        assert np.allclose((a - b).values, [[0.5] * 5, [1.5] * 5])
        assert np.allclose((2 * a).values[1], 4.0)
        with pytest.raises(ValueError):
            a + GridFunction.constant([1.0, 2.0], 8)

    def test_interpolate_linear(self):
        u = grid(lambda x: 3 * x + 1, n=8)
        assert np.allclose(u.interpolate([0.1, 0.55]), [[1.3, 2.65]])


class TestIntegrateEdge:
    def test_constant(self):
        assert integrate_edge(GridFunction.constant([2.5], 16), 0) == pytest.approx(2.5, abs=1e-15)

    def test_linear(self):
        assert integrate_edge(grid(lambda x: x, 16), 0) == pytest.approx(0.5, abs=1e-15)

    def test_cubic_exact(self):
        u = grid(lambda x: 4 * x**3 - x**2 + 2, 2)
        assert integrate_edge(u, 0) == pytest.approx(1 - 1 / 3 + 2, abs=1e-14)

    def test_sine_against_adaptive_quadrature(self):
        ref, _ = quad(lambda x: np.sin(np.pi * x), 0, 1, epsabs=1e-14)
        assert abs(integrate_edge(grid(lambda x: np.sin(np.pi * x), 128), 0) - ref) < 1e-8
        assert ref == pytest.approx(2 / np.pi, abs=1e-13)

    def test_rejects_odd_or_tiny_grid(self):
        with pytest.raises(ValueError):
            integrate_edge(GridFunction.constant([1.0], 3), 0)
        with pytest.raises(ValueError):
            integrate_edge(GridFunction.constant([1.0], 1), 0)
        with pytest.raises(ValueError):
            simpson_weights(7)

    def test_edge_out_of_range(self):
        with pytest.raises(IndexError):
            integrate_edge(GridFunction.constant([1.0, 2.0], 4), 2)


class TestProjectAverage:
    def test_constants(self):
        assert np.allclose(project_average(GridFunction.constant([1.0, -2.0, 3.5], 8)), [1.0, -2.0, 3.5])

    def test_linear_pair(self):
        u = GridFunction.from_profile(lambda x: np.vstack([x, 2 * x]), 10)
        assert np.allclose(project_average(u), [0.5, 1.0], atol=1e-15)

    def test_random_cubics_against_quadrature(self):
        rng = np.random.default_rng(11)
        coeffs = rng.standard_normal((3, 4))
        u = GridFunction.from_profile(lambda x: np.vstack([np.polyval(c, x) for c in coeffs]), 6)
        ref = [quad(lambda x, c=c: np.polyval(c, x), 0, 1, epsabs=1e-15)[0] for c in coeffs]
        assert np.allclose(project_average(u), ref, atol=1e-12, rtol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
    def test_linearity(self, alpha, beta, seed):
        rng = np.random.default_rng(seed)
        u = GridFunction(rng.standard_normal((2, 9)))
        w = GridFunction(rng.standard_normal((2, 9)))
        lhs = project_average(alpha * u + beta * w)
        rhs = alpha * project_average(u) + beta * project_average(w)
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestNorms:
    def test_zero(self):
        u = GridFunction.constant([0.0, 0.0], 8)
        assert norm_l1(u) == 0.0 and norm_sup(u) == 0.0

    def test_one(self):
        u = GridFunction.constant([1.0], 8)
        assert norm_l1(u) == pytest.approx(1.0) and norm_sup(u) == 1.0

    def test_shifted_linear(self):
        # |x - 1/2| is linear on each half, so the trapezoid rule is exact on an even grid
        u = grid(lambda x: x - 0.5, 64)
        assert norm_l1(u) == pytest.approx(0.25, abs=1e-14)
        assert norm_sup(u) == pytest.approx(0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_l1_bounded_by_m_sup(self, m, seed):
        u = GridFunction(np.random.default_rng(seed).standard_normal((m, 11)))
        assert norm_l1(u) <= m * norm_sup(u) + 1e-14


def rk4(k, t, v0, dt=1e-4):
    steps = int(round(t / dt))
    h = t / steps
    v = np.array(v0, dtype=float)
    for _ in range(steps):
        k1 = k @ v
        k2 = k @ (v + 0.5 * h * k1)
        k3 = k @ (v + 0.5 * h * k2)
        k4 = k @ (v + h * k3)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return v


class TestMatrixExponential:
    def test_zero_matrix(self):
        assert np.array_equal(matrix_exponential_apply(np.zeros((3, 3)), 2.0, [1, 2, 3]), [1, 2, 3])

    def test_nilpotent(self):
        assert np.allclose(matrix_exponential_apply([[0, 1], [0, 0]], 1.0, [0, 1]), [1, 1], atol=1e-15)

    def test_random_against_rk4(self):
        k = np.random.default_rng(5).standard_normal((4, 4))
        v0 = np.array([1.0, -1.0, 0.5, 2.0])
        assert np.allclose(matrix_exponential_apply(k, 0.7, v0), rk4(k, 0.7, v0), atol=1e-7, rtol=0)

    def test_against_scipy_for_large_norms(self):
        from scipy.linalg import expm as sp_expm

        rng = np.random.default_rng(9)
        for scale in (1e-3, 1.0, 30.0, 300.0):
            a = scale * rng.standard_normal((5, 5)) / 5
            ref = sp_expm(a)
            assert np.linalg.norm(expm(a) - ref) <= 1e-10 * max(1.0, np.linalg.norm(ref))

    def test_stiff_kolmogorov_to_1e3(self):
        k = np.array([[-1.0, 2.0], [1.0, -2.0]])
        v = matrix_exponential_apply(k, 1000.0 / 3.0, [1.0, 0.0])
        assert np.allclose(v, [2 / 3, 1 / 3], rtol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 2), st.floats(0, 2), st.integers(0, 2**31 - 1))
    def test_semigroup(self, s, t, seed):
        rng = np.random.default_rng(seed)
        k = rng.standard_normal((3, 3))
        v = rng.standard_normal(3)
        lhs = matrix_exponential_apply(k, s + t, v)
        rhs = matrix_exponential_apply(k, s, matrix_exponential_apply(k, t, v))
        assert np.allclose(lhs, rhs, atol=1e-9 * max(1, np.abs(lhs).max()))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            matrix_exponential_apply(np.eye(2), -1.0, [1, 1])
        with pytest.raises(ValueError):
            matrix_exponential_apply(np.eye(2), np.inf, [1, 1])
        with pytest.raises(ValueError):
            matrix_exponential_apply([[np.nan, 0], [0, 0]], 1.0, [1, 1])
        with pytest.raises(ValueError):
            as_square_matrix(np.zeros((2, 3)))


class TestMatrixPower:
    def test_zero_power(self):
        assert np.array_equal(matrix_power_apply([[2, 1], [0, 3]], 0, [4, 5]), [4, 5])

    def test_scaled_identity(self):
        assert np.array_equal(matrix_power_apply(2 * np.eye(2), 3, [1, 1]), [8, 8])

    def test_against_naive_product(self):
        t = np.random.default_rng(2).uniform(-1, 1, (4, 4))
        naive = np.eye(4)
        for _ in range(13):
            naive = naive @ t
        v = np.arange(4.0)
        assert np.allclose(matrix_power_apply(t, 13, v), naive @ v, atol=1e-12 * max(1, np.abs(naive @ v).max()))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 20), st.integers(0, 20), st.integers(0, 2**31 - 1))
    def test_additivity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        t = rng.uniform(-1, 1, (3, 3)) / 2
        v = rng.standard_normal(3)
        lhs = matrix_power_apply(t, a + b, v)
        rhs = matrix_power_apply(t, a, matrix_power_apply(t, b, v))
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            matrix_power(np.eye(2), -1)
