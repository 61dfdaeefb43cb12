import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netlump.core import GridFunction, norm_l1, project_average
from netlump.coupling import (
    DiffusionCoupling,
    EdgeExchangeRates,
    TransportCoupling,
    adjoint_coupling,
    aggregated_matrix,
    auxiliary_sums,
    coupling_from_rates,
)
from netlump.diffusion import DiffusionProblem, solve_diffusion
from netlump.lumping import (
    ConvergenceReport,
    CosineLayer,
    DiffusionExpansion,
    TransportExpansion,
    aggregated_solution_diffusion,
    aggregated_solution_transport,
    assemble_expansion,
    corrector_diffusion,
    corrector_transport,
    error_norms,
    estimate_order,
    expansion_components,
    initial_layer_diffusion,
    initial_layer_transport,
)
from netlump.transport import TransportProblem

CHAIN = EdgeExchangeRates(l=(0.0, 2.0), r=(1.0, 0.0), l_pairs={(1, 0, 1): 2.0}, r_pairs={(0, 1, 0): 1.0})
DENSITY = adjoint_coupling(coupling_from_rates(CHAIN))


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


def random_coupling(seed, m=3):
    rng = np.random.default_rng(seed)
    return DiffusionCoupling(*rng.standard_normal((4, m, m)))


class TestAggregatedSolutions:
    def test_zero_coupling_constant(self):
        assert np.array_equal(aggregated_solution_diffusion(DiffusionCoupling.zero(2), [1.0, 2.0], 3.0), [1.0, 2.0])

    def test_diffusion_against_rk4(self):
        c = random_coupling(3)
        v0 = [1.0, -0.5, 2.0]
        ref = rk4(aggregated_matrix(c), 0.8, v0)
        assert np.allclose(aggregated_solution_diffusion(c, v0, 0.8), ref, atol=1e-8)

    def test_density_chain_keeps_mass(self):
        v = aggregated_solution_diffusion(DENSITY, [1.0, 0.0], 50.0)
        assert v.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(aggregated_matrix(DENSITY) @ v, 0, atol=1e-10)

    def test_transport_two_state(self):
        b = [[-1.0, 1.0], [1.0, -1.0]]
        t = 0.7
        e = np.exp(-2 * t)
        assert np.allclose(aggregated_solution_transport(b, [1.0, 0.0], t), [(1 + e) / 2, (1 - e) / 2], atol=1e-14)


class TestCorrectors:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_diffusion_corrector_properties(self, seed):
        c = random_coupling(seed)
        v = np.random.default_rng(seed + 1).standard_normal(3)
        w = corrector_diffusion(c, v, 64)
        kp0, kp1, _, _ = auxiliary_sums(c)
        h = 1.0 / 64
        vals = w.values
        # quadratic in x, so Simpson means and centred differences are exact
        assert np.allclose(project_average(w), 0, atol=1e-12)
        second = (vals[:, 2:] - 2 * vals[:, 1:-1] + vals[:, :-2]) / h**2
        assert np.allclose(second, (aggregated_matrix(c) @ v)[:, None], atol=1e-8)
        slope0 = (-3 * vals[:, 0] + 4 * vals[:, 1] - vals[:, 2]) / (2 * h)
        slope1 = (3 * vals[:, -1] - 4 * vals[:, -2] + vals[:, -3]) / (2 * h)
        assert np.allclose(slope0, kp0 @ v, atol=1e-9)
        assert np.allclose(slope1, kp1 @ v, atol=1e-9)

    def test_zero_state(self):
        assert np.array_equal(corrector_diffusion(DENSITY, [0.0, 0.0], 8).values, np.zeros((2, 9)))

    def test_transport_corrector(self):
        b = np.array([[-1.0, 2.0], [1.0, -2.0]])
        w = corrector_transport(b, [1.0, 1.0], 16)
        assert np.allclose(project_average(w), 0, atol=1e-15)
        assert np.allclose(w.values[:, 0], 0.5 * (b @ [1.0, 1.0]))
        assert np.allclose(w.values[:, -1], -0.5 * (b @ [1.0, 1.0]))


class TestDiffusionLayer:
    def test_single_mode(self):
        w0 = GridFunction.from_profile(lambda x: np.vstack([np.cos(np.pi * x), -2 * np.cos(2 * np.pi * x)]), 128)
        tau = 0.03
        layer, tail = initial_layer_diffusion(w0, tau)
        x = w0.x
        exact = np.vstack([np.exp(-np.pi**2 * tau) * np.cos(np.pi * x),
                           -2 * np.exp(-4 * np.pi**2 * tau) * np.cos(2 * np.pi * x)])
        assert np.max(np.abs(layer.values - exact)) <= 1e-6
        assert tail <= 1e-6

    def test_long_time_vanishes(self):
        w0 = GridFunction.from_profile(lambda x: (x - 0.5)[None, :], 256)
        layer, _ = initial_layer_diffusion(w0, 10.0)
        assert np.max(np.abs(layer.values)) <= 1e-30

    def test_linear_coefficients(self):
        w0 = GridFunction.from_profile(lambda x: (x - 0.5)[None, :], 2048)
        layer = CosineLayer(w0, 20)
        n = np.arange(1, 21)
        exact = 2 * ((-1.0) ** n - 1) / (n * np.pi) ** 2
        assert np.allclose(layer.coefficients[0, :8], exact[:8], atol=1e-8)

    def test_rejects_nonzero_mean(self):
        with pytest.raises(ValueError):
            CosineLayer(GridFunction.constant([1.0], 16))

    def test_rejects_negative_tau(self):
        layer = CosineLayer(GridFunction.from_profile(lambda x: np.cos(np.pi * x)[None, :], 16))
        with pytest.raises(ValueError):
            layer(-1.0)

    def test_matches_neumann_heat_flow(self):
        # zero coupling: the solution minus its mean is exactly the layer
        w0 = GridFunction.from_profile(lambda x: (x - 0.5)[None, :] ** 3, 256)
        p = DiffusionProblem(DiffusionCoupling.zero(1), 0.1, w0, 0.01, dt=2e-5)
        u = solve_diffusion(p, [0.0, 0.01])[-1]
        layer, _ = initial_layer_diffusion(w0, 0.1)
        assert norm_l1(u - layer) <= 1e-5


class TestTransportLayer:
    def sin_layer(self, n=1024):
        return GridFunction.from_profile(lambda x: np.sin(2 * np.pi * x)[None, :], n)

    def test_tau_zero_and_one(self):
        w0 = self.sin_layer(64)
        assert np.allclose(initial_layer_transport(w0, 0.0).values, w0.values, atol=1e-15)
        assert np.allclose(initial_layer_transport(w0, 1.0).values, w0.values, atol=1e-12)

    def test_shift(self):
        layer = initial_layer_transport(self.sin_layer(), 0.3)
        assert np.max(np.abs(layer.values[0] - np.sin(2 * np.pi * (layer.x - 0.3)))) <= 1e-3

    def test_callable_needs_grid(self):
        with pytest.raises(ValueError):
            initial_layer_transport(lambda x: np.sin(2 * np.pi * x)[None, :], 0.1)
        out = initial_layer_transport(lambda x: np.sin(2 * np.pi * x)[None, :], 0.25, 8)
        assert np.allclose(out.values[0], np.sin(2 * np.pi * (out.x - 0.25)), atol=1e-15)

    def test_layer_norm_eps_periodic(self):
        u0 = lambda x: np.vstack([np.sin(np.pi * x) ** 2, 2 * x**2])
        p = TransportProblem(TransportCoupling([[-1.0, 1.0], [1.0, -1.0]]), 0.125, u0, n_cells=64)
        ex = TransportExpansion(p)
        for t in (0.0, 0.03125, 0.3):
            a, b = ex.at(t).wtilde0, ex.at(t + 0.125).wtilde0
            assert norm_l1(a) == pytest.approx(norm_l1(b), abs=1e-12)


class TestAssembly:
    def test_diffusion_at_zero_reproduces_data(self):
        u0 = GridFunction.from_profile(lambda x: np.vstack([1 + np.cos(np.pi * x), 2 - np.cos(3 * np.pi * x)]), 128)
        p = DiffusionProblem(DiffusionCoupling.zero(2), 0.1, u0, 1.0)
        total = assemble_expansion("diffusion", p, 0.0)
        assert np.max(np.abs(total.values - u0.values)) <= 1e-10

    def test_transport_at_zero(self):
        u0 = lambda x: np.vstack([np.sin(np.pi * x) ** 2, 1 + x])
        p = TransportProblem(TransportCoupling(np.zeros((2, 2))), 0.1, u0, n_cells=64)
        comp = expansion_components("transport", p, 0.0)
        assert np.allclose(comp.total(include_corrector=False).values, p.initial_grid().values, atol=1e-12)
        assert np.allclose(comp.vbar, [0.5, 1.5], atol=1e-14)

    def test_components_consistent(self):
        u0 = GridFunction.from_profile(lambda x: np.vstack([1 + x**2, 2 - x]), 64)
        p = DiffusionProblem(DENSITY, 0.05, u0, 1.0)
        comp = DiffusionExpansion(p).at(0.4)
        assert comp.t == 0.4 and comp.eps == 0.05
        assert np.allclose(comp.vbar, aggregated_solution_diffusion(DENSITY, project_average(u0), 0.4))
        total = comp.vbar[:, None] + 0.05 * comp.w1.values + comp.wtilde0.values
        assert np.allclose(assemble_expansion("diffusion", p, 0.4).values, total)

    def test_kind_checks(self):
        p = DiffusionProblem(DENSITY, 0.05, GridFunction.constant([1.0, 1.0], 8), 1.0)
        with pytest.raises(TypeError):
            expansion_components("transport", p, 0.1)
        with pytest.raises(ValueError):
            expansion_components("reaction", p, 0.1)


class TestErrorNorms:
    def test_examples(self):
        a = GridFunction.constant([1.0, 2.0], 8)
        assert error_norms(a, a) == (0.0, 0.0)
        l1, sup = error_norms(a, GridFunction.constant([0.5, 2.0], 8))
        assert l1 == pytest.approx(0.5) and sup == pytest.approx(0.5)


class TestEstimateOrder:
    def test_slope_one(self):
        eps = [0.2, 0.1, 0.05, 0.025]
        r = estimate_order(eps, [3 * e for e in eps])
        assert r.fitted_order == pytest.approx(1.0, abs=1e-12) and r.passed
        assert np.exp(r.intercept) == pytest.approx(3.0)

    def test_slope_two_fails_default_band(self):
        eps = [0.2, 0.1, 0.05]
        r = estimate_order(eps, [e**2 for e in eps])
        assert r.fitted_order == pytest.approx(2.0) and not r.passed
        assert estimate_order(eps, [e**2 for e in eps], band=(1.5, 2.5)).passed

    def test_sorts_descending(self):
        r = estimate_order([0.05, 0.2, 0.1], [0.5, 2.0, 1.0], errors_sup=[5, 20, 10])
        assert r.eps_list == [0.2, 0.1, 0.05] and r.errors == [2.0, 1.0, 0.5]
        assert r.errors_sup == [20.0, 10.0, 5.0]

    def test_degenerate(self):
        r = estimate_order([0.1, 0.05], [1.0, 0.5])
        assert r.fitted_order is None and not r.passed and r.degenerate
        r = estimate_order([0.1, 0.05, 0.025], [1.0, 0.0, 0.5])
        assert r.fitted_order is None and r.degenerate
        assert "DEGENERATE" in r.summary()

    def test_summary(self):
        r = estimate_order([0.2, 0.1, 0.05], [0.2, 0.1, 0.05], label="projected")
        assert r.summary().startswith("projected: fitted order 1.0000") and r.summary().endswith("PASS")

    def test_report_validation(self):
        with pytest.raises(ValueError):
            ConvergenceReport([0.1, 0.05], [1.0])
        with pytest.raises(ValueError):
            ConvergenceReport([0.05, 0.1], [1.0, 2.0])
        with pytest.raises(ValueError):
            ConvergenceReport([0.1, -0.05], [1.0, 2.0])
        with pytest.raises(ValueError):
            ConvergenceReport([0.1, 0.05], [1.0, 2.0], errors_sup=[1.0])
