"""Aggregated ODE limits, correctors, initial layers and convergence-order fits.

The approximation of a fast edge process is assembled as

    u_eps(x, t) ~ vbar(t) + eps * w1(x, t) + wtilde0(x, t / eps)

where ``vbar`` solves the lumped ODE, ``w1`` is the zero-mean corrector and
``wtilde0`` is the initial layer carrying the zero-mean part of the initial
data.  For diffusion the layer decays like ``exp(-pi^2 t / eps)``; for
transport it is an ``eps``-periodic travelling wave.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GridFunction,
    as_square_matrix,
    as_vector,
    grid_nodes,
    matrix_exponential_apply,
    norm_l1,
    norm_sup,
    project_average,
    trapezoid_weights,
)
from .coupling import DiffusionCoupling, aggregated_matrix, auxiliary_sums
from .diffusion import DiffusionProblem
from .transport import TransportProblem, projected_exact

DEFAULT_TERMS = 200
DEFAULT_BAND = (0.8, 1.2)
MEAN_TOL = 1e-8


def _check_zero_mean(w0: GridFunction):
    means = project_average(w0)
    if np.max(np.abs(means)) > MEAN_TOL:
        raise ValueError(f"initial layer data must have zero edge averages, got {means}")


def aggregated_solution_diffusion(c: DiffusionCoupling, v0, t: float) -> np.ndarray:
    return matrix_exponential_apply(aggregated_matrix(c), t, as_vector(v0, c.m, "v0"))


def aggregated_solution_transport(b, v0, t: float) -> np.ndarray:
    return matrix_exponential_apply(as_square_matrix(b, "B"), t, v0)


def corrector_diffusion(c: DiffusionCoupling, vbar_t, n_cells: int) -> GridFunction:
    """First-order corrector ``x^2/2 K v + x Kplus0 v - (Kplus0/3 + Kplus1/6) v``.

    It solves ``w'' = K v`` with slopes ``Kplus0 v`` at 0 and ``Kplus1 v`` at 1
    and has zero average on every edge.
    """
    v = as_vector(vbar_t, c.m, "vbar")
    kp0, kp1, _, _ = auxiliary_sums(c)
    kv = aggregated_matrix(c) @ v
    a = kp0 @ v
    d = -(kp0 / 3.0 + kp1 / 6.0) @ v
    x = grid_nodes(n_cells)
    return GridFunction(0.5 * np.outer(kv, x * x) + np.outer(a, x) + d[:, None])


def corrector_transport(b, vbar_t, n_cells: int) -> GridFunction:
    """Zero-mean corrector ``B v (1/2 - x)``."""
    b = as_square_matrix(b, "B")
    v = as_vector(vbar_t, b.shape[0], "vbar")
    x = grid_nodes(n_cells)
    return GridFunction(np.outer(b @ v, 0.5 - x))


def cosine_coefficients(w0: GridFunction, n_terms: int) -> np.ndarray:
    """``a_n = 2 int_0^1 w0(x) cos(n pi x) dx`` for ``n = 1..n_terms``; shape (m, n_terms).

    The trapezoid rule makes the grid cosines exactly orthogonal, so the
    coefficients of modes below ``n_cells`` do not alias.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    x = w0.x
    modes = np.arange(1, n_terms + 1)
    basis = np.cos(np.pi * np.outer(modes, x))
    return 2.0 * (w0.values * trapezoid_weights(w0.n_cells)) @ basis.T


class CosineLayer:
    """Neumann heat-equation layer ``sum_n exp(-(n pi)^2 tau) a_n cos(n pi x)``.

    Coefficients are computed once from the zero-mean data ``w0``.  The grid
    carries modes ``1..n_cells - 1``, so ``n_terms`` is capped there.  ``tail``
    is the sum of |a_n| over the carried modes past ``n_terms``; it bounds the
    truncation error at ``tau = 0``.
    """

    def __init__(self, w0: GridFunction, n_terms: int = DEFAULT_TERMS):
        _check_zero_mean(w0)
        self.n_cells = w0.n_cells
        carried = max(self.n_cells - 1, 1)
        self.n_terms = min(n_terms, carried)
        coeffs = cosine_coefficients(w0, carried)
        self.coefficients = coeffs[:, :self.n_terms]
        self.tail = float(np.abs(coeffs[:, self.n_terms:]).sum())
        modes = np.arange(1, self.n_terms + 1)
        self._basis = np.cos(np.pi * np.outer(modes, w0.x))
        self._rates = -(np.pi * modes) ** 2

    def __call__(self, tau: float) -> GridFunction:
        if tau < 0:
            raise ValueError(f"tau must be non-negative, got {tau}")
        damp = np.exp(self._rates * tau)
        return GridFunction((self.coefficients * damp) @ self._basis)


def initial_layer_diffusion(w0: GridFunction, tau: float, n_terms: int = DEFAULT_TERMS):
    """Return ``(layer, tail)``: the diffusion initial layer at ``tau`` and its truncation tail."""
    layer = CosineLayer(w0, n_terms)
    return layer(tau), layer.tail


def initial_layer_transport(w0, tau: float, n_cells: int | None = None) -> GridFunction:
    """Periodic unit-speed shift ``w0((x - tau) mod 1)``.

    ``w0`` is a zero-mean :class:`GridFunction` (linear interpolation) or a
    callable profile, in which case ``n_cells`` fixes the output grid.
    """
    if isinstance(w0, GridFunction):
        _check_zero_mean(w0)
        n_cells = w0.n_cells
        profile = w0.interpolate
    else:
        if n_cells is None:
            raise ValueError("n_cells is required for a callable layer profile")
        profile = w0
    x = grid_nodes(n_cells)
    shifted = np.mod(x - tau, 1.0)
    # x = 1 takes the left limit, matching the exact solution's tie rule
    shifted[-1] = np.where(shifted[-1] < 1e-12, 1.0, shifted[-1])
    return GridFunction(np.asarray(profile(shifted), dtype=float).reshape(-1, n_cells + 1))


def _mean_free_profile(p: TransportProblem):
    """Callable zero-mean part of the transport initial data (exact when u0 is callable)."""
    profile = p.initial_profile()
    if isinstance(p.u0, GridFunction):
        mean = project_average(p.u0)
    else:
        mean = projected_exact(p, 0.0)

    def w0(x):
        return profile(x) - mean[:, None]

    return w0, mean


@dataclass
class LayerExpansion:
    """Components of the asymptotic approximation at time ``t``.

    ``vbar`` is the aggregated state, ``w1`` the corrector (already
    unscaled, multiply by ``eps``), ``wtilde0`` the initial layer at ``t/eps``.
    """

    kind: str
    t: float
    eps: float
    vbar: np.ndarray
    w1: GridFunction
    wtilde0: GridFunction
    tail: float = 0.0

    def total(self, include_corrector: bool = True) -> GridFunction:
        bulk = GridFunction.constant(self.vbar, self.w1.n_cells)
        out = bulk + self.wtilde0
        if include_corrector:
            out = out + self.eps * self.w1
        return out


class DiffusionExpansion:
    """Reusable expansion builder for one diffusion problem (coefficients cached)."""

    def __init__(self, p: DiffusionProblem, n_terms: int = DEFAULT_TERMS):
        self.problem = p
        self.v0 = project_average(p.u0)
        w0 = p.u0 - GridFunction.constant(self.v0, p.n_cells)
        self.layer = CosineLayer(w0, n_terms)

    def vbar(self, t: float) -> np.ndarray:
        return aggregated_solution_diffusion(self.problem.coupling, self.v0, t)

    def at(self, t: float) -> LayerExpansion:
        p = self.problem
        vbar = self.vbar(t)
        return LayerExpansion(
            kind="diffusion", t=t, eps=p.eps, vbar=vbar,
            w1=corrector_diffusion(p.coupling, vbar, p.n_cells),
            wtilde0=self.layer(t / p.eps), tail=self.layer.tail,
        )


class TransportExpansion:
    def __init__(self, p: TransportProblem):
        self.problem = p
        self.w0, self.v0 = _mean_free_profile(p)

    def vbar(self, t: float) -> np.ndarray:
        return aggregated_solution_transport(self.problem.coupling.B, self.v0, t)

    def at(self, t: float) -> LayerExpansion:
        p = self.problem
        vbar = self.vbar(t)
        return LayerExpansion(
            kind="transport", t=t, eps=p.eps, vbar=vbar,
            w1=corrector_transport(p.coupling.B, vbar, p.grid_cells),
            wtilde0=initial_layer_transport(self.w0, t / p.eps, p.grid_cells),
        )


def expansion_components(kind: str, problem, t: float, n_terms: int = DEFAULT_TERMS) -> LayerExpansion:
    if kind == "diffusion":
        if not isinstance(problem, DiffusionProblem):
            raise TypeError("diffusion expansion needs a DiffusionProblem")
        return DiffusionExpansion(problem, n_terms).at(t)
    if kind == "transport":
        if not isinstance(problem, TransportProblem):
            raise TypeError("transport expansion needs a TransportProblem")
        return TransportExpansion(problem).at(t)
    raise ValueError(f"kind must be 'diffusion' or 'transport', got {kind!r}")


def assemble_expansion(kind: str, problem, t: float, n_terms: int = DEFAULT_TERMS) -> GridFunction:
    """``vbar(t) + eps w1(t) + wtilde0(t / eps)`` as a grid function."""
    return expansion_components(kind, problem, t, n_terms).total()


def error_norms(u_eps: GridFunction, expansion: GridFunction) -> tuple[float, float]:
    """``(L1, sup)`` norms of ``u_eps - expansion``."""
    diff = u_eps - expansion
    return norm_l1(diff), norm_sup(diff)


@dataclass
class ConvergenceReport:
    eps_list: list
    errors: list
    errors_sup: list | None = None
    fitted_order: float | None = None
    intercept: float | None = None
    band: tuple = DEFAULT_BAND
    passed: bool = False
    degenerate: str | None = None
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.eps_list) != len(self.errors):
            raise ValueError("eps_list and errors must have equal length")
        if self.errors_sup is not None and len(self.errors_sup) != len(self.eps_list):
            raise ValueError("errors_sup must match eps_list")
        if any(e <= 0 for e in self.eps_list):
            raise ValueError("eps values must be positive")
        if any(a <= b for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly decreasing")

    def summary(self) -> str:
        order = "n/a" if self.fitted_order is None else f"{self.fitted_order:.4f}"
        verdict = "DEGENERATE" if self.degenerate else ("PASS" if self.passed else "FAIL")
        lo, hi = self.band
        return f"{self.label or 'order'}: fitted order {order} band [{lo}, {hi}] {verdict}"


def estimate_order(eps_list, errors, band=DEFAULT_BAND, errors_sup=None, label: str = "") -> ConvergenceReport:
    """Least-squares slope of log(error) against log(eps).

    Fewer than three points, or any non-positive error, yields a degenerate
    report with ``fitted_order = None`` and ``passed = False``.
    """
    eps = np.asarray(eps_list, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.shape != err.shape:
        raise ValueError("eps_list and errors must have equal length")
    order = np.argsort(-eps)
    eps, err = eps[order], err[order]
    sup = None if errors_sup is None else [float(s) for s in np.asarray(errors_sup, dtype=float)[order]]
    base = dict(eps_list=[float(e) for e in eps], errors=[float(e) for e in err],
                errors_sup=sup, band=tuple(float(b) for b in band), label=label)
    if len(eps) < 3:
        return ConvergenceReport(**base, degenerate="fewer than 3 eps values")
    if np.any(~np.isfinite(err)) or np.any(err <= 0):
        return ConvergenceReport(**base, degenerate="non-positive or non-finite error")
    slope, intercept = np.polyfit(np.log(eps), np.log(err), 1)
    lo, hi = band
    return ConvergenceReport(**base, fitted_order=float(slope), intercept=float(intercept),
                             passed=bool(lo <= slope <= hi))
