"""Fast transport along the edges with a slowly perturbed vertex transmission.

    u_t = -(1/eps) u_x,    u(0, t) = (I + eps B) u(1, t).

The solution is known in closed form along characteristics: a value sitting
at ``x`` at time ``t`` has passed through the vertex ``n`` times and picked up
the factor ``(I + eps B)**n``.  :func:`transport_upwind` is a first-order
finite-volume cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np

from .core import GridFunction, as_square_matrix, grid_nodes, matrix_power, project_average
from .coupling import TransportCoupling, perron_vector

InitialData = Union[GridFunction, Callable[[np.ndarray], np.ndarray]]

_TIE = 1e-12
MAX_UPWIND_STEPS = 50_000_000


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Scaled transport problem.

    ``u0`` is either a :class:`GridFunction` (evaluated off-grid by linear
    interpolation) or a callable ``u0(x) -> (m, len(x))`` for exact evaluation,
    in which case ``n_cells`` sets the output grid.
    """

    coupling: TransportCoupling
    eps: float
    u0: InitialData
    t_final: float = 1.0
    n_cells: int | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.t_final >= 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if isinstance(self.u0, GridFunction):
            if self.u0.m != self.coupling.m:
                raise ValueError(f"u0 has {self.u0.m} edges but B has dimension {self.coupling.m}")
            if self.n_cells is not None and self.n_cells != self.u0.n_cells:
                raise ValueError("n_cells must match the grid of u0")
        elif not callable(self.u0):
            raise TypeError("u0 must be a GridFunction or a callable profile")
        elif self.n_cells is None:
            raise ValueError("n_cells is required when u0 is a callable profile")

    @property
    def grid_cells(self) -> int:
        return self.u0.n_cells if isinstance(self.u0, GridFunction) else self.n_cells

    def initial_profile(self) -> Callable[[np.ndarray], np.ndarray]:
        if isinstance(self.u0, GridFunction):
            return self.u0.interpolate
        u0 = self.u0
        m = self.coupling.m

        def profile(x):
            vals = np.asarray(u0(np.asarray(x, dtype=float)), dtype=float)
            return vals.reshape(m, -1)

        return profile

    def initial_grid(self) -> GridFunction:
        if isinstance(self.u0, GridFunction):
            return self.u0
        return GridFunction.from_profile(self.initial_profile(), self.n_cells)


def _snap(q: float) -> float:
    k = round(q)
    return float(k) if abs(q - k) <= _TIE * max(1.0, abs(q)) else q


def crossing_counts(x, t: float, eps: float) -> np.ndarray:
    """Number of vertex passages ``n`` with ``-n <= x - t/eps <= -n + 1``.

    At exact ties the solution is taken right-continuous in ``x`` (the smaller
    ``n``), except at ``x = 1`` which has no right neighbour and takes the
    left limit (the larger ``n``).  Hence ``t = 0`` reproduces the initial data
    and ``B = 0`` is exactly ``eps``-periodic at every node.
    """
    q = _snap(t / eps)
    x = np.asarray(x, dtype=float)
    d = q - x
    k = np.round(d)
    tie = np.abs(d - k) <= _TIE * np.maximum(1.0, np.abs(d))
    n = np.where(tie, k + (x == 1.0), np.floor(d) + 1)
    return np.maximum(n, 0).astype(int)


def transport_exact(p: TransportProblem, t: float) -> GridFunction:
    """Closed-form solution ``(I + eps B)**n u0(n + x - t/eps)`` on the output grid."""
    if not t >= 0:
        raise ValueError(f"t must be non-negative, got {t}")
    x = grid_nodes(p.grid_cells)
    if t == 0:
        return p.initial_grid()
    n = crossing_counts(x, t, p.eps)
    q = _snap(t / p.eps)
    y = np.clip(n + x - q, 0.0, 1.0)
    base = p.initial_profile()(y)
    tmat = p.coupling.T_eps(p.eps)
    out = np.empty_like(base)
    for k in np.unique(n):
        cols = n == k
        out[:, cols] = matrix_power(tmat, int(k)) @ base[:, cols]
    return GridFunction(out)


@lru_cache(maxsize=8)
def _gauss_rule(order: int):
    return np.polynomial.legendre.leggauss(order)


def _composite_gauss(profile, a: float, b: float, order: int, panels: int) -> np.ndarray:
    """Integral of ``profile`` over ``[a, b]`` by Gauss-Legendre on equal panels."""
    if b <= a:
        return np.zeros(profile(np.array([0.0])).shape[0])
    nodes, weights = _gauss_rule(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    xs = (mid[:, None] + half[:, None] * nodes[None, :]).reshape(-1)
    ws = (half[:, None] * weights[None, :]).reshape(-1)
    return profile(xs) @ ws


def projected_exact(p: TransportProblem, t: float, order: int = 64, panels: int = 16) -> np.ndarray:
    """Edge totals of the exact solution without sampling it on a grid.

    For ``n - 1 <= t/eps <= n`` the totals are
    ``T**(n-1) (int_0^1 u0 + eps B int_{n - t/eps}^1 u0)`` with ``T = I + eps B``.
    Integrals of ``u0`` use composite Gauss-Legendre quadrature.
    """
    profile = p.initial_profile()
    q = _snap(t / p.eps)
    total = _composite_gauss(profile, 0.0, 1.0, order, panels)
    if q == 0:
        return total
    n = math.ceil(q)
    tmat = p.coupling.T_eps(p.eps)
    tail = _composite_gauss(profile, n - q, 1.0, order, panels)
    return matrix_power(tmat, n - 1) @ (total + p.eps * p.coupling.B @ tail)


def transport_upwind(p: TransportProblem, t: float, n_cells: int, cfl: float = 0.9,
                     max_steps: int = MAX_UPWIND_STEPS) -> GridFunction:
    """First-order upwind solution on a uniform grid of ``n_cells`` cells.

    The time step is ``cfl * eps / n_cells`` (shortened slightly so the last
    step lands on ``t``); the inflow node is reset from the outflow node through
    ``I + eps B`` after every step.
    """
    if not 0 < cfl <= 1:
        raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
    if not t >= 0:
        raise ValueError(f"t must be non-negative, got {t}")
    x = grid_nodes(n_cells)
    u = np.asarray(p.initial_profile()(x), dtype=float).copy()
    if t == 0:
        return GridFunction(u)
    dx = 1.0 / n_cells
    dt_max = cfl * p.eps * dx
    steps = math.ceil(t / dt_max - 1e-9)
    if steps > max_steps:
        raise OverflowError(f"upwind needs {steps} steps (limit {max_steps}); increase eps or cfl")
    nu = (t / steps) / (p.eps * dx)
    tmat = p.coupling.T_eps(p.eps)
    for _ in range(steps):
        u[:, 1:] -= nu * (u[:, 1:] - u[:, :-1])
        u[:, 0] = tmat @ u[:, -1]
    return GridFunction(u)


def stochastic_transport_problem(t_matrix, eps: float, u0: InitialData, n_cells: int | None = None,
                                 t_final: float = 1.0) -> TransportProblem:
    """Problem with vertex condition ``u(0) = T u(1)``, written as ``B = (T - I) / eps``."""
    t_matrix = as_square_matrix(t_matrix, "T")
    b = (t_matrix - np.eye(t_matrix.shape[0])) / eps
    return TransportProblem(TransportCoupling(b), eps, u0, t_final, n_cells)


def stochastic_decomposition(t_matrix, u0: GridFunction):
    """Split ``u0 = rho N + layer0`` with ``rho`` the total mass and N the Perron vector of T.

    ``layer0`` carries no total mass: ``sum(project_average(layer0)) = 0``.
    """
    n = perron_vector(t_matrix)
    rho = float(project_average(u0).sum())
    layer0 = u0 - GridFunction.constant(rho * n, u0.n_cells)
    return rho, n, layer0
