"""Fast diffusion on the edges with slow Robin exchange at the endpoints.

Solves, for every edge simultaneously,

    u_t = (1/eps) u_xx,
    u_x(0, t) = eps (K00 u(0, t) + K01 u(1, t)),
    u_x(1, t) = eps (K10 u(0, t) + K11 u(1, t)),

with Crank-Nicolson in time and central differences in space.  The first
step is split into implicit-Euler substeps to damp the stiff modes excited by
initial data that violate the boundary conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import GridFunction, as_vector, grid_nodes, project_average
from .coupling import DiffusionCoupling, aggregated_matrix, auxiliary_sums

BOUNDARY_SCHEMES = ("ghost", "one_sided")


class NumericalError(RuntimeError):
    """A linear solve or time step failed."""


@dataclass(frozen=True, eq=False)
class DiffusionProblem:
    coupling: DiffusionCoupling
    eps: float
    u0: GridFunction
    t_final: float
    dt: float | None = None
    boundary: str = "ghost"
    smoothing_substeps: int = 4

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.t_final >= 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if self.u0.m != self.coupling.m:
            raise ValueError(f"u0 has {self.u0.m} edges but the coupling has dimension {self.coupling.m}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.boundary not in BOUNDARY_SCHEMES:
            raise ValueError(f"boundary must be one of {BOUNDARY_SCHEMES}, got {self.boundary!r}")
        if self.boundary == "one_sided" and self.u0.n_cells < 2:
            raise ValueError("one-sided boundary stencils need n_cells >= 2")

    @property
    def n_cells(self) -> int:
        return self.u0.n_cells

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return self.dt
        return 1e-3 * self.t_final if self.t_final > 0 else 1e-3


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: list = field(default_factory=list)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k) -> GridFunction:
        return self.states[k]

    def averages(self) -> np.ndarray:
        """Aggregated states, shape ``(len(times), m)``."""
        return np.array([project_average(u) for u in self.states])


def diffusion_operator(coupling: DiffusionCoupling, eps: float, n_cells: int, boundary: str = "ghost"):
    """Sparse pieces ``(mass, L)`` of the semi-discrete system ``mass @ u' = L @ u``.

    Unknowns are ordered edge by edge, ``index = edge * (n_cells + 1) + node``.
    With ghost points ``mass`` is the identity.  With one-sided stencils the
    boundary rows of ``mass`` are zero and the rows of ``L`` hold the algebraic
    Robin constraints.
    """
    m, n = coupling.m, n_cells
    h = 1.0 / n
    size = m * (n + 1)
    rows, cols, data = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        data.append(v)

    def idx(edge, node):
        return edge * (n + 1) + node

    scale = 1.0 / (eps * h * h)
    for e in range(m):
        for i in range(1, n):
            add(idx(e, i), idx(e, i - 1), scale)
            add(idx(e, i), idx(e, i), -2.0 * scale)
            add(idx(e, i), idx(e, i + 1), scale)

    mass_diag = np.ones(size)
    if boundary == "ghost":
        # ghost value u_{-1} = u_1 - 2h u_x(0); the eps in the flux cancels 1/eps
        for e in range(m):
            add(idx(e, 0), idx(e, 0), -2.0 * scale)
            add(idx(e, 0), idx(e, 1), 2.0 * scale)
            add(idx(e, n), idx(e, n), -2.0 * scale)
            add(idx(e, n), idx(e, n - 1), 2.0 * scale)
            for k in range(m):
                add(idx(e, 0), idx(k, 0), -2.0 / h * coupling.K00[e, k])
                add(idx(e, 0), idx(k, n), -2.0 / h * coupling.K01[e, k])
                add(idx(e, n), idx(k, 0), 2.0 / h * coupling.K10[e, k])
                add(idx(e, n), idx(k, n), 2.0 / h * coupling.K11[e, k])
    else:
        for e in range(m):
            mass_diag[idx(e, 0)] = 0.0
            mass_diag[idx(e, n)] = 0.0
            add(idx(e, 0), idx(e, 0), -1.5 / h)
            add(idx(e, 0), idx(e, 1), 2.0 / h)
            add(idx(e, 0), idx(e, 2), -0.5 / h)
            add(idx(e, n), idx(e, n), 1.5 / h)
            add(idx(e, n), idx(e, n - 1), -2.0 / h)
            add(idx(e, n), idx(e, n - 2), 0.5 / h)
            for k in range(m):
                add(idx(e, 0), idx(k, 0), -eps * coupling.K00[e, k])
                add(idx(e, 0), idx(k, n), -eps * coupling.K01[e, k])
                add(idx(e, n), idx(k, 0), -eps * coupling.K10[e, k])
                add(idx(e, n), idx(k, n), -eps * coupling.K11[e, k])
    lap = sp.csr_matrix((data, (rows, cols)), shape=(size, size))
    return sp.diags(mass_diag, format="csr"), lap


class _Stepper:
    """Theta-scheme steps of a fixed operator with cached LU factorizations."""

    def __init__(self, mass, lap):
        self.mass = mass
        self.lap = lap
        self._cache = {}

    def _factor(self, theta, step):
        key = (theta, round(step, 15))
        if key not in self._cache:
            lhs = (self.mass - theta * step * self.lap).tocsc()
            # mass @ lap zeroes the algebraic constraint rows of the one-sided scheme
            rhs = self.mass + (1.0 - theta) * step * (self.mass @ self.lap)
            try:
                lu = spla.splu(lhs)
            except RuntimeError as exc:
                raise NumericalError(f"singular implicit system for step {step:g}: {exc}") from exc
            self._cache[key] = (lu, rhs)
        return self._cache[key]

    def step(self, u, theta, step, count):
        lu, rhs = self._factor(theta, step)
        for k in range(count):
            u = lu.solve(rhs @ u)
            if not np.all(np.isfinite(u)):
                raise NumericalError(f"non-finite solution after substep {k + 1} of size {step:g}")
        return u


def solve_diffusion(p: DiffusionProblem, times=None) -> Trajectory:
    """Integrate the scaled diffusion system and sample it at ``times``.

    ``times`` defaults to 21 equally spaced points on ``[0, t_final]``.  The
    solver substeps with a step no larger than ``p.time_step`` and lands on
    each output time exactly.
    """
    if times is None:
        times = np.linspace(0.0, p.t_final, 21)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and non-decreasing")

    m, n = p.coupling.m, p.n_cells
    mass, lap = diffusion_operator(p.coupling, p.eps, n, p.boundary)
    stepper = _Stepper(mass, lap)
    u = p.u0.values.reshape(-1).copy()

    dt = p.time_step
    t_now = 0.0
    started = False
    states = []
    step_count = 0
    for t_out in times:
        span = t_out - t_now
        if span > 1e-14 * max(1.0, t_out):
            n_steps = max(1, int(np.ceil(span / dt - 1e-9)))
            step = span / n_steps
            try:
                if not started:
                    sub = p.smoothing_substeps
                    if sub > 0:
                        u = stepper.step(u, 1.0, step / sub, sub)
                    else:
                        u = stepper.step(u, 0.5, step, 1)
                    n_steps -= 1
                    step_count += 1
                    started = True
                if n_steps:
                    u = stepper.step(u, 0.5, step, n_steps)
                    step_count += n_steps
            except NumericalError as exc:
                raise NumericalError(f"time step {step_count + 1} (t ~ {t_now:g}): {exc}") from exc
            t_now = t_out
        states.append(GridFunction(u.reshape(m, n + 1)))
    return Trajectory(times=times.copy(), states=states)


def mass_balance_residual(traj: Trajectory, p: DiffusionProblem) -> np.ndarray:
    """Pointwise-in-time defect of the aggregated balance law.

    Compares a second-order finite-difference d/dt of the edge totals with
    ``K v + Kminus0 w(0) + Kminus1 w(1)``, where ``w = u - v``.  Returns the
    max-over-edges absolute defect at every output time.
    """
    if len(traj.times) < 3:
        raise ValueError("mass_balance_residual needs at least 3 output times")
    v = traj.averages()
    dvdt = np.gradient(v, traj.times, axis=0, edge_order=2)
    k = aggregated_matrix(p.coupling)
    _, _, km0, km1 = auxiliary_sums(p.coupling)
    res = np.empty(len(traj.times))
    for idx, (u, vk) in enumerate(zip(traj.states, v)):
        u0, u1 = u.endpoint_values()
        rhs = k @ vk + km0 @ (u0 - vk) + km1 @ (u1 - vk)
        res[idx] = np.max(np.abs(dvdt[idx] - rhs))
    return res


def boundary_lift(alpha, beta, n_cells: int) -> GridFunction:
    """Samples of ``v(x) = -x (1 - x) ((alpha + beta) x - alpha)``.

    v vanishes at both endpoints and has slopes ``alpha`` at 0 and ``beta`` at 1,
    so ``u - v`` turns an inhomogeneous Robin problem into a homogeneous one
    for any coupling.
    """
    alpha = as_vector(alpha, name="alpha")
    beta = as_vector(beta, len(alpha), "beta")
    x = grid_nodes(n_cells)
    vals = -(x * (1 - x))[None, :] * ((alpha + beta)[:, None] * x[None, :] - alpha[:, None])
    return GridFunction(vals)


def boundary_lift_profile(alpha, beta):
    """Callable version of :func:`boundary_lift` for exact evaluation off the grid."""
    alpha = as_vector(alpha, name="alpha")
    beta = as_vector(beta, len(alpha), "beta")

    def profile(x):
        x = np.asarray(x, dtype=float)
        return -(x * (1 - x))[None, :] * ((alpha + beta)[:, None] * x[None, :] - alpha[:, None])

    return profile
