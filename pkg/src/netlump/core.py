"""Grid functions on the unit interval, norms, quadrature and small dense linear algebra.

Every edge of the network is identified with [0, 1] and sampled on the same
uniform grid ``x_i = i / n_cells``.  A :class:`GridFunction` stores one row of
samples per edge.  Aggregated (lumped) states and coupling matrices are plain
numpy arrays, validated by :func:`as_vector` and :func:`as_square_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Profile = Callable[[np.ndarray], np.ndarray]


def as_square_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, raising ``ValueError`` otherwise."""
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def as_vector(v, m: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if m is not None and arr.shape[0] != m:
        raise ValueError(f"{name} must have length {m}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Vector-valued function u: [0, 1] -> R^m sampled at ``n_cells + 1`` nodes.

    ``values`` has shape ``(m, n_cells + 1)``; row ``j`` holds edge ``j``.
    The array is copied and made read-only on construction.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[np.newaxis, :]
        if vals.ndim != 2:
            raise ValueError(f"GridFunction values must be 2-D, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 2:
            raise ValueError(f"GridFunction needs m >= 1 and n_cells >= 1, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridFunction samples must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1] - 1

    @property
    def x(self) -> np.ndarray:
        return grid_nodes(self.n_cells)

    @classmethod
    def from_profile(cls, profile: Profile, n_cells: int) -> "GridFunction":
        """Sample ``profile(x) -> array (m, len(x))`` on the uniform grid."""
        x = grid_nodes(n_cells)
        vals = np.asarray(profile(x), dtype=float)
        if vals.ndim == 1:
            vals = vals[np.newaxis, :]
        return cls(vals)

    @classmethod
    def constant(cls, c, n_cells: int) -> "GridFunction":
        c = as_vector(c, name="constant")
        return cls(np.repeat(c[:, np.newaxis], n_cells + 1, axis=1))

    def __add__(self, other):
        if isinstance(other, GridFunction):
            _check_same_shape(self, other)
            return GridFunction(self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            _check_same_shape(self, other)
            return GridFunction(self.values - other.values)
        return NotImplemented

    def __mul__(self, scalar):
        return GridFunction(self.values * float(scalar))

    __rmul__ = __mul__

    def endpoint_values(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(u(0), u(1))``, each of length m."""
        return self.values[:, 0].copy(), self.values[:, -1].copy()

    def interpolate(self, xq) -> np.ndarray:
        """Piecewise-linear evaluation at points ``xq`` in [0, 1]; shape ``(m, len(xq))``."""
        xq = np.asarray(xq, dtype=float)
        x = self.x
        return np.vstack([np.interp(xq, x, row) for row in self.values])


def _check_same_shape(a: GridFunction, b: GridFunction):
    if a.values.shape != b.values.shape:
        raise ValueError(f"GridFunction shape mismatch: {a.values.shape} vs {b.values.shape}")


def grid_nodes(n_cells: int) -> np.ndarray:
    if n_cells < 1:
        raise ValueError("n_cells must be positive")
    return np.arange(n_cells + 1) / n_cells


def simpson_weights(n_cells: int) -> np.ndarray:
    if n_cells < 2 or n_cells % 2:
        raise ValueError(f"composite Simpson needs an even n_cells >= 2, got {n_cells}")
    w = np.ones(n_cells + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * n_cells)


def trapezoid_weights(n_cells: int) -> np.ndarray:
    w = np.full(n_cells + 1, 1.0 / n_cells)
    w[0] = w[-1] = 0.5 / n_cells
    return w


def integrate_edge(u: GridFunction, edge: int) -> float:
    """Composite-Simpson approximation of the integral of edge ``edge`` over [0, 1]."""
    if not 0 <= edge < u.m:
        raise IndexError(f"edge {edge} out of range for m = {u.m}")
    return float(simpson_weights(u.n_cells) @ u.values[edge])


def project_average(u: GridFunction) -> np.ndarray:
    """Edge totals ``(int u_1, ..., int u_m)``: the aggregated state of ``u``."""
    return u.values @ simpson_weights(u.n_cells)


def norm_l1(u: GridFunction) -> float:
    """Sum over edges of the integral of |u_j|, trapezoid rule on the absolute samples."""
    return float(np.abs(u.values).sum(axis=0) @ trapezoid_weights(u.n_cells))


def norm_sup(u: GridFunction) -> float:
    return float(np.max(np.abs(u.values)))


# Pade(13) coefficients and the 1-norm threshold below which no scaling is needed
# (Higham, SIAM J. Matrix Anal. Appl. 26 (2005)).
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def expm(a) -> np.ndarray:
    """Matrix exponential by scaling and squaring with the degree-13 Pade approximant."""
    a = as_square_matrix(a)
    n = a.shape[0]
    norm = np.linalg.norm(a, 1)
    if norm == 0:
        return np.eye(n)
    s = 0
    if norm > _THETA13:
        s = int(np.ceil(np.log2(norm / _THETA13)))
    a = a / 2.0**s
    b = _PADE13
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def matrix_exponential_apply(k, t: float, v0) -> np.ndarray:
    """Return ``exp(t K) v0`` for ``t >= 0``."""
    k = as_square_matrix(k, "K")
    v0 = as_vector(v0, k.shape[0], "v0")
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"t must be finite and non-negative, got {t}")
    if t == 0:
        return v0.copy()
    return expm(t * k) @ v0


def matrix_power(t, n: int) -> np.ndarray:
    """``T**n`` by repeated squaring."""
    t = as_square_matrix(t, "T")
    if n < 0:
        raise ValueError("matrix power needs n >= 0")
    result = np.eye(t.shape[0])
    base = t
    while n:
        if n & 1:
            result = result @ base
        n >>= 1
        if n:
            base = base @ base
    return result


def matrix_power_apply(t, n: int, v) -> np.ndarray:
    """Return ``T**n v``; ``n = 0`` gives ``v`` back."""
    t = as_square_matrix(t, "T")
    v = np.array(v, dtype=float)
    if n == 0:
        return v.copy()
    return matrix_power(t, n) @ v
