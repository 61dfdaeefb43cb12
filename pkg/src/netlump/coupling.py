"""Boundary-coupling matrices: construction from exchange rates and structural checks.

Diffusion couplings carry four m x m matrices ``K00, K01, K10, K11`` entering
the Robin conditions

    u'(0) = eps (K00 u(0) + K01 u(1)),    u'(1) = eps (K10 u(0) + K11 u(1)).

Transport couplings carry one matrix ``B`` with the vertex condition
``u(0) = (I + eps B) u(1)``.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import as_square_matrix, as_vector

DEFAULT_TOLERANCE = 1e-12
PERRON_MAX_ITER = 100_000


def structural_tolerance() -> float:
    """Tolerance for exact-zero structural identities; ``NETLUMP_TOL`` overrides it."""
    raw = os.environ.get("NETLUMP_TOL")
    if raw is None:
        return DEFAULT_TOLERANCE
    try:
        tol = float(raw)
    except ValueError:
        raise ValueError(f"NETLUMP_TOL must be a float, got {raw!r}") from None
    if not tol >= 0:
        raise ValueError(f"NETLUMP_TOL must be non-negative, got {raw!r}")
    return tol


class PerronError(ValueError):
    """Raised when a Perron vector is requested for an unsuitable matrix."""

    code = "perron"


class ReducibleMatrixError(PerronError):
    code = "reducible"


class NotStochasticError(PerronError):
    code = "not-stochastic"


class NoConvergenceError(PerronError):
    code = "no-convergence"


@dataclass(frozen=True, eq=False)
class DiffusionCoupling:
    K00: np.ndarray
    K01: np.ndarray
    K10: np.ndarray
    K11: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("K00", "K01", "K10", "K11"):
            mat = as_square_matrix(getattr(self, name), name)
            mat.setflags(write=False)
            mats[name] = mat
        shapes = {mat.shape for mat in mats.values()}
        if len(shapes) != 1:
            raise ValueError(f"coupling matrices must share one dimension, got {sorted(shapes)}")
        for name, mat in mats.items():
            object.__setattr__(self, name, mat)

    @property
    def m(self) -> int:
        return self.K00.shape[0]

    @classmethod
    def zero(cls, m: int) -> "DiffusionCoupling":
        z = np.zeros((m, m))
        return cls(z, z, z, z)

    def matrices(self) -> dict[str, np.ndarray]:
        return {"K00": self.K00, "K01": self.K01, "K10": self.K10, "K11": self.K11}

    def permuted(self, perm) -> "DiffusionCoupling":
        """Relabel edges: new edge ``i`` is old edge ``perm[i]``."""
        p = np.asarray(perm)
        return DiffusionCoupling(*(mat[np.ix_(p, p)] for mat in self.matrices().values()))


@dataclass(frozen=True, eq=False)
class TransportCoupling:
    B: np.ndarray

    def __post_init__(self):
        b = as_square_matrix(self.B, "B")
        b.setflags(write=False)
        object.__setattr__(self, "B", b)

    @property
    def m(self) -> int:
        return self.B.shape[0]

    def T_eps(self, eps: float) -> np.ndarray:
        """Vertex transmission matrix ``I + eps B``."""
        return np.eye(self.m) + eps * self.B


@dataclass(frozen=True)
class EdgeExchangeRates:
    """Fick-law exchange rates of a network of ``m`` edges.

    ``l[i]`` and ``r[i]`` are the exit rates through the left (x = 0) and right
    (x = 1) endpoints of edge ``i``.  ``l_pairs`` and ``r_pairs`` map
    ``(i, j, v)`` to the rate ``l_ij`` or ``r_ij``, where ``v`` in {0, 1} is the
    endpoint of edge ``j`` at the shared vertex.
    """

    l: tuple
    r: tuple
    l_pairs: dict = field(default_factory=dict)
    r_pairs: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.l)

    def validate(self):
        m = self.m
        if len(self.r) != m:
            raise ValueError(f"l and r must have equal length, got {m} and {len(self.r)}")
        as_vector(self.l, m, "l")
        as_vector(self.r, m, "r")
        for label, pairs in (("l_pairs", self.l_pairs), ("r_pairs", self.r_pairs)):
            for key, rate in pairs.items():
                if len(key) != 3:
                    raise ValueError(f"{label} key {key!r} must be (i, j, v)")
                i, j, v = key
                if not (0 <= i < m and 0 <= j < m):
                    raise ValueError(f"{label} key {key!r} references an edge outside 0..{m - 1}")
                if v not in (0, 1):
                    raise ValueError(f"{label} key {key!r} has endpoint tag {v}, expected 0 or 1")
                if not np.isfinite(rate):
                    raise ValueError(f"{label}[{key!r}] is not finite")
        r_nonzero = {(i, j) for (i, j, _), rate in self.r_pairs.items() if rate != 0}
        l_nonzero = {(i, j) for (i, j, _), rate in self.l_pairs.items() if rate != 0}
        both = sorted(r_nonzero & l_nonzero)
        if both:
            raise ValueError(f"edge pairs {both} have both r_ij and l_ij nonzero")

    def with_l_pair(self, key, rate) -> "EdgeExchangeRates":
        pairs = dict(self.l_pairs)
        pairs[key] = rate
        return EdgeExchangeRates(self.l, self.r, pairs, dict(self.r_pairs))


def aggregated_matrix(c: DiffusionCoupling) -> np.ndarray:
    """Generator of the lumped ODE: ``K10 - K00 + K11 - K01``."""
    return (c.K10 - c.K00) + (c.K11 - c.K01)


def auxiliary_sums(c: DiffusionCoupling):
    """Return ``(Kplus0, Kplus1, Kminus0, Kminus1)``.

    Kplus0 = K01 + K00, Kplus1 = K10 + K11, Kminus0 = K10 - K00, Kminus1 = K11 - K01.
    """
    return (c.K01 + c.K00, c.K10 + c.K11, c.K10 - c.K00, c.K11 - c.K01)


def adjoint_coupling(c: DiffusionCoupling) -> DiffusionCoupling:
    """Coupling of the dual problem: ``(K00^T, -K10^T, -K01^T, K11^T)``.

    If ``c`` describes the expected-value (Feller) process of a network, the
    returned coupling describes the evolution of densities in L1.  Its
    aggregated matrix is ``aggregated_matrix(c).T``.
    """
    return DiffusionCoupling(c.K00.T, -c.K10.T, -c.K01.T, c.K11.T)


def lumped_density_matrix(c: DiffusionCoupling) -> np.ndarray:
    """Lumped generator of the density formulation, ``aggregated_matrix(adjoint_coupling(c))``."""
    return aggregated_matrix(adjoint_coupling(c))


def check_diffusion_positivity(c: DiffusionCoupling, tol: float | None = None):
    """Sign criterion for a positive semigroup.

    Returns ``(ok, violations)`` where violations lists ``(matrix, i, j)`` for
    each offending entry: off-diagonal entries of -K00 and K11, and all entries
    of -K01 and K10, must be non-negative.
    """
    tol = structural_tolerance() if tol is None else tol
    violations = []
    checks = (("K00", -c.K00, True), ("K11", c.K11, True), ("K01", -c.K01, False), ("K10", c.K10, False))
    for name, mat, off_diagonal_only in checks:
        for i, j in zip(*np.nonzero(mat < -tol)):
            if off_diagonal_only and i == j:
                continue
            violations.append((name, int(i), int(j)))
    return not violations, violations


def check_markov_conditions(c: DiffusionCoupling, tol: float | None = None) -> bool:
    """Row-sum conditions ``sum_j (k00 + k01)_ij = 0`` and ``sum_j (k10 + k11)_ij = 0``.

    These make constants stationary for ``c`` and make the density (dual)
    formulation conserve total mass.
    """
    tol = structural_tolerance() if tol is None else tol
    left = (c.K00 + c.K01).sum(axis=1)
    right = (c.K10 + c.K11).sum(axis=1)
    return bool(np.all(np.abs(left) <= tol) and np.all(np.abs(right) <= tol))


def kolmogorov_check(k, tol: float | None = None) -> bool:
    """True iff off-diagonal entries are >= 0 and every column sums to 0."""
    tol = structural_tolerance() if tol is None else tol
    k = as_square_matrix(k, "K")
    off = k - np.diag(np.diag(k))
    return bool(np.all(off >= -tol) and np.all(np.abs(k.sum(axis=0)) <= tol))


def coupling_from_rates(rates: EdgeExchangeRates) -> DiffusionCoupling:
    """Build ``K00, K01, K10, K11`` from Fick-law exchange rates.

    k00_ij = -l_ij (v = 0), k01_ij = -l_ij (v = 1), k00_ii = l_i,
    k10_ij = r_ij (v = 0), k11_ij = r_ij (v = 1), k11_ii = -r_i.
    """
    rates.validate()
    m = rates.m
    k00, k01, k10, k11 = (np.zeros((m, m)) for _ in range(4))
    k00[np.diag_indices(m)] = rates.l
    k11[np.diag_indices(m)] = -np.asarray(rates.r, dtype=float)
    for (i, j, v), rate in rates.l_pairs.items():
        (k00 if v == 0 else k01)[i, j] -= rate
    for (i, j, v), rate in rates.r_pairs.items():
        (k10 if v == 0 else k11)[i, j] += rate
    return DiffusionCoupling(k00, k01, k10, k11)


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in np.nonzero(adj[node])[0]:
            if not seen[nxt]:
                seen[nxt] = True
                queue.append(nxt)
    return seen


def is_strongly_connected(t) -> bool:
    """Strong connectivity of the digraph with an arc j -> i whenever T_ij != 0."""
    t = as_square_matrix(t, "T")
    adj = (t != 0).T  # adj[j, i]: arc j -> i
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def perron_vector(t, tol: float = 1e-12, max_iter: int = PERRON_MAX_ITER) -> np.ndarray:
    """Stationary vector N >= 0 of an irreducible column-stochastic T with sum(N) = 1.

    Power iteration runs on the lazy matrix (I + T) / 2, which has the same
    fixed vectors as T but no periodic part, so it converges for periodic T too.
    """
    t = as_square_matrix(t, "T")
    m = t.shape[0]
    if np.any(t < -1e-10) or np.any(np.abs(t.sum(axis=0) - 1.0) > 1e-10):
        raise NotStochasticError("T must be nonnegative and column-stochastic within 1e-10")
    if not is_strongly_connected(t):
        raise ReducibleMatrixError("T is reducible: its nonzero pattern is not strongly connected")
    lazy = 0.5 * (np.eye(m) + t)
    n = np.full(m, 1.0 / m)
    for _ in range(max_iter):
        nxt = lazy @ n
        nxt /= nxt.sum()
        if np.max(np.abs(t @ nxt - nxt)) <= tol:
            return nxt
        n = nxt
    raise NoConvergenceError(f"power iteration did not reach residual {tol} in {max_iter} steps")


def kolmogorov_null_vector(k, tol: float = 1e-12) -> np.ndarray:
    """Normalized stationary distribution of an irreducible Kolmogorov matrix.

    Uses the Perron vector of ``I + sigma K`` with ``sigma = 1 / max|k_ii|``,
    which is column-stochastic and nonnegative.
    """
    k = as_square_matrix(k, "K")
    if not kolmogorov_check(k, tol=max(structural_tolerance(), 1e-12)):
        raise NotStochasticError("K must be a Kolmogorov matrix")
    diag = np.max(np.abs(np.diag(k)))
    if diag == 0:
        if k.shape[0] == 1:
            return np.ones(1)
        raise ReducibleMatrixError("K = 0 is reducible for m > 1")
    return perron_vector(np.eye(k.shape[0]) + k / diag, tol=tol)
