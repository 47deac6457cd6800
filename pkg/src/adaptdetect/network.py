"""Network topologies, combination matrices and the matrix-power weight kernel.

Agents are indexed from 0.  Neighborhoods are undirected and always contain
the agent itself.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Sequence
from os import PathLike

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigs

__all__ = [
    "Topology",
    "CombinationMatrix",
    "WeightKernel",
    "ConvergenceError",
    "build_metropolis",
    "build_uniform_averaging",
    "build_explicit",
    "build_combination",
    "perron_vector",
    "second_eigenvalue_magnitude",
    "build_weight_kernel",
    "horizon_for",
    "ring",
    "path",
    "star",
    "full",
    "reference_topology",
    "load_topology",
]

ROW_SUM_TOL = 1e-12
POWER_CACHE_TOL = 1e-14
DENSE_EIG_MAX_S = 64


class ConvergenceError(RuntimeError):
    """Raised when an iterative spectral computation fails to converge."""


class Topology:
    """Undirected graph on ``S`` agents with implied self-loops."""

    def __init__(self, adjacency: np.ndarray):
        adj = np.array(adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency is not symmetric; directed topologies are not supported")
        np.fill_diagonal(adj, True)
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise ValueError(f"topology is disconnected ({n_comp} components)")
        adj.setflags(write=False)
        self._adj = adj

    @classmethod
    def from_edges(cls, S: int, edges: Iterable[Sequence[int]]) -> "Topology":
        if int(S) != S or S < 1:
            raise ValueError(f"S must be a positive integer, got {S!r}")
        S = int(S)
        adj = np.zeros((S, S), dtype=bool)
        for edge in edges:
            if len(edge) != 2:
                raise ValueError(f"edge must have two endpoints, got {edge!r}")
            k, l = (int(v) for v in edge)
            if not (0 <= k < S and 0 <= l < S):
                raise ValueError(f"edge {edge!r} out of range for S={S}")
            adj[k, l] = adj[l, k] = True
        return cls(adj)

    @property
    def S(self) -> int:
        return self._adj.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    @property
    def degrees(self) -> np.ndarray:
        """Neighborhood sizes ``n_k`` (self included)."""
        return self._adj.sum(axis=1)

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self._adj[k])

    def edges(self) -> list[tuple[int, int]]:
        ks, ls = np.nonzero(np.triu(self._adj, k=1))
        return [(int(a), int(b)) for a, b in zip(ks, ls)]

    def to_dict(self) -> dict:
        return {"S": self.S, "edges": [list(e) for e in self.edges()]}

    def __repr__(self) -> str:
        return f"Topology(S={self.S}, edges={len(self.edges())})"


def ring(S: int) -> Topology:
    if S < 3:
        return path(S)
    return Topology.from_edges(S, [(k, (k + 1) % S) for k in range(S)])


def path(S: int) -> Topology:
    return Topology.from_edges(S, [(k, k + 1) for k in range(S - 1)])


def star(S: int, center: int = 0) -> Topology:
    return Topology.from_edges(S, [(center, k) for k in range(S) if k != center])


def full(S: int) -> Topology:
    return Topology.from_edges(S, [(k, l) for k in range(S) for l in range(k + 1, S)])


# Stand-in 10-agent network.  Agent 3 is the best connected, agents 1, 7 and 9
# the least; agent 4 sits in between.  Metropolis weights give lambda2 ~ 0.82
# and uniform averaging gives lambda2 ~ 0.70.
_REFERENCE_EDGES = (
    (0, 2), (0, 4), (0, 5), (0, 6), (1, 5), (1, 7), (2, 3), (2, 6), (2, 9),
    (3, 4), (3, 6), (3, 7), (3, 8), (4, 8), (5, 6), (5, 8), (8, 9),
)


def reference_topology() -> Topology:
    """The 10-agent reference network used by the examples and comparisons."""
    return Topology.from_edges(10, _REFERENCE_EDGES)


def load_topology(source: str | PathLike | dict) -> Topology:
    """Read ``{"S": int, "edges": [[k, l], ...]}`` from a path or a parsed dict."""
    if isinstance(source, dict):
        data = source
    else:
        with open(source) as fh:
            data = json.load(fh)
    if not isinstance(data, dict) or "S" not in data:
        raise ValueError("topology JSON must be an object with keys 'S' and 'edges'")
    return Topology.from_edges(data["S"], data.get("edges", []))


def second_eigenvalue_magnitude(A: np.ndarray) -> float:
    """Second largest eigenvalue magnitude of a right-stochastic matrix."""
    A = np.asarray(A, dtype=float)
    S = A.shape[0]
    if S == 1:
        return 0.0
    if S <= DENSE_EIG_MAX_S:
        mags = np.sort(np.abs(np.linalg.eigvals(A)))[::-1]
        return float(mags[1])
    vals = eigs(A, k=2, which="LM", return_eigenvectors=False, tol=1e-12)
    mags = np.sort(np.abs(vals))[::-1]
    return float(mags[1])


def perron_vector(A, max_iter: int = 100_000, tol: float = 1e-13) -> np.ndarray:
    """Left Perron eigenvector ``p`` of ``A`` (``pA = p``, positive, summing to one).

    Computed by power iteration on ``p <- pA``.  Raises ConvergenceError when
    the second eigenvalue magnitude is one (the limit is then not unique) or
    when the iteration cap is hit.
    """
    M = A.matrix if isinstance(A, CombinationMatrix) else np.asarray(A, dtype=float)
    S = M.shape[0]
    lam2 = A.lambda2 if isinstance(A, CombinationMatrix) else second_eigenvalue_magnitude(M)
    if lam2 >= 1.0 - 1e-10:
        raise ConvergenceError(
            f"second eigenvalue magnitude is {lam2:.12g}; the Perron vector is not a unique limit"
        )
    p = np.full(S, 1.0 / S)
    for _ in range(max_iter):
        q = p @ M
        q /= q.sum()
        if np.max(np.abs(q - p)) <= tol:
            p = q
            break
        p = q
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")
    if np.any(p <= 0):
        raise ConvergenceError("Perron vector has non-positive entries; matrix is not primitive")
    return _polish(M, p)


def _polish(M: np.ndarray, p: np.ndarray) -> np.ndarray:
    # one direct solve of p(A - I) = 0 with sum(p) = 1 removes the
    # power-iteration stopping error; kept only if it does not worsen the residual
    S = M.shape[0]
    lhs = (M - np.eye(S)).T
    lhs[-1] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    try:
        q = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return p
    if np.all(q > 0) and np.max(np.abs(q @ M - q)) <= np.max(np.abs(p @ M - p)):
        return q
    return p


class CombinationMatrix:
    """Validated right-stochastic combination matrix ``A``."""

    def __init__(self, matrix, topology: Topology | None = None, rule: str = "explicit"):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"combination matrix must be square, got shape {A.shape}")
        if np.any(A < 0):
            raise ValueError("combination matrix has negative entries")
        row_err = np.max(np.abs(A.sum(axis=1) - 1.0))
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"rows do not sum to one (max deviation {row_err:.3g})")
        if topology is not None:
            if topology.S != A.shape[0]:
                raise ValueError(f"matrix size {A.shape[0]} does not match topology S={topology.S}")
            outside = (A != 0) & ~topology.adjacency
            if np.any(outside):
                k, l = np.argwhere(outside)[0]
                raise ValueError(f"a[{k},{l}] is nonzero but {l} is not a neighbor of {k}")
        lam2 = second_eigenvalue_magnitude(A)
        if lam2 >= 1.0 - 1e-10:
            raise ValueError(f"second eigenvalue magnitude {lam2:.6g} is not below one")
        A.setflags(write=False)
        self.matrix = A
        self.topology = topology
        self.rule = rule
        self.lambda2 = lam2

    @property
    def S(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_doubly_stochastic(self) -> bool:
        return bool(np.max(np.abs(self.matrix.sum(axis=0) - 1.0)) <= ROW_SUM_TOL)

    def __repr__(self) -> str:
        return f"CombinationMatrix(S={self.S}, rule={self.rule!r}, lambda2={self.lambda2:.4f})"


def build_metropolis(topology: Topology) -> CombinationMatrix:
    """Metropolis weights ``1/max(n_k, n_l)`` off the diagonal, residual on it."""
    n = topology.degrees
    adj = topology.adjacency
    A = np.where(adj, 1.0 / np.maximum.outer(n, n), 0.0)
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, 1.0 - A.sum(axis=1))
    return CombinationMatrix(A, topology, rule="metropolis")


def build_uniform_averaging(topology: Topology) -> CombinationMatrix:
    """Uniform averaging ``a_{k,l} = 1/n_k`` over the neighborhood of ``k``."""
    n = topology.degrees
    A = topology.adjacency / n[:, None]
    return CombinationMatrix(A, topology, rule="uniform_averaging")


def build_explicit(topology: Topology | None, matrix) -> CombinationMatrix:
    return CombinationMatrix(matrix, topology, rule="explicit")


def build_combination(rule: str, topology: Topology, matrix=None) -> CombinationMatrix:
    if rule == "metropolis":
        return build_metropolis(topology)
    if rule == "uniform_averaging":
        return build_uniform_averaging(topology)
    if rule == "explicit":
        if matrix is None:
            raise ValueError("explicit combination rule requires a matrix")
        return build_explicit(topology, matrix)
    raise ValueError(f"unknown combination rule {rule!r}")


def horizon_for(mu: float, trunc_tol: float) -> int:
    """Smallest ``N`` with ``(1 - mu)**N <= trunc_tol``."""
    if not 0.0 < mu < 1.0:
        raise ValueError(f"step-size must lie in (0, 1), got {mu!r}")
    if not 0.0 < trunc_tol < 1.0:
        raise ValueError(f"trunc_tol must lie in (0, 1), got {trunc_tol!r}")
    N = math.ceil(math.log(trunc_tol) / math.log1p(-mu))
    while (1.0 - mu) ** N > trunc_tol:
        N += 1
    return max(N, 1)


class WeightKernel:
    """Powers ``B_i = A^i`` for ``i = 1..horizon`` together with their limit ``1 p``.

    Only the first ``n_cached`` powers are stored; later rows equal the Perron
    vector to working precision and are served from it.  Instances are
    read-only after construction.
    """

    def __init__(self, A: CombinationMatrix, mu: float, trunc_tol: float = 1e-12):
        self.A = A
        self.mu = float(mu)
        self.trunc_tol = float(trunc_tol)
        self.horizon = horizon_for(self.mu, self.trunc_tol)
        self.perron = perron_vector(A)
        self.perron.setflags(write=False)
        self.lambda2 = A.lambda2

        limit = np.broadcast_to(self.perron, A.matrix.shape)
        powers = []
        B = A.matrix.copy()
        gaps = []
        for i in range(1, self.horizon + 1):
            if i > 1:
                B = B @ A.matrix
            B.setflags(write=False)
            powers.append(B)
            gap = float(np.max(np.abs(B - limit)))
            gaps.append(gap)
            if gap < POWER_CACHE_TOL:
                break
        self.powers = tuple(powers)
        self.power_gaps = np.array(gaps)
        self.power_gaps.setflags(write=False)
        # sup_i gap_i / lambda2**i over the cached range
        if self.lambda2 > 0.0:
            idx = np.arange(1, len(gaps) + 1)
            with np.errstate(over="ignore", divide="ignore"):
                ratios = self.power_gaps / self.lambda2 ** idx
            self.decay_constant = float(np.max(ratios[np.isfinite(ratios)], initial=0.0))
        else:
            self.decay_constant = 0.0

        self.discount = (1.0 - self.mu) ** np.arange(self.horizon)
        self.discount.setflags(write=False)

    @property
    def S(self) -> int:
        return self.A.S

    @property
    def n_cached(self) -> int:
        return len(self.powers)

    def rows(self, k: int) -> np.ndarray:
        """``b_{k,l}(i)`` as an array of shape (horizon, S)."""
        if not 0 <= k < self.S:
            raise IndexError(f"agent {k} out of range for S={self.S}")
        out = np.empty((self.horizon, self.S))
        m = min(self.n_cached, self.horizon)
        out[:m] = [B[k] for B in self.powers[:m]]
        out[m:] = self.perron
        return out

    def weights(self, k: int) -> np.ndarray:
        """``(1 - mu)^(i-1) b_{k,l}(i)``, shape (horizon, S)."""
        return self.discount[:, None] * self.rows(k)

    def xi(self, k: int) -> np.ndarray:
        """Steady-state coefficients ``mu (1 - mu)^(i-1) b_{k,l}(i)``, shape (horizon, S)."""
        return self.mu * self.weights(k)

    def xi_power_sum(self, k: int, r: int) -> float:
        """Untruncated ``sum_i sum_l xi_{i,l}^r``.

        Cached powers are summed directly and the remainder, where the rows
        equal ``p``, is a geometric series in closed form.
        """
        m = self.n_cached
        head = self.mu * self.discount[:m, None] * np.array([B[k] for B in self.powers[:m]])
        q = (1.0 - self.mu) ** r
        tail = (self.mu ** r) * np.sum(self.perron ** r) * q ** m / (1.0 - q)
        return math.fsum(np.ravel(head ** r)) + tail

    def __repr__(self) -> str:
        return (
            f"WeightKernel(S={self.S}, mu={self.mu}, horizon={self.horizon}, "
            f"cached={self.n_cached}, lambda2={self.lambda2:.4f})"
        )


def build_weight_kernel(A: CombinationMatrix, mu: float, trunc_tol: float = 1e-12) -> WeightKernel:
    return WeightKernel(A, mu, trunc_tol)
