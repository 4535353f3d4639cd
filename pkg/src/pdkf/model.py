"""Domain types for the networked estimation problem.

A `SystemModel` describes the shared linear dynamics, `AgentSpec` the per-agent
observation and equality-constraint blocks, `Topology` the directed communication
graph with its fusion weights, and `GlobalConstraint` the stacked independent
constraint rows that every agent's local constraint implies.

All types are plain value objects; validation happens at construction time and
every operation here is side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

_RANK_RTOL = 1e-9  # relative singular-value cutoff for rank decisions


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {M.shape}")
    return M


def _check_symmetric(M: np.ndarray, name: str, tol: float = 1e-8) -> None:
    if M.size == 0:
        return
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric")


def _is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    return bool(w.min() >= -tol * max(1.0, abs(w.max())))


def matrix_rank(M: np.ndarray) -> int:
    """Rank with the package-wide relative singular-value tolerance."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _RANK_RTOL * s[0]))


@dataclass(frozen=True)
class SystemModel:
    """Linear dynamics x_{k+1} = A_k x_k + w_k with E{w wᵀ} ≤ Q_k.

    A and Q may be single (n, n) matrices (time-invariant) or sequences of
    them, one per step.  `beta1`/`beta2` bound the squared singular values of
    every A_k and `q_lo`/`q_hi` sandwich every Q_k; when supplied they are
    *validated*, never inferred.
    """

    A: np.ndarray | list
    Q: np.ndarray | list
    x0_mean: np.ndarray
    P0: np.ndarray
    beta1: float | None = None
    beta2: float | None = None
    q_lo: np.ndarray | None = None
    q_hi: np.ndarray | None = None

    def __post_init__(self):
        A_seq = self._to_seq(self.A, "A")
        Q_seq = self._to_seq(self.Q, "Q")
        object.__setattr__(self, "A", A_seq)
        object.__setattr__(self, "Q", Q_seq)
        object.__setattr__(self, "x0_mean", np.asarray(self.x0_mean, dtype=float).ravel())
        object.__setattr__(self, "P0", _as_matrix(self.P0, "P0"))
        n = self.n
        if self.x0_mean.shape != (n,):
            raise ValueError("x0_mean length does not match state dimension")
        if self.P0.shape != (n, n):
            raise ValueError("P0 shape does not match state dimension")
        _check_symmetric(self.P0, "P0")
        if not _is_psd(self.P0):
            raise ValueError("P0 must be positive semidefinite")
        for k, Ak in enumerate(A_seq):
            if abs(np.linalg.det(Ak)) < 1e-300:
                raise ValueError(f"A[{k}] is singular")
            if self.beta1 is not None or self.beta2 is not None:
                sv2 = np.linalg.svd(Ak, compute_uv=False) ** 2
                if self.beta1 is not None and sv2.max() > self.beta1 * (1 + 1e-9):
                    raise ValueError(f"A[{k}] violates the declared upper bound beta1")
                if self.beta2 is not None and sv2.min() < self.beta2 * (1 - 1e-9):
                    raise ValueError(f"A[{k}] violates the declared lower bound beta2")
        for k, Qk in enumerate(Q_seq):
            _check_symmetric(Qk, f"Q[{k}]")
            if not _is_psd(Qk):
                raise ValueError(f"Q[{k}] must be positive semidefinite")
            if self.q_lo is not None and not _is_psd(Qk - np.asarray(self.q_lo)):
                raise ValueError(f"Q[{k}] violates the declared lower bound q_lo")
            if self.q_hi is not None and not _is_psd(np.asarray(self.q_hi) - Qk):
                raise ValueError(f"Q[{k}] violates the declared upper bound q_hi")

    @staticmethod
    def _to_seq(M, name):
        arr = np.asarray(M, dtype=float)
        if arr.ndim == 2:
            return [arr]
        if arr.ndim == 3:
            return [arr[k] for k in range(arr.shape[0])]
        raise ValueError(f"{name} must be one matrix or a sequence of matrices")

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def time_invariant(self) -> bool:
        return len(self.A) == 1 and len(self.Q) == 1

    def A_at(self, k: int) -> np.ndarray:
        return self.A[0] if len(self.A) == 1 else self.A[min(k, len(self.A) - 1)]

    def Q_at(self, k: int) -> np.ndarray:
        return self.Q[0] if len(self.Q) == 1 else self.Q[min(k, len(self.Q) - 1)]


@dataclass(frozen=True)
class AgentSpec:
    """Per-agent observation (H, R) and equality constraint (D, d, eps) blocks.

    H may be all-zero (a blind agent) and D may be all-zero (unconstrained).
    `eps` regularizes the covariance projection; `delta` is the event trigger
    threshold used by the event-triggered filter.
    """

    H: np.ndarray
    R: np.ndarray
    D: np.ndarray
    d: np.ndarray
    eps: float = 0.01
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "H", _as_matrix(self.H, "H"))
        object.__setattr__(self, "R", _as_matrix(self.R, "R"))
        object.__setattr__(self, "D", _as_matrix(self.D, "D"))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).ravel())
        if self.H.shape[0] != self.R.shape[0]:
            raise ValueError("H and R disagree on measurement dimension")
        _check_symmetric(self.R, "R")
        if self.R.shape[0] and np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")
        if self.D.shape[0] != self.d.shape[0]:
            raise ValueError("D and d disagree on constraint dimension")
        if self.has_constraint and matrix_rank(self.D) < self.D.shape[0]:
            raise ValueError("D must be all-zero or have full row rank")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")

    @property
    def has_constraint(self) -> bool:
        return self.D.size > 0 and np.any(self.D != 0.0)

    @property
    def has_measurement(self) -> bool:
        return self.H.size > 0 and np.any(self.H != 0.0)


@dataclass(frozen=True)
class Topology:
    """Directed communication graph with row-stochastic fusion weights.

    `weights[i, j] > 0` means agent i uses (receives) agent j's estimate.  The
    diagonal must be positive and the off-diagonal support must be strongly
    connected.  `edges` holds the boolean support of `weights`.
    """

    weights: np.ndarray
    edges: np.ndarray = field(init=False)

    def __post_init__(self):
        W = _as_matrix(self.weights, "weights")
        if W.shape[0] != W.shape[1]:
            raise ValueError("weights must be square")
        if np.any(W < -1e-15):
            raise ValueError("weights must be nonnegative")
        W = np.where(W < 0, 0.0, W)
        row_sums = W.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-12:
            raise ValueError("weight rows must each sum to 1")
        if np.any(np.diag(W) <= 0):
            raise ValueError("diagonal weights must be positive")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "edges", W > 0)
        n_comp, _ = connected_components(csr_matrix(self.edges), directed=True,
                                         connection="strong")
        if n_comp != 1:
            raise ValueError("communication graph must be strongly connected")

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    def in_neighbors(self, i: int) -> np.ndarray:
        """Indices j (including i) whose estimates agent i fuses."""
        return np.flatnonzero(self.edges[i])

    def out_neighbors0(self, i: int) -> np.ndarray:
        """Indices j ≠ i that receive agent i's broadcasts."""
        out = np.flatnonzero(self.edges[:, i])
        return out[out != i]

    def out_degree0(self, i: int) -> int:
        return int(self.out_neighbors0(i).size)


@dataclass(frozen=True)
class GlobalConstraint:
    """Stacked independent constraint rows Dbar x = dbar implied by all agents."""

    Dbar: np.ndarray
    dbar: np.ndarray
    varpi: float | None = None

    def __post_init__(self):
        Dbar = np.asarray(self.Dbar, dtype=float)
        if Dbar.ndim != 2:
            Dbar = Dbar.reshape(0, 0) if Dbar.size == 0 else np.atleast_2d(Dbar)
        object.__setattr__(self, "Dbar", Dbar)
        object.__setattr__(self, "dbar", np.asarray(self.dbar, dtype=float).ravel())
        if Dbar.shape[0] != self.dbar.shape[0]:
            raise ValueError("Dbar and dbar disagree on the number of rows")
        if self.s_bar == 0:
            return
        if matrix_rank(Dbar) < Dbar.shape[0]:
            raise ValueError("Dbar must have full row rank")
        if self.varpi is not None:
            gram_eigs = np.linalg.eigvalsh(Dbar @ Dbar.T)
            if gram_eigs.min() < self.varpi * (1 - 1e-9) or gram_eigs.max() > 1 + 1e-9:
                raise ValueError(
                    "Dbar·Dbarᵀ violates the declared bounds "
                    f"[{self.varpi}, 1]: eigenvalues in "
                    f"[{gram_eigs.min():.3g}, {gram_eigs.max():.3g}]"
                )

    @property
    def s_bar(self) -> int:
        return self.Dbar.shape[0]

    @property
    def empty(self) -> bool:
        return self.s_bar == 0


def metropolis_weights(adjacency) -> np.ndarray:
    """Build row-stochastic consensus weights from an undirected graph.

    adjacency: symmetric boolean/0-1 matrix without self-loops.  Off-diagonal
    weight for an edge {i, j} is 1/(1 + max(deg(i), deg(j))); the diagonal
    takes the remaining mass.  Rejects disconnected graphs.
    """
    adj = np.asarray(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if adj.T is not adj and not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric (undirected graph)")
    if np.any(np.diag(adj)):
        raise ValueError("adjacency must not contain self-loops")
    N = adj.shape[0]
    n_comp, labels = connected_components(csr_matrix(adj), directed=False)
    if n_comp != 1 and N > 1:
        comps = [list(np.flatnonzero(labels == c)) for c in range(n_comp)]
        raise ValueError(f"graph is disconnected; components: {comps}")
    deg = adj.sum(axis=1)
    W = np.zeros((N, N))
    for i in range(N):
        for j in np.flatnonzero(adj[i]):
            W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, i] = 1.0 - W[i].sum()
    return W


def build_global_constraint(agents: list[AgentSpec],
                            varpi: float | None = None) -> GlobalConstraint:
    """Stack all agents' nonzero constraint rows into one independent system.

    Linearly dependent rows are dropped after a consistency check (a dependent
    row whose right-hand side disagrees with the rows that span it makes the
    constraint set empty → rejected).  Kept rows are normalized to unit norm
    and the stacked pair rescaled so Dbar·Dbarᵀ ≤ I.
    """
    rows, rhs = [], []
    for a in agents:
        if a.has_constraint:
            for r, c in zip(a.D, a.d):
                rows.append(np.asarray(r, dtype=float))
                rhs.append(float(c))
    if not rows:
        n = agents[0].H.shape[1] if agents else 0
        return GlobalConstraint(np.zeros((0, n)), np.zeros(0), varpi)

    kept_rows: list[np.ndarray] = []
    kept_rhs: list[float] = []
    for r, c in zip(rows, rhs):
        if kept_rows:
            stacked = np.vstack(kept_rows + [r])
            if matrix_rank(stacked) == len(kept_rows):
                # r is spanned by the kept rows; its rhs must agree
                coeff, *_ = np.linalg.lstsq(np.vstack(kept_rows).T, r, rcond=None)
                implied = float(coeff @ np.asarray(kept_rhs))
                scale = max(1.0, abs(c), abs(implied))
                if abs(implied - c) > 1e-8 * scale:
                    raise ValueError(
                        "inconsistent constraints: a dependent row has "
                        f"right-hand side {c} but the spanning rows imply {implied}"
                    )
                continue
        norm = np.linalg.norm(r)
        if norm < 1e-300:
            continue
        kept_rows.append(r / norm)
        kept_rhs.append(c / norm)

    Dbar = np.vstack(kept_rows)
    dbar = np.asarray(kept_rhs)
    smax = np.linalg.svd(Dbar, compute_uv=False)[0]
    if smax > 1.0:
        Dbar = Dbar / smax
        dbar = dbar / smax
    if varpi is None:
        varpi = float(np.linalg.eigvalsh(Dbar @ Dbar.T).min())
    return GlobalConstraint(Dbar, dbar, varpi)
