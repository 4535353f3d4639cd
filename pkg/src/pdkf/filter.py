"""Time-based projected distributed Kalman filter.

One filter step per agent is: predict → measurement update → L synchronized
rounds of {covariance-intersection fusion over in-neighbors; constraint
projection}.  The carried pair (x̂, P) is kept *consistent*: the true error
second moment stays dominated by P in the PSD order, which covariance
intersection preserves under unknown cross-correlations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AgentSpec, SystemModel, Topology, matrix_rank

_JITTER = 1e-9
_PINV_RTOL = 1e-9


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _ensure_pd(P: np.ndarray) -> np.ndarray:
    """Symmetrize and, only if a Cholesky factorization fails, add jitter."""
    P = symmetrize(P)
    try:
        np.linalg.cholesky(P)
        return P
    except np.linalg.LinAlgError:
        return P + _JITTER * np.eye(P.shape[0])


def pinv(M: np.ndarray) -> np.ndarray:
    """Moore–Penrose inverse with singular values cut at 1e-9·σ_max."""
    return np.linalg.pinv(M, rcond=_PINV_RTOL)


@dataclass
class ConsistentEstimate:
    """State estimate x with parameter matrix P dominating the error moment."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.P = _ensure_pd(np.asarray(self.P, dtype=float))
        if self.P.shape != (self.x.size, self.x.size):
            raise ValueError("P shape does not match the state dimension")


@dataclass
class AgentState:
    id: int
    estimate: ConsistentEstimate


def init_consistent(x0_hat, P0, theta: float, x0_mean) -> ConsistentEstimate:
    """Initial pair covering both prior covariance and initialization bias.

    P = (1+θ)·P0 + ((θ+1)/θ)·(x̂0−x̄0)(x̂0−x̄0)ᵀ, which dominates the second
    moment of x̂0 − x0 for any θ > 0.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    x0_hat = np.asarray(x0_hat, dtype=float).ravel()
    x0_mean = np.asarray(x0_mean, dtype=float).ravel()
    bias = (x0_hat - x0_mean).reshape(-1, 1)
    P = (1.0 + theta) * np.asarray(P0, dtype=float) \
        + ((theta + 1.0) / theta) * (bias @ bias.T)
    return ConsistentEstimate(x0_hat, P)


def predict(est: ConsistentEstimate, A: np.ndarray, Q: np.ndarray) -> ConsistentEstimate:
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    return ConsistentEstimate(A @ est.x, A @ est.P @ A.T + Q)


def measurement_update(est: ConsistentEstimate, y, H, R) -> ConsistentEstimate:
    """Kalman measurement update; a zero H leaves the estimate untouched."""
    H = np.asarray(H, dtype=float)
    if H.size == 0 or not np.any(H != 0.0):
        return ConsistentEstimate(est.x.copy(), est.P.copy())
    y = np.asarray(y, dtype=float).ravel()
    R = np.asarray(R, dtype=float)
    S = H @ est.P @ H.T + R
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(
            f"innovation matrix is numerically singular (cond={cond:.3e})"
        )
    K = np.linalg.solve(S.T, (est.P @ H.T).T).T
    x = est.x + K @ (y - H @ est.x)
    P = (np.eye(est.P.shape[0]) - K @ H) @ est.P
    return ConsistentEstimate(x, P)


def ci_fuse(pairs, weights) -> ConsistentEstimate:
    """Covariance-intersection fusion: P = (Σ a_j P_j⁻¹)⁻¹, x = P Σ a_j P_j⁻¹ x_j.

    pairs: iterable of (x_j, P_j) or ConsistentEstimate; weights must be
    positive and sum to 1.
    """
    pairs = [(p.x, p.P) if isinstance(p, ConsistentEstimate) else p for p in pairs]
    weights = np.asarray(weights, dtype=float).ravel()
    if len(pairs) != weights.size:
        raise ValueError("one weight per fused pair required")
    if np.any(weights <= 0):
        raise ValueError("fusion weights must be positive")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("fusion weights must sum to 1")
    n = np.asarray(pairs[0][0]).size
    info = np.zeros((n, n))
    info_state = np.zeros(n)
    for a_j, (x_j, P_j) in zip(weights, pairs):
        P_j = np.asarray(P_j, dtype=float)
        if np.linalg.eigvalsh(symmetrize(P_j)).min() <= 0:
            raise ValueError("ci_fuse requires positive definite inputs")
        Pinv = np.linalg.inv(P_j)
        info += a_j * Pinv
        info_state += a_j * (Pinv @ np.asarray(x_j, dtype=float).ravel())
    P = np.linalg.inv(info)
    return ConsistentEstimate(P @ info_state, P)


def project(est: ConsistentEstimate, D, d, eps: float) -> ConsistentEstimate:
    """Project the estimate onto {x : D x = d} with a regularized P update.

    The state uses the exact oblique projection (pseudo-inverse), so D x̂ = d
    holds to machine precision; P is shrunk through (D P Dᵀ + eps·I)⁻¹, which
    keeps it positive definite and equals information addition DᵀD/eps.
    """
    D = np.asarray(D, dtype=float)
    if D.size == 0 or not np.any(D != 0.0):
        return ConsistentEstimate(est.x.copy(), est.P.copy())
    if matrix_rank(D) < D.shape[0]:
        raise ValueError("D must be all-zero or have full row rank")
    d = np.asarray(d, dtype=float).ravel()
    PDt = est.P @ D.T
    S = D @ PDt  # s×s, PD because P is
    x = est.x - PDt @ (pinv(S) @ (D @ est.x - d))
    P = est.P - PDt @ np.linalg.solve(S + eps * np.eye(S.shape[0]), PDt.T)
    return ConsistentEstimate(x, P)


def tpdkf_round(states: list[AgentState], measurements, model: SystemModel,
                agents: list[AgentSpec], topology: Topology, L: int,
                k: int = 1) -> list[AgentState]:
    """Advance every agent one time step.

    measurements: per-agent measurement vectors (entries for zero-H agents are
    ignored and may be None).  The L fusion-projection rounds are barrier
    synchronized: round l of every agent consumes round-l outputs of its
    in-neighbors, never mixed rounds.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    A = model.A_at(k - 1)
    Q = model.Q_at(k - 1)
    updated = []
    for st, spec in zip(states, agents):
        est = predict(st.estimate, A, Q)
        if spec.has_measurement:
            est = measurement_update(est, measurements[st.id], spec.H, spec.R)
        updated.append(est)

    current = updated
    for _ in range(L):
        fused = []
        for i, spec in enumerate(agents):
            nbrs = topology.in_neighbors(i)
            est = ci_fuse([current[j] for j in nbrs], topology.weights[i, nbrs])
            fused.append(project(est, spec.D, spec.d, spec.eps))
        current = fused

    return [AgentState(st.id, est) for st, est in zip(states, current)]
