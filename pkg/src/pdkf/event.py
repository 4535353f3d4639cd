"""Event-triggered communication layer and filter round (time-invariant model).

An agent broadcasts its measurement-updated pair only when the information
gain over what its neighbors can already extrapolate exceeds a threshold:
g = λ_max(P̃⁻¹ − P̄̃⁻¹) − δ with P̄̃ the multi-step prediction of the last
broadcast.  Silent neighbors are substituted by that same extrapolation, so
the whole communication pattern is a deterministic function of the model and
thresholds — it never depends on measured data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filter import (AgentState, ConsistentEstimate, ci_fuse, measurement_update,
                     predict, project, symmetrize)
from .model import AgentSpec, SystemModel, Topology


@dataclass
class TriggerState:
    """Last broadcast pair of one agent plus its trigger threshold.

    The initial state counts as a broadcast at time 0, so extrapolation is
    always anchored.
    """

    last_x: np.ndarray
    last_P: np.ndarray
    last_time: int
    delta: float

    def __post_init__(self):
        self.last_x = np.asarray(self.last_x, dtype=float).ravel()
        self.last_P = np.asarray(self.last_P, dtype=float)
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class BroadcastMessage:
    sender: int
    x: np.ndarray
    P: np.ndarray
    k: int


def multi_step_prediction(P_t, A, Q, steps: int) -> np.ndarray:
    """Apply P ← A P Aᵀ + Q `steps` times (steps = 0 returns P_t unchanged)."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    P = np.asarray(P_t, dtype=float).copy()
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    for _ in range(steps):
        P = A @ P @ A.T + Q
    return P


def trigger_eval(P_tilde, P_bar_tilde, delta: float) -> tuple[float, bool]:
    """Trigger score and decision; fires only on strictly positive score."""
    g = information_gain(P_tilde, P_bar_tilde) - delta
    return g, bool(g > 0.0)


def information_gain(P_tilde, P_bar_tilde) -> float:
    """λ_max(P̃⁻¹ − P̄̃⁻¹) of two positive definite matrices."""
    diff = _inv_pd(P_tilde, "P_tilde") - _inv_pd(P_bar_tilde, "P_bar_tilde")
    sym = symmetrize(diff)
    scale = max(1.0, float(np.abs(sym).max()))
    if np.abs(diff - diff.T).max() > 1e-8 * scale:
        raise ValueError("information difference lost symmetry beyond tolerance")
    return float(np.linalg.eigvalsh(sym).max())


def _inv_pd(M, name: str) -> np.ndarray:
    M = symmetrize(np.asarray(M, dtype=float))
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return np.linalg.inv(M)


def resolve_neighbor_pair(trigger_state: TriggerState, k: int, A, Q,
                          incoming: BroadcastMessage | None) -> tuple[np.ndarray, np.ndarray]:
    """Pair a receiver uses for one neighbor at time k.

    A fresh broadcast is used verbatim (and becomes the new anchor); otherwise
    the last anchor is extrapolated forward k − t steps.
    """
    if incoming is not None:
        trigger_state.last_x = np.asarray(incoming.x, dtype=float).ravel()
        trigger_state.last_P = np.asarray(incoming.P, dtype=float)
        trigger_state.last_time = k
        return trigger_state.last_x.copy(), trigger_state.last_P.copy()
    steps = k - trigger_state.last_time
    if steps < 0:
        raise ValueError("trigger state is ahead of the current time")
    A = np.asarray(A, dtype=float)
    x = trigger_state.last_x.copy()
    for _ in range(steps):
        x = A @ x
    return x, multi_step_prediction(trigger_state.last_P, A, Q, steps)


def epdkf_round(states: list[AgentState], trigger_states: list[TriggerState],
                measurements, model: SystemModel, agents: list[AgentSpec],
                topology: Topology, k: int) -> tuple[list[AgentState], set[int]]:
    """Advance every agent one event-triggered step; returns the fired set.

    Phase 1 (all agents, then barrier): predict, measurement-update, evaluate
    own trigger and broadcast on fire.  Phase 2: fuse the own fresh pair with
    neighbor pairs (fresh if fired, extrapolated otherwise), then project once.
    """
    if not model.time_invariant:
        raise ValueError("event-triggered mode requires a time-invariant model")
    A, Q = model.A_at(0), model.Q_at(0)

    # Phase 1: local updates and trigger decisions against an immutable snapshot.
    fresh: list[ConsistentEstimate] = []
    fired: set[int] = set()
    messages: dict[int, BroadcastMessage] = {}
    for st, spec, ts in zip(states, agents, trigger_states):
        est = predict(st.estimate, A, Q)
        if spec.has_measurement:
            est = measurement_update(est, measurements[st.id], spec.H, spec.R)
        fresh.append(est)
        P_held = multi_step_prediction(ts.last_P, A, Q, k - ts.last_time)
        g, fire = trigger_eval(est.P, P_held, ts.delta)
        if fire:
            fired.add(st.id)
            messages[st.id] = BroadcastMessage(st.id, est.x.copy(), est.P.copy(), k)
            # the sender re-anchors on its own broadcast even if nobody listens
            ts.last_x, ts.last_P, ts.last_time = est.x.copy(), est.P.copy(), k

    # Phase 2: fusion with resolved neighbor pairs, one projection.
    new_states = []
    for i, spec in enumerate(agents):
        pairs = [(fresh[i].x, fresh[i].P)]
        weights = [topology.weights[i, i]]
        for j in _in_neighbors0(topology, i):
            x_j, P_j = resolve_neighbor_pair(trigger_states[j], k, A, Q,
                                             messages.get(j))
            pairs.append((x_j, P_j))
            weights.append(topology.weights[i, j])
        est = ci_fuse(pairs, weights)
        est = project(est, spec.D, spec.d, spec.eps)
        new_states.append(AgentState(i, est))
    return new_states, fired


def _in_neighbors0(topology: Topology, i: int) -> np.ndarray:
    nbrs = topology.in_neighbors(i)
    return nbrs[nbrs != i]
