"""Synchronous-round network simulator and Monte Carlo harness.

The propagation engine exploits the fact that, conditional on the trigger
pattern (which never depends on measured data), every filter step is an
affine map of the previous estimates and the current measurements.  All
covariance-side quantities -- gains, fusion coefficients, projection maps,
trigger decisions -- are computed once per scenario, and the per-trial state
vectors are then pushed through as (n, trials) blocks.

Reproducibility contract: the master seed is split with
``np.random.SeedSequence(seed).spawn(trials)`` and trial j draws from
``default_rng(children[j])`` in a fixed order: x0 (n,), the process-noise
block (T, n), then one measurement-noise block (T, m_i) per agent in agent
order.  Identical config + seed therefore reproduces bit-identical output.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import yaml

from . import filter as filt
from .analysis import space_decomposition
from .model import (AgentSpec, GlobalConstraint, SystemModel, Topology,
                    build_global_constraint, metropolis_weights)

# Road alignment used by the vehicle scenarios: heading 60 degrees, so
# x1 = tan(60°)·x2 and x3 = tan(60°)·x4.
ROAD_D = np.array([[1.0, -np.sqrt(3.0), 0.0, 0.0],
                   [0.0, 0.0, 1.0, -np.sqrt(3.0)]])


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ScenarioConfig:
    model: SystemModel
    agents: list
    topology: Topology
    T: int
    L: int = 1
    mode: str = "time"            # "time" or "event"
    trials: int = 1
    seed: int = 0
    theta: float = 1.0
    x0_hat: np.ndarray | None = None     # (n,) shared or (N, n); None -> x0_mean
    P0_init: np.ndarray | None = None    # explicit initial covariance override
    x0_cov: np.ndarray | None = None     # truth initial covariance; None -> model.P0
    sim_q: np.ndarray | None = None      # actual process noise; None -> model Q
    sim_r: list | None = None            # actual measurement noise; None -> agent R
    checkpoints: tuple = (50, 150, 250)
    name: str = "scenario"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("horizon T must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.mode not in ("time", "event"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "time" and self.L < 1:
            raise ValueError("L must be at least 1 in time-based mode")
        if len(self.agents) != self.topology.N:
            raise ValueError("one AgentSpec per topology node required")
        for attr in ("x0_hat", "P0_init", "x0_cov", "sim_q"):
            v = getattr(self, attr)
            if v is not None:
                object.__setattr__(self, attr, np.asarray(v, dtype=float))
        self.checkpoints = tuple(int(k) for k in self.checkpoints)

    # -- derived pieces ----------------------------------------------------

    def x0_hat_matrix(self) -> np.ndarray:
        """(N, n) initial estimates; a single vector is shared by all agents."""
        N, n = self.topology.N, self.model.n
        if self.x0_hat is None:
            return np.tile(self.model.x0_mean, (N, 1))
        x = np.asarray(self.x0_hat, dtype=float)
        if x.ndim == 1:
            return np.tile(x, (N, 1))
        if x.shape != (N, n):
            raise ValueError(f"x0_hat must be (n,) or (N, n), got {x.shape}")
        return x

    def initial_pairs(self) -> list:
        """Per-agent (x0_hat_i, P0_i); P0 from the explicit override when given,
        otherwise from the consistent-initialization rule."""
        xs = self.x0_hat_matrix()
        out = []
        for i in range(self.topology.N):
            if self.P0_init is not None:
                out.append((xs[i], np.array(self.P0_init, dtype=float)))
            else:
                est = filt.init_consistent(xs[i], self.model.P0, self.theta,
                                           self.model.x0_mean)
                out.append((est.x, est.P))
        return out

    def sim_q_at(self, k: int) -> np.ndarray:
        return self.sim_q if self.sim_q is not None else self.model.Q_at(k)

    def sim_r_of(self, i: int) -> np.ndarray:
        if self.sim_r is not None and self.sim_r[i] is not None:
            return np.asarray(self.sim_r[i], dtype=float)
        return self.agents[i].R


@dataclass
class RunMetrics:
    mse: np.ndarray
    trace_p: np.ndarray
    lambda_: float
    lambda_running: np.ndarray
    constraint_residuals: np.ndarray      # per-step max_i ||D_i x_hat - d_i||_inf
    mean_error_norm: np.ndarray           # per-step ||mean error||_2 (bias decay)
    trigger_log: list = field(default_factory=list)   # (step, agent, g, fired)
    trials: int = 1
    seed: int = 0
    checkpoints: tuple = ()
    trace_p_agent: np.ndarray | None = None               # (T+1, N)
    sample_moment: dict = field(default_factory=dict)     # (k, i) -> (n, n)
    P_checkpoint: dict = field(default_factory=dict)      # (k, i) -> (n, n)
    constraint_sq: dict = field(default_factory=dict)     # (k, i) -> scalar

    def fired_sets(self) -> dict:
        out: dict = {}
        for k, i, _g, fired in self.trigger_log:
            if fired:
                out.setdefault(k, set()).add(i)
        return out


# ---------------------------------------------------------------------------
# truth and measurement generation


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    if w.min() < -1e-10 * max(w.max(), 1.0):
        raise ValueError("covariance matrix must be positive semidefinite")
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def _affine_projector(gc: GlobalConstraint):
    """Returns (project_onto_set, tangent_projector) for the global constraint."""
    if gc.empty:
        return (lambda x: x), np.eye(0)
    Dbar, dbar = gc.Dbar, gc.dbar
    G = Dbar.T @ np.linalg.inv(Dbar @ Dbar.T)

    def proj(x):
        return x - G @ (Dbar @ x - dbar.reshape(-1, *([1] * (x.ndim - 1))))

    tangent = np.eye(Dbar.shape[1]) - G @ Dbar
    return proj, tangent


def generate_truth(cfg: ScenarioConfig, rng: np.random.Generator,
                   gc: GlobalConstraint | None = None):
    """One trial of the true trajectory and all agent measurements.

    x0 is drawn from the configured initial distribution and projected onto
    the global constraint set; process noise is projected onto the constraint
    tangent space so D̄·x_k = d̄ holds at every step.  Returns
    (states (T+1, n), [per-agent measurements (T, m_i)]); measurement row
    k-1 belongs to step k.
    """
    model, T, n = cfg.model, cfg.T, cfg.model.n
    if gc is None:
        gc = build_global_constraint(cfg.agents)
    proj, tangent = _affine_projector(gc)

    x0_cov = cfg.x0_cov if cfg.x0_cov is not None else cfg.model.P0
    x0 = model.x0_mean + _psd_sqrt(x0_cov) @ rng.standard_normal(n)
    x0 = proj(x0)

    W = rng.standard_normal((T, n))
    if cfg.sim_q is not None or model.time_invariant:
        W = W @ _psd_sqrt(cfg.sim_q_at(0)).T
    else:
        W = np.vstack([W[k] @ _psd_sqrt(cfg.sim_q_at(k)).T for k in range(T)])
    if not gc.empty:
        W = W @ tangent.T

    X = np.empty((T + 1, n))
    X[0] = x0
    for k in range(T):
        X[k + 1] = proj(model.A_at(k) @ X[k] + W[k])

    Y = []
    for i, a in enumerate(cfg.agents):
        m = a.H.shape[0]
        V = rng.standard_normal((T, m))   # drawn even if unused: fixed stream order
        if a.has_measurement:
            Y.append(X[1:] @ a.H.T + V @ _psd_sqrt(cfg.sim_r_of(i)).T)
        else:
            Y.append(np.zeros((T, m)))
    return X, Y


def _noise_blocks(cfg: ScenarioConfig, trials: int, seed: int,
                  truth_cfg: ScenarioConfig | None = None):
    """Stacked truth/measurement blocks: X (T+1, n, trials), Y_i (T, m_i, trials)."""
    src = truth_cfg if truth_cfg is not None else cfg
    gc = build_global_constraint(src.agents)
    T, n = src.T, src.model.n
    X = np.empty((T + 1, n, trials))
    Y = [np.empty((T, a.H.shape[0], trials)) for a in src.agents]
    for j, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(child)
        Xj, Yj = generate_truth(src, rng, gc)
        X[:, :, j] = Xj
        for i in range(len(src.agents)):
            Y[i][:, :, j] = Yj[i]
    return X, Y, gc


# ---------------------------------------------------------------------------
# precomputed per-step filter maps


@dataclass
class _Step:
    K: list                 # per agent: gain or None
    rounds: list            # per fusion-projection round: (coeffs, G, c)
    P: list                 # per agent posterior covariance after the step
    g: list = field(default_factory=list)      # event mode trigger statistics
    fired: list = field(default_factory=list)  # event mode fired flags


def _predict_update_P(P, model, agent, k):
    A, Q = model.A_at(k - 1), model.Q_at(k - 1)
    Pb = filt.symmetrize(A @ P @ A.T + Q)
    if not agent.has_measurement:
        return Pb, None
    H, R = agent.H, agent.R
    S = H @ Pb @ H.T + R
    K = np.linalg.solve(S.T, (Pb @ H.T).T).T
    Pt = filt.symmetrize((np.eye(model.n) - K @ H) @ Pb)
    return Pt, K


def _projection_maps(Pc, agent, n):
    """Affine state map (G, c) and posterior covariance of one projection."""
    if not agent.has_constraint:
        return np.eye(n), np.zeros(n), Pc
    D, d, eps = agent.D, agent.d, agent.eps
    Mstate = Pc @ D.T @ filt.pinv(D @ Pc @ D.T)
    G = np.eye(n) - Mstate @ D
    c = Mstate @ d
    Pp = filt.symmetrize(Pc - Pc @ D.T @ np.linalg.solve(
        D @ Pc @ D.T + eps * np.eye(D.shape[0]), D @ Pc))
    return G, c, Pp


def _fusion_maps(P_list, topology, n):
    """Per-agent CI coefficients: [(j, C_ij)] with C_ij = P̌_i a_ij P_j^{-1}."""
    infos = [np.linalg.inv(P) for P in P_list]
    coeffs = []
    Pcs = []
    for i in range(topology.N):
        omega = np.zeros((n, n))
        terms = []
        for j in topology.in_neighbors(i):
            w = topology.weights[i, j]
            omega += w * infos[j]
            terms.append((j, w * infos[j]))
        Pc = filt.symmetrize(np.linalg.inv(omega))
        coeffs.append([(j, Pc @ M) for j, M in terms])
        Pcs.append(Pc)
    return coeffs, Pcs


def _tpdkf_path(cfg: ScenarioConfig) -> list:
    """Covariance-side pass of the time-based filter; one _Step per k."""
    model, topo, agents, n = cfg.model, cfg.topology, cfg.agents, cfg.model.n
    P = [p for _, p in cfg.initial_pairs()]
    steps = []
    for k in range(1, cfg.T + 1):
        Ks = []
        Pt = []
        for i, a in enumerate(agents):
            p, Kg = _predict_update_P(P[i], model, a, k)
            Pt.append(p)
            Ks.append(Kg)
        rounds = []
        for _l in range(cfg.L):
            coeffs, Pcs = _fusion_maps(Pt, topo, n)
            Gs, cs, Pp = [], [], []
            for i, a in enumerate(agents):
                G, c, p = _projection_maps(Pcs[i], a, n)
                Gs.append(G)
                cs.append(c)
                Pp.append(p)
            rounds.append((coeffs, Gs, cs))
            Pt = Pp
        P = Pt
        steps.append(_Step(K=Ks, rounds=rounds, P=[p.copy() for p in P]))
    return steps


def _epdkf_path(cfg: ScenarioConfig) -> list:
    """Covariance-side pass of the event-triggered filter (trigger pattern
    is measurement-free, so it is fully decided here)."""
    model, topo, agents, n = cfg.model, cfg.topology, cfg.agents, cfg.model.n
    if not model.time_invariant:
        raise ValueError("event-triggered mode requires a time-invariant model")
    A, Q = model.A_at(0), model.Q_at(0)
    pairs = cfg.initial_pairs()
    P = [p for _, p in pairs]
    held_P = [p.copy() for _, p in pairs]   # anchors: initial time is a broadcast
    steps = []
    for k in range(1, cfg.T + 1):
        held_P = [filt.symmetrize(A @ hp @ A.T + Q) for hp in held_P]
        Ks, Pt = [], []
        for i, a in enumerate(agents):
            p, Kg = _predict_update_P(P[i], model, a, k)
            Pt.append(p)
            Ks.append(Kg)
        gs, fired = [], []
        for i in range(topo.N):
            diff = filt.symmetrize(np.linalg.inv(Pt[i]) - np.linalg.inv(held_P[i]))
            g = float(np.linalg.eigvalsh(diff).max()) - agents[i].delta
            gs.append(g)
            fired.append(g > 0.0)
            if g > 0.0:
                held_P[i] = Pt[i].copy()

        coeffs, Pcs = [], []
        for i in range(topo.N):
            omega = topo.weights[i, i] * np.linalg.inv(Pt[i])
            terms = [(i, omega.copy())]
            for j in topo.in_neighbors(i):
                if j == i:
                    continue
                # fired neighbors were re-anchored above, so held_P is fresh
                M = topo.weights[i, j] * np.linalg.inv(held_P[j])
                omega = omega + M
                terms.append((j, M))
            Pc = filt.symmetrize(np.linalg.inv(omega))
            coeffs.append([(j, Pc @ M) for j, M in terms])
            Pcs.append(Pc)
        Gs, cs, Pp = [], [], []
        for i, a in enumerate(agents):
            G, c, p = _projection_maps(Pcs[i], a, n)
            Gs.append(G)
            cs.append(c)
            Pp.append(p)
        P = Pp
        steps.append(_Step(K=Ks, rounds=[(coeffs, Gs, cs)],
                           P=[p.copy() for p in P], g=gs, fired=fired))
    return steps


# ---------------------------------------------------------------------------
# metrics accumulation


class _Recorder:
    def __init__(self, cfg: ScenarioConfig, trials: int, seed: int,
                 gc: GlobalConstraint, constraints: list):
        """`constraints` holds one (D, d) pair or None per recorded estimate;
        residuals are evaluated against these."""
        T = cfg.T
        self.constraints = constraints
        self.mse = np.zeros(T + 1)
        self.trace_p = np.zeros(T + 1)
        self.lambda_running = np.ones(T + 1)
        self.residuals = np.zeros(T + 1)
        self.bias = np.zeros(T + 1)
        self.metrics = RunMetrics(
            mse=self.mse, trace_p=self.trace_p, lambda_=1.0,
            lambda_running=self.lambda_running,
            constraint_residuals=self.residuals,
            mean_error_norm=self.bias, trials=trials, seed=seed,
            checkpoints=tuple(k for k in cfg.checkpoints if k <= T),
        )
        self.F = None
        self.s_bar = 0
        if not gc.empty:
            self.F, _ = space_decomposition(gc.Dbar)
            self.s_bar = gc.s_bar

    def record(self, k: int, est: list, x_k: np.ndarray, P: list):
        trials = est[0].shape[1]
        errs = [e - x_k for e in est]
        self.mse[k] = float(np.mean([np.mean(np.sum(e * e, axis=0)) for e in errs]))
        if self.metrics.trace_p_agent is None:
            self.metrics.trace_p_agent = np.zeros((self.mse.shape[0], len(est)))
        self.metrics.trace_p_agent[k] = [np.trace(p) for p in P]
        self.trace_p[k] = float(np.mean([np.trace(p) for p in P]))
        mean_vec = np.mean([e.mean(axis=1) for e in errs], axis=0)
        self.bias[k] = float(np.linalg.norm(mean_vec))
        res = 0.0
        for pair, e_i in zip(self.constraints, est):
            if pair is not None:
                D, d = pair
                res = max(res, float(np.abs(D @ e_i - d.reshape(-1, 1)).max()))
        self.residuals[k] = res
        if k in self.metrics.checkpoints:
            for i, e in enumerate(errs):
                self.metrics.sample_moment[(k, i)] = e @ e.T / trials
                self.metrics.P_checkpoint[(k, i)] = P[i].copy()
                if self.F is not None:
                    comp = (self.F.T @ e)[-self.s_bar:, :]
                    self.metrics.constraint_sq[(k, i)] = float(
                        np.mean(np.sum(comp * comp, axis=0)))


# ---------------------------------------------------------------------------
# simulation drivers


def _run_core(cfg: ScenarioConfig, mode: str, trials: int, seed: int,
              truth_cfg: ScenarioConfig | None = None) -> RunMetrics:
    X, Y, gc = _noise_blocks(cfg, trials, seed, truth_cfg)
    model, topo, n, T = cfg.model, cfg.topology, cfg.model.n, cfg.T
    steps = _tpdkf_path(cfg) if mode == "time" else _epdkf_path(cfg)

    own = [(a.D, a.d) if a.has_constraint else None for a in cfg.agents]
    rec = _Recorder(cfg, trials, seed, gc, own)
    pairs = cfg.initial_pairs()
    est = [np.tile(x.reshape(-1, 1), (1, trials)) for x, _ in pairs]
    held = [e.copy() for e in est] if mode == "event" else None
    rec.record(0, est, X[0], [p for _, p in pairs])

    out_deg = np.array([topo.out_degree0(i) for i in range(topo.N)], dtype=float)
    total_deg = out_deg.sum()
    saved = 0.0
    for k in range(1, T + 1):
        A = model.A_at(k - 1)
        st = steps[k - 1]
        if mode == "event":
            held = [A @ h for h in held]
        pred = []
        for i, a in enumerate(cfg.agents):
            xb = A @ est[i]
            if st.K[i] is not None:
                xb = xb + st.K[i] @ (Y[i][k - 1] - a.H @ xb)
            pred.append(xb)
        if mode == "event":
            for i in range(topo.N):
                if st.fired[i]:
                    held[i] = pred[i].copy()
                rec.metrics.trigger_log.append((k, i, st.g[i], bool(st.fired[i])))
            saved += sum(out_deg[i] for i in range(topo.N) if not st.fired[i])
            if total_deg > 0:
                rec.lambda_running[k] = 1.0 - saved / (k * total_deg)

        cur = pred
        for coeffs, Gs, cs in st.rounds:
            fused = []
            for i in range(topo.N):
                acc = np.zeros((n, trials))
                for j, C in coeffs[i]:
                    if mode == "event" and j != i:
                        # fired neighbors were re-anchored, so held == fresh
                        acc += C @ held[j]
                    else:
                        acc += C @ cur[j]
                fused.append(acc)
            cur = [Gs[i] @ fused[i] + cs[i].reshape(-1, 1) for i in range(topo.N)]
        est = cur
        rec.record(k, est, X[k], st.P)

    if mode == "event" and total_deg > 0 and T > 0:
        rec.metrics.lambda_ = float(1.0 - saved / (T * total_deg))
    return rec.metrics


def run_time_based(cfg: ScenarioConfig) -> RunMetrics:
    """Single-trial run of the time-based filter over the full horizon."""
    return _run_core(cfg, "time", 1, cfg.seed)


def run_event(cfg: ScenarioConfig) -> RunMetrics:
    """Single-trial run of the event-triggered filter; λ is the measured rate."""
    return _run_core(cfg, "event", 1, cfg.seed)


def monte_carlo(cfg: ScenarioConfig, trials: int | None = None,
                seed: int | None = None) -> RunMetrics:
    """Monte Carlo aggregation: MSE_k = (1/N)Σ_i (1/trials)Σ_j ||error||²."""
    t = cfg.trials if trials is None else int(trials)
    s = cfg.seed if seed is None else int(seed)
    if t < 1:
        raise ValueError("trials must be at least 1")
    return _run_core(cfg, cfg.mode, t, s)


# ---------------------------------------------------------------------------
# baselines


def ckf_baseline(cfg: ScenarioConfig) -> RunMetrics:
    """Centralized Kalman filter on the stacked measurement model (no
    constraint information).  Shares the truth draws with the other drivers."""
    X, Y, gc = _noise_blocks(cfg, cfg.trials, cfg.seed)
    model, n, T, trials = cfg.model, cfg.model.n, cfg.T, cfg.trials
    idx = [i for i, a in enumerate(cfg.agents) if a.has_measurement]
    Hs = np.vstack([cfg.agents[i].H for i in idx]) if idx else np.zeros((0, n))
    Rs = scipy.linalg.block_diag(*[cfg.agents[i].R for i in idx]) \
        if idx else np.zeros((0, 0))

    x0, P0 = cfg.initial_pairs()[0]
    x = np.tile(x0.reshape(-1, 1), (1, trials))
    P = P0.copy()

    # report residuals against the global constraint set, exposing the
    # violation the unconstrained filter accumulates
    pairs = [None if gc.empty else (gc.Dbar, gc.dbar)]
    rec = _Recorder(cfg, trials, cfg.seed, gc, pairs)
    rec.record(0, [x], X[0], [P])
    for k in range(1, T + 1):
        A, Q = model.A_at(k - 1), model.Q_at(k - 1)
        x = A @ x
        P = filt.symmetrize(A @ P @ A.T + Q)
        if idx:
            yk = np.vstack([Y[i][k - 1] for i in idx])
            S = Hs @ P @ Hs.T + Rs
            K = np.linalg.solve(S.T, (P @ Hs.T).T).T
            x = x + K @ (yk - Hs @ x)
            P = filt.symmetrize((np.eye(n) - K @ Hs) @ P)
        rec.record(k, [x], X[k], [P])
    rec.metrics.lambda_ = 1.0
    return rec.metrics


def consensus_baseline(cfg: ScenarioConfig) -> RunMetrics:
    """The identical time-based pipeline with every constraint removed
    (pure covariance-intersection consensus on posteriors).  The truth is
    still generated from the original, constrained scenario."""
    n = cfg.model.n
    stripped = [AgentSpec(a.H, a.R, np.zeros((0, n)), np.zeros(0), a.eps, a.delta)
                for a in cfg.agents]
    cfg2 = dataclasses.replace(cfg, agents=stripped, mode="time")
    return _run_core(cfg2, "time", cfg.trials, cfg.seed, truth_cfg=cfg)


# ---------------------------------------------------------------------------
# canonical scenarios


def case1(mode: str = "event", L: int = 1, trials: int = 1, seed: int = 0,
          delta: tuple = (0.3, 0.4, 0.8), T: int = 250) -> ScenarioConfig:
    """Three-agent road-constrained vehicle scenario on a path graph."""
    A = np.array([[1.0, 0.0, 0.1, 0.0],
                  [0.0, 1.0, 0.0, 0.1],
                  [0.0, 0.0, 1.0, 0.0],
                  [0.0, 0.0, 0.0, 1.0]])
    Q = np.diag([4.0, 4.0, 1.0, 1.0])
    P0 = np.diag([100.0, 100.0, 4.0, 4.0])
    model = SystemModel(A, Q, np.zeros(4), P0)
    H_pos = np.array([[1.0, 0.0, 0.0, 0.0]])
    R = np.array([[90.0]])
    no_D = np.zeros((0, 4))
    agents = [
        AgentSpec(H_pos, R, ROAD_D.copy(), np.zeros(2), 0.01, float(delta[0])),
        AgentSpec(np.zeros((1, 4)), R, no_D, np.zeros(0), 0.01, float(delta[1])),
        AgentSpec(H_pos, R, ROAD_D.copy(), np.zeros(2), 0.01, float(delta[2])),
    ]
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    topo = Topology(metropolis_weights(adj))
    return ScenarioConfig(
        model=model, agents=agents, topology=topo, T=T, L=L, mode=mode,
        trials=trials, seed=seed,
        P0_init=P0.copy(),
        x0_cov=np.diag([100.0, 100.0, 3.0, 1.0]),
        name="case1",
    )


def case2(mode: str = "time", L: int = 1, trials: int = 100, seed: int = 0,
          delta: float = 0.4, T: int = 250, N: int = 20) -> ScenarioConfig:
    """Twenty-agent variant: random connected graph, heterogeneous sensing,
    constraints known to every other agent."""
    A = np.array([[1.0, 0.0, 0.1, 0.0],
                  [0.0, 1.0, 0.0, 0.1],
                  [0.0, 0.0, 1.0, 0.0],
                  [0.0, 0.0, 0.0, 1.0]])
    Q = np.diag([4.0, 4.0, 1.0, 1.0])
    P0 = np.diag([100.0, 100.0, 4.0, 4.0])
    model = SystemModel(A, Q, np.zeros(4), P0)
    H_types = [np.array([[1.0, 0.0, 0.0, 0.0]]),
               np.array([[0.0, 0.3, 0.0, 0.0]]),
               np.array([[0.0, 1.0, 0.0, 0.0]])]
    R = np.array([[90.0]])
    no_D = np.zeros((0, 4))
    agents = []
    for i in range(N):
        D = ROAD_D.copy() if i % 2 == 0 else no_D
        d = np.zeros(2) if i % 2 == 0 else np.zeros(0)
        agents.append(AgentSpec(H_types[i % 3], R, D, d, 0.01, float(delta)))

    graph_rng = np.random.default_rng(2020)
    for _attempt in range(1000):
        adj = (graph_rng.random((N, N)) < 0.15).astype(float)
        adj = np.triu(adj, 1)
        adj = adj + adj.T
        try:
            W = metropolis_weights(adj)
            break
        except ValueError:
            continue
    else:
        raise RuntimeError("could not draw a connected topology")
    topo = Topology(W)
    return ScenarioConfig(
        model=model, agents=agents, topology=topo, T=T, L=L, mode=mode,
        trials=trials, seed=seed,
        P0_init=P0.copy(),
        x0_cov=np.diag([100.0, 100.0, 3.0, 1.0]),
        name="case2",
    )


# ---------------------------------------------------------------------------
# scenario files, CSV, manifest


def _mat(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def _cfg_to_dict(cfg: ScenarioConfig) -> dict:
    m = cfg.model
    d: dict = {
        "name": cfg.name,
        "model": {
            "A": _mat(m.A[0]) if m.time_invariant else [_mat(a) for a in m.A],
            "Q": _mat(m.Q[0]) if m.time_invariant else [_mat(q) for q in m.Q],
            "x0_mean": _mat(m.x0_mean),
            "P0": _mat(m.P0),
        },
        "agents": [{
            "H": _mat(a.H), "R": _mat(a.R),
            "D": _mat(a.D) if a.D.size else [],
            "d": _mat(a.d) if a.d.size else [],
            "eps": float(a.eps), "delta": float(a.delta),
        } for a in cfg.agents],
        "topology": {"weights": _mat(cfg.topology.weights)},
        "sim": {
            "T": cfg.T, "L": cfg.L, "mode": cfg.mode, "trials": cfg.trials,
            "seed": cfg.seed, "theta": cfg.theta,
            "checkpoints": list(cfg.checkpoints),
        },
    }
    for key, val in (("beta1", m.beta1), ("beta2", m.beta2)):
        if val is not None:
            d["model"][key] = float(val)
    sim = d["sim"]
    if cfg.x0_hat is not None:
        sim["x0_hat"] = _mat(cfg.x0_hat)
    if cfg.P0_init is not None:
        sim["P0_init"] = _mat(cfg.P0_init)
    if cfg.x0_cov is not None:
        sim["x0_cov"] = _mat(cfg.x0_cov)
    if cfg.sim_q is not None:
        sim["sim_q"] = _mat(cfg.sim_q)
    if cfg.sim_r is not None:
        sim["sim_r"] = [None if r is None else _mat(r) for r in cfg.sim_r]
    return d


def save_scenario(cfg: ScenarioConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(_cfg_to_dict(cfg), fh, sort_keys=True)


def load_scenario(path: str) -> ScenarioConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValueError(f"scenario file {path} is not valid YAML: {exc}") from exc
    try:
        md = raw["model"]
        A = np.asarray(md["A"], dtype=float)
        Q = np.asarray(md["Q"], dtype=float)
        model = SystemModel(A, Q, np.asarray(md["x0_mean"], dtype=float),
                            np.asarray(md["P0"], dtype=float),
                            beta1=md.get("beta1"), beta2=md.get("beta2"))
        n = model.n
        agents = []
        for spec in raw["agents"]:
            D = np.asarray(spec.get("D") or [], dtype=float)
            if D.size == 0:
                D = np.zeros((0, n))
            dvec = np.asarray(spec.get("d") or [], dtype=float).ravel()
            agents.append(AgentSpec(
                np.asarray(spec["H"], dtype=float),
                np.asarray(spec["R"], dtype=float),
                D, dvec, float(spec.get("eps", 0.01)),
                float(spec.get("delta", 0.0))))
        topo = Topology(np.asarray(raw["topology"]["weights"], dtype=float))
        sim = raw.get("sim", {})
        return ScenarioConfig(
            model=model, agents=agents, topology=topo,
            T=int(sim.get("T", 250)), L=int(sim.get("L", 1)),
            mode=sim.get("mode", "time"), trials=int(sim.get("trials", 1)),
            seed=int(sim.get("seed", 0)), theta=float(sim.get("theta", 1.0)),
            x0_hat=sim.get("x0_hat"), P0_init=sim.get("P0_init"),
            x0_cov=sim.get("x0_cov"), sim_q=sim.get("sim_q"),
            sim_r=sim.get("sim_r"),
            checkpoints=tuple(sim.get("checkpoints", (50, 150, 250))),
            name=raw.get("name", "scenario"),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scenario file {path!r}: {exc}") from exc


def scenario_hash(cfg: ScenarioConfig) -> str:
    blob = yaml.safe_dump(_cfg_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_metrics_csv(path: str, rm: RunMetrics) -> None:
    cols = ("step", "mse", "trace_p", "lambda_running",
            "max_constraint_residual", "mean_error_norm")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(rm.mse.shape[0]):
            fh.write(",".join([str(k), _fmt(rm.mse[k]), _fmt(rm.trace_p[k]),
                               _fmt(rm.lambda_running[k]),
                               _fmt(rm.constraint_residuals[k]),
                               _fmt(rm.mean_error_norm[k])]) + "\n")


def write_triggers_csv(path: str, rm: RunMetrics) -> None:
    with open(path, "w") as fh:
        fh.write("step,agent,g,fired\n")
        for k, i, g, fired in rm.trigger_log:
            fh.write(f"{k},{i},{_fmt(g)},{int(fired)}\n")


def write_manifest(path: str, cfg: ScenarioConfig, overrides: dict | None = None,
                   trials: int | None = None, seed: int | None = None) -> None:
    try:
        from importlib.metadata import version
        pkg_version = version("pdkf")
    except Exception:
        pkg_version = "unknown"
    manifest = {
        "scenario": cfg.name,
        "scenario_sha256": scenario_hash(cfg),
        "seed": cfg.seed if seed is None else seed,
        "trials": cfg.trials if trials is None else trials,
        "mode": cfg.mode,
        "overrides": overrides or {},
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pdkf": pkg_version,
        },
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
