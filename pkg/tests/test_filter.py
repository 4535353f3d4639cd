import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdkf.filter import (
    AgentState,
    ConsistentEstimate,
    ci_fuse,
    init_consistent,
    measurement_update,
    pinv,
    predict,
    project,
    symmetrize,
    tpdkf_round,
)
from pdkf.model import AgentSpec, SystemModel, Topology, metropolis_weights

import oracles

RNG_PROPERTY_RUNS = 100


def scalar_est(x, p):
    return ConsistentEstimate(np.array([x]), np.array([[p]]))


# --- initialization ------------------------------------------------------

def test_init_no_bias_doubles_prior():
    est = init_consistent(x0_hat=[1.0], P0=[[2.0]], theta=1.0, x0_mean=[1.0])
    assert est.P[0, 0] == pytest.approx(4.0)
    assert est.x[0] == 1.0


def test_init_bias_term():
    # theta = 1, bias b = 3: P = 2*P0 + 2*b^2
    est = init_consistent(x0_hat=[3.0], P0=[[2.0]], theta=1.0, x0_mean=[0.0])
    assert est.P[0, 0] == pytest.approx(4.0 + 2 * 9.0)


def test_init_rejects_bad_theta():
    with pytest.raises(ValueError):
        init_consistent([0.0], [[1.0]], theta=0.0, x0_mean=[0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.05, max_value=20.0),
       st.integers(min_value=0, max_value=10_000))
def test_init_dominates_prior_moment(theta, seed):
    # E[(x0_hat - x0)(..)^T] = P0 + b b^T must stay below the inflated P
    rng = np.random.default_rng(seed)
    n = 3
    P0 = oracles.random_psd(rng, n)
    b = rng.standard_normal(n)
    est = init_consistent(b, P0, theta, np.zeros(n))
    moment = P0 + np.outer(b, b)
    assert np.linalg.eigvalsh(est.P - moment).min() >= -1e-9


# --- predict / update ----------------------------------------------------

def test_predict_scalar():
    est = predict(scalar_est(1.0, 2.0), A=np.array([[1.0]]), Q=np.array([[3.0]]))
    assert est.P[0, 0] == pytest.approx(5.0)
    assert est.x[0] == pytest.approx(1.0)


def test_measurement_update_scalar_gain():
    # P=5, H=1, R=90: K = 5/95, P+ = (1-K)*5 = 450/95
    est = measurement_update(scalar_est(0.0, 5.0), y=[1.0],
                             H=np.array([[1.0]]), R=np.array([[90.0]]))
    assert est.x[0] == pytest.approx(5.0 / 95.0)
    assert est.P[0, 0] == pytest.approx(450.0 / 95.0)


def test_measurement_update_zero_H_is_identity():
    before = ConsistentEstimate([1.0, 2.0], np.diag([3.0, 4.0]))
    after = measurement_update(before, y=[7.0],
                               H=np.zeros((1, 2)), R=np.array([[90.0]]))
    assert np.allclose(after.x, before.x)
    assert np.allclose(after.P, before.P)


def test_measurement_update_empty_H_is_identity():
    before = ConsistentEstimate([1.0, 2.0], np.diag([3.0, 4.0]))
    after = measurement_update(before, y=np.zeros(0),
                               H=np.zeros((0, 2)), R=np.zeros((0, 0)))
    assert np.allclose(after.x, before.x)
    assert np.allclose(after.P, before.P)


@settings(max_examples=RNG_PROPERTY_RUNS, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_predict_update_matches_textbook_kf(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    P = oracles.random_psd(rng, n)
    x = rng.standard_normal(n)
    A = rng.standard_normal((n, n)) + 2 * np.eye(n)
    Q = oracles.random_psd(rng, n)
    H = rng.standard_normal((m, n))
    R = oracles.random_psd(rng, m, jitter=0.1)
    y = rng.standard_normal(m)

    got = measurement_update(predict(ConsistentEstimate(x, P), A, Q), y, H, R)
    xe, Pe = oracles.kf_predict(x, P, A, Q)
    xe, Pe = oracles.kf_update(xe, Pe, y, H, R)
    assert np.allclose(got.x, xe, atol=1e-8)
    assert np.allclose(got.P, Pe, atol=1e-8)


# --- covariance intersection ---------------------------------------------

def test_ci_fuse_harmonic_scalar():
    pairs = [(np.array([0.0]), np.array([[1.0]])),
             (np.array([2.0]), np.array([[3.0]]))]
    est = ci_fuse(pairs, [0.5, 0.5])
    assert est.P[0, 0] == pytest.approx(1.5)
    assert est.x[0] == pytest.approx(0.5)


def test_ci_fuse_weight_validation():
    pairs = [(np.zeros(1), np.eye(1)), (np.zeros(1), np.eye(1))]
    with pytest.raises(ValueError, match="sum"):
        ci_fuse(pairs, [0.5, 0.6])
    with pytest.raises(ValueError, match="positive"):
        ci_fuse(pairs, [1.5, -0.5])


def test_ci_fuse_single_pair_identity():
    est = ci_fuse([(np.array([1.0, 2.0]), np.diag([2.0, 3.0]))], [1.0])
    assert np.allclose(est.x, [1.0, 2.0])
    assert np.allclose(est.P, np.diag([2.0, 3.0]))


@settings(max_examples=RNG_PROPERTY_RUNS, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_ci_fuse_consistency_preserved(seed):
    # if P_j dominates the true moment for each input, CI's output dominates
    # the fused moment for *any* cross-correlation; check the classic bound
    # P_out >= (sum_j w_j P_j^-1)^-1 with equality, and P_out <= max_j P_j/w_j
    rng = np.random.default_rng(seed)
    n = 3
    pairs = [(rng.standard_normal(n), oracles.random_psd(rng, n))
             for _ in range(3)]
    w = rng.random(3) + 0.1
    w = w / w.sum()
    est = ci_fuse(pairs, w)
    xo, Po = oracles.ci_combine(pairs, w)
    assert np.allclose(est.x, xo, atol=1e-8)
    assert np.allclose(est.P, Po, atol=1e-8)
    for (x_j, P_j), w_j in zip(pairs, w):
        # information of the output is at least each scaled input information
        gap = np.linalg.inv(est.P) - w_j * np.linalg.inv(P_j)
        assert np.linalg.eigvalsh(symmetrize(gap)).min() >= -1e-8


# --- constraint projection ------------------------------------------------

def test_project_unit_example():
    est = ConsistentEstimate([1.0, 1.0], np.eye(2))
    eps = 0.01
    out = project(est, D=np.array([[1.0, 0.0]]), d=np.array([0.0]), eps=eps)
    assert np.allclose(out.x, [0.0, 1.0], atol=1e-12)
    assert np.allclose(out.P, np.diag([eps / (1 + eps), 1.0]), atol=1e-12)


def test_project_zero_D_identity():
    est = ConsistentEstimate([1.0, 2.0], np.diag([1.0, 2.0]))
    for D, d in [(np.zeros((0, 2)), np.zeros(0)),
                 (np.zeros((1, 2)), np.zeros(1))]:
        out = project(est, D, d, eps=0.01)
        assert np.allclose(out.x, est.x)
        assert np.allclose(out.P, est.P)


def test_project_rejects_rank_deficient():
    est = ConsistentEstimate(np.zeros(3), np.eye(3))
    D = np.array([[1.0, 0, 0], [2.0, 0, 0]])
    with pytest.raises(ValueError, match="full row rank"):
        project(est, D, np.zeros(2), eps=0.01)


@settings(max_examples=RNG_PROPERTY_RUNS, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_project_feasibility_and_information_identity(seed):
    rng = np.random.default_rng(seed)
    n, s = 4, 2
    P = oracles.random_psd(rng, n)
    x = rng.standard_normal(n)
    D = rng.standard_normal((s, n))
    d = rng.standard_normal(s)
    eps = 10.0 ** rng.uniform(-3, 0)
    out = project(ConsistentEstimate(x, P), D, d, eps)
    # the state lands exactly on the constraint set
    assert np.abs(D @ out.x - d).max() < 1e-9
    # information form of the covariance update, to 1e-8 relative
    lhs = np.linalg.inv(out.P)
    rhs = np.linalg.inv(P) + D.T @ D / eps
    assert np.abs(lhs - rhs).max() <= 1e-8 * max(1.0, np.abs(rhs).max())


@settings(max_examples=RNG_PROPERTY_RUNS, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_project_sandwiched_between_exact_and_none(seed):
    # exact null-space projection <= regularized projection <= no projection,
    # and the exact projection loses rank(D) directions
    rng = np.random.default_rng(seed)
    n, s = 4, 2
    P = oracles.random_psd(rng, n)
    x = rng.standard_normal(n)
    D = rng.standard_normal((s, n))
    d = rng.standard_normal(s)
    out = project(ConsistentEstimate(x, P), D, d, eps=1e-2)
    S = D @ P @ D.T
    exact = P - P @ D.T @ np.linalg.inv(S) @ D @ P
    assert np.linalg.eigvalsh(symmetrize(out.P - exact)).min() >= -1e-9
    assert np.linalg.eigvalsh(symmetrize(P - out.P)).min() >= -1e-9
    eigs = np.sort(np.linalg.eigvalsh(symmetrize(exact)))
    assert np.all(np.abs(eigs[:s]) < 1e-8 * max(1.0, eigs[-1]))
    assert eigs[s] > 1e-8


# --- full step -----------------------------------------------------------

def single_agent_setup(rng):
    n, m = 3, 2
    A = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    Q = oracles.random_psd(rng, n)
    H = rng.standard_normal((m, n))
    R = oracles.random_psd(rng, m, jitter=0.1)
    model = SystemModel(A=A, Q=Q, x0_mean=np.zeros(n), P0=np.eye(n))
    agent = AgentSpec(H=H, R=R, D=np.zeros((0, n)), d=np.zeros(0))
    top = Topology(np.array([[1.0]]))
    return model, agent, top


@pytest.mark.parametrize("L", [1, 3])
def test_tpdkf_single_agent_reduces_to_kf(L):
    # one agent, no constraint: fusion is a no-op at any L, so the step
    # must equal a plain Kalman filter step
    rng = np.random.default_rng(42)
    model, agent, top = single_agent_setup(rng)
    x = rng.standard_normal(3)
    P = oracles.random_psd(rng, 3)
    y = rng.standard_normal(2)

    states = [AgentState(0, ConsistentEstimate(x, P))]
    out = tpdkf_round(states, [y], model, [agent], top, L=L, k=1)

    xe, Pe = oracles.kf_predict(x, P, model.A_at(0), model.Q_at(0))
    xe, Pe = oracles.kf_update(xe, Pe, y, agent.H, agent.R)
    assert np.allclose(out[0].estimate.x, xe, atol=1e-8)
    assert np.allclose(out[0].estimate.P, Pe, atol=1e-8)


def test_tpdkf_l_round_information_closed_form():
    # L rounds of {fuse over neighbors, constrain} acting on the post-update
    # information matrices follow the closed form with weight-matrix powers
    rng = np.random.default_rng(7)
    n, N, L = 3, 3, 4
    W = metropolis_weights(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    D_list = [rng.standard_normal((1, n)), np.zeros((0, n)),
              rng.standard_normal((2, n))]
    eps_list = [0.5, 1.0, 0.25]
    ests = [ConsistentEstimate(rng.standard_normal(n), oracles.random_psd(rng, n))
            for _ in range(N)]
    omegas0 = [np.linalg.inv(e.P) for e in ests]

    for _ in range(L):
        fused = []
        for i in range(N):
            nbrs = np.flatnonzero(W[i])
            fused.append(ci_fuse([ests[j] for j in nbrs], W[i, nbrs]))
        ests = [project(fused[i], D_list[i],
                        np.zeros(D_list[i].shape[0]), eps_list[i])
                for i in range(N)]

    expect = oracles.info_after_rounds(omegas0, W, D_list, eps_list, L)
    for est, omega in zip(ests, expect):
        got = np.linalg.inv(est.P)
        assert np.abs(got - omega).max() <= 1e-8 * max(1.0, np.abs(omega).max())


def test_tpdkf_keeps_constrained_agents_feasible():
    rng = np.random.default_rng(3)
    n = 4
    D = np.array([[1.0, -np.sqrt(3.0), 0, 0]])
    model = SystemModel(A=np.eye(n), Q=np.eye(n),
                        x0_mean=np.zeros(n), P0=np.eye(n))
    agents = [
        AgentSpec(H=np.eye(1, n), R=np.eye(1), D=D, d=np.zeros(1)),
        AgentSpec(H=np.zeros((1, n)), R=np.eye(1),
                  D=np.zeros((0, n)), d=np.zeros(0)),
    ]
    top = Topology(metropolis_weights(np.array([[0, 1], [1, 0]])))
    states = [AgentState(i, ConsistentEstimate(rng.standard_normal(n),
                                               oracles.random_psd(rng, n)))
              for i in range(2)]
    for k in range(3):
        ys = [rng.standard_normal(1), rng.standard_normal(1)]
        states = tpdkf_round(states, ys, model, agents, top, L=2, k=k)
        assert np.abs(D @ states[0].estimate.x).max() < 1e-9


def test_pinv_cuts_tiny_singular_values():
    M = np.diag([1.0, 1e-12])
    Mi = pinv(M)
    assert Mi[0, 0] == pytest.approx(1.0)
    assert Mi[1, 1] == 0.0
