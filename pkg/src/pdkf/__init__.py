"""Distributed Kalman filtering over a network with known linear state
equality constraints: time-based and event-triggered filters, offline design
tools (observability, trigger thresholds, communication-rate bounds), and a
reproducible simulation harness."""

from .model import (AgentSpec, GlobalConstraint, SystemModel, Topology,
                    build_global_constraint, metropolis_weights)
from .filter import (AgentState, ConsistentEstimate, ci_fuse, init_consistent,
                     measurement_update, predict, project, tpdkf_round)
from .event import (BroadcastMessage, TriggerState, epdkf_round,
                    information_gain, multi_step_prediction,
                    resolve_neighbor_pair, trigger_eval)
from .analysis import (EcoReport, RateReport, ThresholdReport, compute_beta,
                       compute_beta_bar, constraint_error, eco_check, eig_pos,
                       f_upper, pilot_contraction_factors, rate_bound,
                       solve_T1, solve_T2, space_decomposition,
                       threshold_bounds, z_lower)
from .sim import (RunMetrics, ScenarioConfig, case1, case2, ckf_baseline,
                  consensus_baseline, generate_truth, load_scenario,
                  monte_carlo, run_event, run_time_based, save_scenario)

__all__ = [name for name in dir() if not name.startswith("_")]
