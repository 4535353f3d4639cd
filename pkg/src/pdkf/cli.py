"""Command-line entry point.

Subcommands: eco-check, run-tpdkf, run-epdkf, threshold-bound, rate-bound,
mc, case1, case2.  Every run writes a manifest (scenario hash, seed, library
versions, explicit overrides) next to its CSV output so it can be reproduced
exactly.  Output directory resolution: --out flag, then $PDKF_OUT, then the
current directory.

Exit codes: 0 success, 2 validation/parse failure, 3 infeasible analysis
preconditions, 1 unexpected crash.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import analysis, sim

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3


class _Infeasible(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pdkf",
        description="Distributed Kalman filtering with state equality "
                    "constraints: simulation and design tools.")
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "eco-check": "report the windowed observability test with and "
                     "without constraint information",
        "run-tpdkf": "single run of the time-based filter",
        "run-epdkf": "single run of the event-triggered filter",
        "threshold-bound": "uniform trigger-threshold design bound",
        "rate-bound": "a-priori communication-rate bound",
        "mc": "Monte Carlo run using the scenario's mode",
        "case1": "run the built-in 3-agent road scenario",
        "case2": "run the built-in 20-agent scenario",
    }
    for name, help_text in commands.items():
        sp = sub.add_parser(name, help=help_text)
        if name not in ("case1", "case2"):
            sp.add_argument("scenario_pos", nargs="?", metavar="SCENARIO",
                            help="scenario file (alternative to --scenario)")
        sp.add_argument("--scenario", help="scenario file path")
        sp.add_argument("--out", help="output directory (default $PDKF_OUT or .)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--L", type=int, default=None, dest="L")
        sp.add_argument("--delta", default=None,
                        help="uniform value or comma list, one per agent")
        sp.add_argument("--horizon", type=int, default=None,
                        help="steps (for eco-check: the window length)")
        sp.add_argument("--kstar", type=int, default=None,
                        help="threshold-design window (default N + n)")
        sp.add_argument("--beta", default=None,
                        help="contraction factor; 'b' or 'b,bbar' "
                             "(default: derived from a pilot run)")
    return p


def _out_dir(args) -> str:
    out = args.out or os.environ.get("PDKF_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _parse_delta(text: str, N: int) -> list:
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        vals = vals * N
    if len(vals) != N:
        raise ValueError(f"--delta needs 1 or {N} values, got {len(vals)}")
    if any(v < 0 for v in vals):
        raise ValueError("--delta values must be nonnegative")
    return vals


def _load_config(args) -> tuple:
    """Scenario from file or the built-in builders, plus the override record."""
    overrides: dict = {}
    if args.command in ("case1", "case2"):
        cfg = sim.case1() if args.command == "case1" else sim.case2()
    else:
        path = args.scenario or getattr(args, "scenario_pos", None)
        if not path:
            raise ValueError("a scenario file is required (positional or "
                             "--scenario)")
        if not os.path.exists(path):
            raise ValueError(f"scenario file not found: {path}")
        cfg = sim.load_scenario(path)

    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        overrides["seed"] = args.seed
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, trials=args.trials)
        overrides["trials"] = args.trials
    if args.L is not None:
        cfg = dataclasses.replace(cfg, L=args.L)
        overrides["L"] = args.L
    if args.horizon is not None and args.command != "eco-check":
        cfg = dataclasses.replace(cfg, T=args.horizon)
        overrides["horizon"] = args.horizon
    if args.delta is not None:
        vals = _parse_delta(args.delta, cfg.topology.N)
        agents = [dataclasses.replace(a, delta=v)
                  for a, v in zip(cfg.agents, vals)]
        cfg = dataclasses.replace(cfg, agents=agents)
        overrides["delta"] = vals
    return cfg, overrides


def _parse_beta(args, cfg) -> tuple:
    """(beta, beta_bar) from --beta or from a pilot covariance run."""
    if args.beta is not None:
        vals = [float(v) for v in args.beta.split(",")]
        if len(vals) == 1:
            beta = vals[0]
            _, beta_bar = _pilot_betas(cfg)
            return beta, beta_bar
        if len(vals) == 2:
            return vals[0], vals[1]
        raise ValueError("--beta takes one or two comma-separated values")
    return _pilot_betas(cfg)


def _pilot_betas(cfg) -> tuple:
    pilot = dataclasses.replace(cfg, T=min(cfg.T, 50), mode="time",
                                L=max(cfg.L, 1))
    steps = sim._tpdkf_path(pilot)
    mats = [p for _, p in cfg.initial_pairs()]
    mats += [p for st in steps for p in st.P]
    return analysis.pilot_contraction_factors(
        mats, cfg.model.A_at(0), cfg.model.Q_at(0))


def _emit(out, cfg, overrides, metrics=None, triggers=False) -> None:
    sim.write_manifest(os.path.join(out, "manifest.json"), cfg, overrides)
    sim.save_scenario(cfg, os.path.join(out, "scenario.scn"))
    if metrics is not None:
        sim.write_metrics_csv(os.path.join(out, "metrics.csv"), metrics)
        if triggers:
            sim.write_triggers_csv(os.path.join(out, "triggers.csv"), metrics)


def _cmd_eco_check(args, cfg, overrides, out) -> int:
    window = args.horizon if args.horizon is not None \
        else cfg.topology.N + cfg.model.n
    rep = analysis.eco_check(cfg.model, cfg.agents, window)
    _emit(out, cfg, overrides)
    wo = "pass" if rep.observable_without_constraints else "fail"
    wi = "pass" if rep.observable_with_constraints else "fail"
    print(f"window: {window}")
    print(f"alpha without constraints: {rep.alpha_without_constraints:.6g} ({wo})")
    print(f"alpha with constraints: {rep.alpha:.6g} ({wi})")
    return EXIT_OK


def _cmd_run(args, cfg, overrides, out, mode: str) -> int:
    metrics = sim.run_time_based(cfg) if mode == "time" else sim.run_event(cfg)
    _emit(out, cfg, overrides, metrics, triggers=(mode == "event"))
    if mode == "event":
        print(f"lambda: {metrics.lambda_:.6g}")
    print(f"final mse: {metrics.mse[-1]:.6g}")
    print(f"wrote metrics.csv to {out}")
    return EXIT_OK


def _cmd_mc(args, cfg, overrides, out) -> int:
    metrics = sim.monte_carlo(cfg)
    _emit(out, cfg, overrides, metrics, triggers=(cfg.mode == "event"))
    print(f"trials: {metrics.trials}")
    if cfg.mode == "event":
        print(f"lambda: {metrics.lambda_:.6g}")
    print(f"final mse: {metrics.mse[-1]:.6g}")
    return EXIT_OK


def _cmd_threshold(args, cfg, overrides, out) -> int:
    beta, _ = _parse_beta(args, cfg)
    kstar = args.kstar if args.kstar is not None \
        else cfg.topology.N + cfg.model.n
    try:
        rep = analysis.threshold_bounds(cfg.model, cfg.agents, cfg.topology,
                                        beta, kstar)
    except ValueError as exc:
        raise _Infeasible(str(exc)) from exc
    _emit(out, cfg, dict(overrides, beta=beta, kstar=kstar))
    for i, b in enumerate(rep.per_agent_bound):
        flag = "" if rep.mbar_positive[i] else "  [information sum not PD]"
        print(f"agent {i}: delta < {b:.6g}{flag}")
    print(f"network uniform bound: {rep.network_bound:.6g}")
    return EXIT_OK


def _cmd_rate(args, cfg, overrides, out) -> int:
    if args.delta is not None:
        vals = _parse_delta(args.delta, cfg.topology.N)
        if len(set(vals)) != 1:
            raise ValueError("rate-bound analyzes a uniform threshold; pass "
                             "a single --delta value")
        delta = vals[0]
    else:
        deltas = {a.delta for a in cfg.agents}
        if len(deltas) != 1:
            raise ValueError("scenario has non-uniform thresholds; pass "
                             "--delta for the uniform analysis")
        delta = deltas.pop()
    beta, beta_bar = _parse_beta(args, cfg)
    T = args.horizon if args.horizon is not None else cfg.T
    rep = analysis.rate_bound(delta, cfg.model, cfg.agents, cfg.topology,
                              T, beta, beta_bar)
    _emit(out, cfg, dict(overrides, delta=delta, beta=beta,
                         beta_bar=beta_bar, horizon=T))
    print(f"delta: {delta:.6g}  beta: {beta:.6g}  beta_bar: {beta_bar:.6g}")
    for i in range(cfg.topology.N):
        print(f"agent {i}: T1={rep.T1[i]}  T2={rep.T2[i]}"
              f"{'' if rep.condition1_ok[i] else '  [condition 1 violated]'}")
    if rep.lambda0 is None:
        raise _Infeasible(f"rate bound unavailable: {rep.status} "
                          f"(T1={rep.T1}, T2={rep.T2})")
    print(f"lambda0: {rep.lambda0:.6g}")
    if rep.lambda0_asymptotic is not None:
        print(f"lambda0 (asymptotic): {rep.lambda0_asymptotic:.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg, overrides = _load_config(args)
        out = _out_dir(args)
        if args.command == "eco-check":
            return _cmd_eco_check(args, cfg, overrides, out)
        if args.command == "run-tpdkf":
            return _cmd_run(args, cfg, overrides, out, "time")
        if args.command == "run-epdkf":
            return _cmd_run(args, cfg, overrides, out, "event")
        if args.command == "mc":
            return _cmd_mc(args, cfg, overrides, out)
        if args.command == "threshold-bound":
            return _cmd_threshold(args, cfg, overrides, out)
        if args.command == "rate-bound":
            return _cmd_rate(args, cfg, overrides, out)
        if args.command in ("case1", "case2"):
            mode = cfg.mode
            metrics = sim.monte_carlo(cfg)
            _emit(out, cfg, overrides, metrics, triggers=(mode == "event"))
            if mode == "event":
                print(f"lambda: {metrics.lambda_:.6g}")
            print(f"final mse: {metrics.mse[-1]:.6g}")
            print(f"wrote metrics.csv to {out}")
            return EXIT_OK
        raise ValueError(f"unknown command {args.command!r}")
    except _Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_CRASH


if __name__ == "__main__":
    sys.exit(main())
