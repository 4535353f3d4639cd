import numpy as np
import pytest

from pdkf import cli, sim
from pdkf.model import AgentSpec, SystemModel, Topology
from pdkf.sim import ScenarioConfig, save_scenario


@pytest.fixture()
def case1_file(tmp_path):
    p = tmp_path / "case1.scn"
    save_scenario(sim.case1(), str(p))
    return str(p)


@pytest.fixture()
def scalar_file(tmp_path):
    # two coupled agents without sensors: the information recursions decay,
    # so the a-priori rate analysis is feasible with explicit factors
    model = SystemModel(A=[[1.0]], Q=[[1.0]], x0_mean=[0.0], P0=[[2.0]])
    agents = [AgentSpec(H=np.zeros((1, 1)), R=[[1.0]], D=np.zeros((0, 1)),
                        d=np.zeros(0), delta=1.2) for _ in range(2)]
    cfg = ScenarioConfig(model=model, agents=agents,
                         topology=Topology(np.full((2, 2), 0.5)),
                         T=40, mode="event", x0_cov=np.array([[2.0]]))
    p = tmp_path / "scalar.scn"
    save_scenario(cfg, str(p))
    return str(p)


def test_eco_check_reports_both_alphas(case1_file, tmp_path, capsys):
    out = tmp_path / "eco"
    rc = cli.main(["eco-check", case1_file, "--out", str(out)])
    captured = capsys.readouterr().out
    assert rc == cli.EXIT_OK
    assert "alpha without constraints:" in captured and "(fail)" in captured
    assert "alpha with constraints:" in captured and "(pass)" in captured
    assert (out / "manifest.json").exists()
    assert (out / "scenario.scn").exists()


def test_run_epdkf_lambda_near_reference(case1_file, tmp_path, capsys):
    out = tmp_path / "ep"
    rc = cli.main(["run-epdkf", case1_file, "--delta", "0.3,0.4,0.8",
                   "--out", str(out)])
    assert rc == cli.EXIT_OK
    line = [l for l in capsys.readouterr().out.splitlines()
            if l.startswith("lambda:")][0]
    lam = float(line.split()[1])
    assert abs(lam - 0.311) <= 0.02
    assert (out / "metrics.csv").exists()
    assert (out / "triggers.csv").exists()


def test_run_tpdkf_writes_metrics(case1_file, tmp_path, capsys):
    out = tmp_path / "tp"
    rc = cli.main(["run-tpdkf", "--scenario", case1_file, "--L", "2",
                   "--out", str(out)])
    assert rc == cli.EXIT_OK
    assert (out / "metrics.csv").exists()
    assert not (out / "triggers.csv").exists()
    assert "final mse:" in capsys.readouterr().out


def test_mc_repeat_is_bit_identical(case1_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli.main(["mc", case1_file, "--trials", "1", "--seed", "7",
                       "--out", str(out)])
        assert rc == cli.EXIT_OK
        outs.append(out)
    for fname in ("metrics.csv", "triggers.csv", "manifest.json",
                  "scenario.scn"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_out_dir_from_environment(case1_file, tmp_path, monkeypatch, capsys):
    target = tmp_path / "from_env"
    monkeypatch.setenv("PDKF_OUT", str(target))
    rc = cli.main(["eco-check", case1_file])
    capsys.readouterr()
    assert rc == cli.EXIT_OK
    assert (target / "manifest.json").exists()


def test_threshold_bound_reports_per_agent(scalar_file, tmp_path, capsys):
    rc = cli.main(["threshold-bound", scalar_file, "--beta", "0.5,0.8",
                   "--kstar", "4", "--out", str(tmp_path / "th")])
    assert rc == cli.EXIT_OK
    outtext = capsys.readouterr().out
    assert "agent 0: delta <" in outtext
    assert "network uniform bound:" in outtext


def test_rate_bound_feasible_scalar(scalar_file, tmp_path, capsys):
    rc = cli.main(["rate-bound", scalar_file, "--beta", "0.5,0.8",
                   "--out", str(tmp_path / "rb")])
    assert rc == cli.EXIT_OK
    outtext = capsys.readouterr().out
    assert "lambda0:" in outtext


def test_rate_bound_infeasible_exits_three(case1_file, tmp_path, capsys):
    rc = cli.main(["rate-bound", case1_file, "--delta", "0.3",
                   "--horizon", "100", "--out", str(tmp_path / "rb3")])
    assert rc == cli.EXIT_INFEASIBLE
    assert "infeasible:" in capsys.readouterr().err


def test_missing_scenario_exits_two(tmp_path, capsys):
    rc = cli.main(["run-tpdkf", str(tmp_path / "nope.scn")])
    assert rc == cli.EXIT_VALIDATION
    assert "error:" in capsys.readouterr().err


def test_bad_delta_count_exits_two(case1_file, capsys):
    rc = cli.main(["run-epdkf", case1_file, "--delta", "0.3,0.4"])
    assert rc == cli.EXIT_VALIDATION
    capsys.readouterr()


def test_nonuniform_rate_bound_needs_explicit_delta(case1_file, capsys):
    rc = cli.main(["rate-bound", case1_file])
    assert rc == cli.EXIT_VALIDATION
    assert "uniform" in capsys.readouterr().err


def test_case1_subcommand_runs(tmp_path, capsys):
    out = tmp_path / "c1"
    rc = cli.main(["case1", "--out", str(out), "--seed", "3"])
    assert rc == cli.EXIT_OK
    assert (out / "metrics.csv").exists()
    assert "lambda:" in capsys.readouterr().out
