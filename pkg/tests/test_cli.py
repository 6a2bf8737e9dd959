from __future__ import annotations

import csv

import pytest

from priompc import cli
from priompc.scenario import build_small_scale, save_scenario
from priompc.sim import METRICS_COLUMNS, PARETO_COLUMNS, TRAJECTORY_COLUMNS

SHORT = ["--days", "0.125"]  # 12 steps


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_outputs_and_summary(tmp_path, capsys):
    assert cli.main(["run", "--strategy", "distributed", "--out", str(tmp_path), *SHORT]) == 0
    traj = rows(tmp_path / "trajectories.csv")
    assert tuple(traj[0]) == TRAJECTORY_COLUMNS and len(traj) == 1 + 12 * 3
    assert tuple(rows(tmp_path / "metrics.csv")[0]) == METRICS_COLUMNS
    assert (tmp_path / "timing.csv").exists()
    assert "distributed" in capsys.readouterr().out


def test_same_seed_gives_byte_identical_csvs(tmp_path):
    args = ["run", "--strategy", "centralized", "--seed", "4", "--cap", "scarce", *SHORT]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("trajectories.csv", "metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", *SHORT]) == 0
    assert (tmp_path / "env" / "metrics.csv").exists()


def test_unknown_strategy_exits_with_config_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--strategy", "greedy", "--out", str(tmp_path)])
    assert info.value.code == 2


@pytest.mark.parametrize("extra", [["--scenario", "nowhere.toml"], ["--cap", "plenty"], ["--alpha", "x"],
                                   ["--jobs", "0"], ["--horizon", "0"]])
def test_bad_configuration_exits_2(tmp_path, extra, capsys):
    assert cli.main(["run", "--out", str(tmp_path), *SHORT, *extra]) == 2
    assert "usage" in capsys.readouterr().err


def test_one_to_one_on_shared_levels_exits_2(tmp_path):
    assert cli.main(["run", "--scenario", "large36", "--strategy", "distributed", "--protocol", "one-to-one",
                     "--out", str(tmp_path), "--days", "0.01"]) == 2


def test_infeasible_plan_exits_3(tmp_path, capsys):
    path = tmp_path / "tight.toml"
    save_scenario(build_small_scale().with_(u_min=100.0, cap=0.0), path)
    code = cli.main(["run", "--scenario", str(path), "--strategy", "decentralized", "--out", str(tmp_path), *SHORT])
    assert code == 3
    err = capsys.readouterr().err
    assert "step 0" in err and "zone" in err


def test_sweep_respects_strategy_filter(tmp_path):
    assert cli.main(["sweep", "--strategy", "decentralized", "--alpha", "1e4,1e6", "--mode", "single-step",
                     "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "pareto.csv")
    assert tuple(table[0]) == PARETO_COLUMNS
    assert len(table) == 1 + 2 * 3
    assert {r[0] for r in table[1:]} == {"decentralized"}


def test_sweep_needs_two_alphas(tmp_path):
    assert cli.main(["sweep", "--alpha", "1e5", "--out", str(tmp_path)]) == 2


def test_compare_tabulates_all_strategies(tmp_path, capsys):
    assert cli.main(["compare", "--out", str(tmp_path), *SHORT]) == 0
    out = capsys.readouterr().out
    assert all(s in out for s in ("centralized", "decentralized", "distributed"))
    assert len(rows(tmp_path / "metrics.csv")) == 1 + 3 * 3
