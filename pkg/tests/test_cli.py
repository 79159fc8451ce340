import json

import pytest

from sagin_sfco.cli import main, make_policy_factory
from sagin_sfco.errors import ConfigError
from sagin_sfco.neuro.checkpoint import save_checkpoint
from sagin_sfco.neuro.model import PolicyModel
from sagin_sfco.plotting import plot_learning_curve, render_figures
from sagin_sfco.scenario import load_scenario, scenario_to_dict

PNG = b"\x89PNG\r\n\x1a\n"


@pytest.fixture(scope="module")
def workload_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("wl") / "wl.json"
    assert main(["workload", "gen", "--seed", "2", "--rate", "0.1", "--out", str(path)]) == 0
    return path


def test_generate_matches_builtin(tmp_path, henan):
    out = tmp_path / "s.json"
    assert main(["generate", "--case-study", "henan", "--out", str(out)]) == 0
    assert scenario_to_dict(load_scenario(out)) == scenario_to_dict(henan)


def test_generate_stdout(capsys):
    assert main(["generate"]) == 0
    assert json.loads(capsys.readouterr().out)["schema"] == "sagin-scenario/1"


def test_run_writes_report_and_figures(tmp_path, workload_file, capsys):
    out = tmp_path / "run"
    assert main(["run", "--workload", str(workload_file), "--policy", "greedy", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["policy"] == "greedy" and summary["requests"] > 0
    for name in ("outcomes.csv", "active_sfcs.csv", "revenue.csv"):
        assert (out / name).stat().st_size > 0
    for name in ("outcomes.png", "active_sfcs.png", "revenue.png"):
        assert (out / name).read_bytes()[:8] == PNG


def test_run_static_no_figures(tmp_path, workload_file, capsys):
    out = tmp_path / "run"
    assert main(["run", "--workload", str(workload_file), "--static", "--no-figures", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["migrations"] == 0
    assert not list(out.glob("*.png"))


def test_compare_with_config_file(tmp_path, workload_file, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"policies": "random,greedy", "seeds": 2, "no-figures": True}))
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg), "--workload", str(workload_file), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert [s["policy"] for s in summary] == ["random", "greedy"] and summary[0]["runs"] == 2
    assert (out / "runs.csv").read_text().count("\n") == 5


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_option": 1}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "no_such_option" in capsys.readouterr().err
    assert main(["run", "--policy", "rl"]) == 2
    with pytest.raises(ConfigError):
        make_policy_factory("oracle")


def test_rl_run_and_export(tmp_path, workload_file, capsys):
    ckpt = save_checkpoint(tmp_path / "p.bin", PolicyModel.initialize(0))
    assert main(["run", "--policy", "rl", "--checkpoint", str(ckpt), "--workload", str(workload_file)]) == 0
    assert json.loads(capsys.readouterr().out)["policy"] == "rl"
    out = tmp_path / "export"
    assert main(["export", "--out", str(out)]) == 0
    assert len(list((out / "snapshots").glob("*.json"))) == 60
    assert (out / "scenario.json").exists()


def test_train_command(tmp_path, capsys):
    out = tmp_path / "train"
    assert main(["train", "--workers", "1", "--episodes", "60", "--rate", "0.1",
                 "--checkpoint-every", "50", "--out", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["episodes"] == 60
    assert (out / "policy.bin").exists() and (out / "checkpoints" / "ckpt_0000050.bin").exists()
    assert (out / "learning_curve.csv").read_text().count("\n") == 61
    assert (out / "learning_curve.png").read_bytes()[:8] == PNG


def test_plot_helpers(tmp_path, henan, henan_series):
    from sagin_sfco.harness import run_simulation
    from sagin_sfco.policies import GreedyPolicy

    rep = run_simulation(henan, [], GreedyPolicy(), series=henan_series)
    paths = render_figures([rep], tmp_path)
    assert sorted(paths) == ["active", "outcomes", "revenue"]
    curve = [{"episode": i, "reward": 1.0, "moving_avg_reward": 1.0} for i in range(1, 4)]
    assert plot_learning_curve(curve, tmp_path / "c.png").read_bytes()[:8] == PNG
