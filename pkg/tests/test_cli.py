"""Tests for the command line interface."""

import json
import logging

import numpy as np
import pytest
from click.testing import CliRunner

from src.approximator import init_params, save_params
from src.bench import collect_transitions, export_transition_graph
from src.cli import cli, load_run_config
from src.errors import ConfigError
from src.matrix_core import generate_random_symmetric
from src.models import ModelConfig
from src.orderings import SweepOption
from src.policies import FixedOptionPolicy
from src.selfplay import play_smdp_episode
from src.storage import append_jsonl, read_json, read_jsonl, write_matrix


TINY_TRAIN = """\
mode: mdp
sizes: [3]
seed: 2
split: [4, 2]
model: {n_max: 3, num_layers: 1, hidden_dim: 8, dropout_rate: 0.0}
training:
  games_per_round: 2
  epochs: 1
  batch_size: 8
  train_simulations: 2
  eval_simulations: 2
  rounds: 1
  gate_matrices: 2
"""


@pytest.fixture
def runner():
    yield CliRunner()
    # The CLI installs a handler on the captured stderr; drop it between tests.
    logger = logging.getLogger("src")
    logger.handlers.clear()
    logger.propagate = True


@pytest.fixture
def matrix_file(temp_data_dir):
    path = temp_data_dir / "m.txt"
    write_matrix(path, generate_random_symmetric(5, seed=3).entries)
    return path


def test_gen_writes_pool_and_manifests(runner, temp_data_dir):
    out = temp_data_dir / "pool"
    result = runner.invoke(cli, ["gen", "--n", "4", "--count", "5", "--seed", "1", "--out", str(out),
                                 "--split", "3:2"])

    assert result.exit_code == 0, result.output
    assert len(list(out.glob("matrix_4_*.txt"))) == 5
    assert read_json(out / "train_manifest.json") == [f"matrix_4_{i:04d}.txt" for i in range(3)]
    assert len(read_json(out / "eval_manifest.json")) == 2
    assert read_json(out / "effective_config.json")["seed"] == 1


def test_gen_is_reproducible(runner, temp_data_dir):
    for name in ["a", "b"]:
        runner.invoke(cli, ["gen", "--n", "3", "--count", "2", "--seed", "9", "--out", str(temp_data_dir / name)])

    assert (temp_data_dir / "a" / "matrix_3_0001.txt").read_text() == (temp_data_dir / "b" / "matrix_3_0001.txt").read_text()


def test_gen_rejects_bad_arguments(runner, temp_data_dir):
    result = runner.invoke(cli, ["gen", "--n", "1", "--out", str(temp_data_dir)])
    assert result.exit_code == 3

    result = runner.invoke(cli, ["gen", "--n", "3", "--count", "4", "--split", "3:3", "--out", str(temp_data_dir)])
    assert result.exit_code == 3


def test_diag_with_fixed_option(runner, matrix_file, temp_data_dir):
    trace = temp_data_dir / "trace.json"
    result = runner.invoke(cli, ["diag", str(matrix_file), "--policy", "option:4", "--trace", str(trace)])

    assert result.exit_code == 0, result.output
    assert "rotations:" in result.output
    assert "off_norm:" in result.output
    data = read_json(trace)
    assert set(data["actions"]) == {4}
    assert data["rotations"] >= 10


def test_diag_with_maxelem(runner, matrix_file):
    result = runner.invoke(cli, ["diag", str(matrix_file)])

    assert result.exit_code == 0, result.output
    assert "rotations:" in result.output


def test_diag_nonconvergence_exit_code(runner, matrix_file):
    result = runner.invoke(cli, ["diag", str(matrix_file), "--policy", "option:0", "--max-sweeps", "1"])

    assert result.exit_code == 2


def test_diag_file_errors(runner, temp_data_dir):
    result = runner.invoke(cli, ["diag", str(temp_data_dir / "missing.txt")])
    assert result.exit_code == 4

    asym = temp_data_dir / "asym.txt"
    asym.write_text("2\n1 2\n0 1\n", encoding="utf-8")
    assert runner.invoke(cli, ["diag", str(asym)]).exit_code == 4
    assert runner.invoke(cli, ["diag", str(asym), "--symmetrize"]).exit_code == 0


def test_diag_writes_decision_log(runner, matrix_file, temp_data_dir):
    log = temp_data_dir / "decisions.jsonl"
    result = runner.invoke(cli, ["diag", str(matrix_file), "--policy", "option:2", "--decisions", str(log)])

    assert result.exit_code == 0, result.output
    records = list(read_jsonl(log))
    assert records
    assert all(r["policy"] == "option:2" and r["action"] == 2 for r in records)
    assert records[-1]["done"] is True
    assert set(records[0]) >= {"state_key", "legal_actions", "policy_target", "action", "reward", "done"}


def test_diag_network_policy(runner, matrix_file, temp_data_dir):
    """The option head alone, greedy, still finishes within the sweep budget."""
    ckpt = temp_data_dir / "options.json"
    save_params(init_params(ModelConfig(n_max=6, num_layers=1, hidden_dim=8, dropout_rate=0.0,
                                        option_head=True, context_dim=9), seed=0), ckpt)
    result = runner.invoke(cli, ["diag", str(matrix_file), "--policy", "network", "--checkpoint", str(ckpt)])

    assert result.exit_code == 0, result.output
    assert "rotations:" in result.output


def test_diag_oversized_matrix_is_an_input_error(runner, matrix_file, temp_data_dir):
    """A 5x5 matrix against a checkpoint built for 3x3 exits with the input code."""
    ckpt = temp_data_dir / "small.json"
    save_params(init_params(ModelConfig(n_max=3, num_layers=1, hidden_dim=4), seed=0), ckpt)
    result = runner.invoke(cli, ["diag", str(matrix_file), "--policy", "network", "--checkpoint", str(ckpt)])

    assert result.exit_code == 3
    assert "exceeds n_max" in result.output


def test_diag_unknown_policy(runner, matrix_file):
    result = runner.invoke(cli, ["diag", str(matrix_file), "--policy", "greedy"])

    assert result.exit_code == 3


def test_train_from_yaml(runner, temp_data_dir):
    cfg = temp_data_dir / "run.yaml"
    cfg.write_text(TINY_TRAIN, encoding="utf-8")
    out = temp_data_dir / "run"
    result = runner.invoke(cli, ["train", "--config", str(cfg), "--out", str(out), "--jobs", "1"])

    assert result.exit_code == 0, result.output
    manifest = read_json(out / "manifest.json")
    assert len(manifest["rounds"]) == 1
    assert manifest["seed"] == 2


def test_train_invalid_config(runner, temp_data_dir):
    cfg = temp_data_dir / "bad.yaml"
    cfg.write_text("sizes: [1]\n", encoding="utf-8")

    result = runner.invoke(cli, ["train", "--config", str(cfg), "--out", str(temp_data_dir / "x")])
    assert result.exit_code == 3


def test_bench_baselines_only(runner, temp_data_dir):
    out = temp_data_dir / "bench"
    result = runner.invoke(cli, ["bench", "--sizes", "4", "--count", "2", "--seed", "0", "--out", str(out),
                                 "--jobs", "1"])

    assert result.exit_code == 0, result.output
    assert "Matrix Size" in result.output
    report = read_json(out / "bench_report.json")
    assert report[0]["matrix_size"] == 4
    assert report[0]["agent_mean"] is None


def test_bench_replays_a_distribution(runner, temp_data_dir):
    csv = temp_data_dir / "replay.csv"
    export_transition_graph(collect_transitions([[2, 2]]), temp_data_dir / "replay.dot", csv)
    out = temp_data_dir / "bench"
    result = runner.invoke(cli, ["bench", "--sizes", "4", "--count", "2", "--seed", "0", "--out", str(out),
                                 "--jobs", "1", "--distribution", str(csv)])

    assert result.exit_code == 0, result.output
    report = read_json(out / "bench_report.json")
    assert report[0]["agent_mean"] == pytest.approx(report[0]["per_policy_mean"]["2:Vertical"])


def test_bench_missing_distribution_is_an_io_error(runner, temp_data_dir):
    result = runner.invoke(cli, ["bench", "--sizes", "4", "--count", "2", "--out", str(temp_data_dir / "b"),
                                 "--jobs", "1", "--distribution", str(temp_data_dir / "none.csv")])

    assert result.exit_code == 4


def test_export_orderings(runner, temp_data_dir):
    result = runner.invoke(cli, ["export", "--orderings", "4", "--out", str(temp_data_dir)])

    assert result.exit_code == 0, result.output
    assert (temp_data_dir / "TopLeftBottomRight_4.txt").exists()
    assert len(list(temp_data_dir.glob("*_4.txt"))) == 8


def test_export_episodes(runner, temp_data_dir):
    rng = np.random.default_rng(0)
    episodes = [
        play_smdp_episode(generate_random_symmetric(4, seed=s), FixedOptionPolicy(SweepOption(s % 8)), None, rng)
        for s in range(4)
    ]
    pool = temp_data_dir / "episodes.jsonl"
    append_jsonl(pool, [ep.to_json() for ep in episodes])
    out = temp_data_dir / "out"

    result = runner.invoke(cli, ["export", "--episodes", str(pool), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "transitions_4.dot").exists()
    assert (out / "transitions_4.csv").exists()
    assert "per_size" in read_json(out / "chi_squared.json")


def test_export_needs_an_input(runner, temp_data_dir):
    assert runner.invoke(cli, ["export", "--out", str(temp_data_dir)]).exit_code == 3


def test_config_json(runner):
    result = runner.invoke(cli, ["config", "--json"])

    assert result.exit_code == 0
    data = json.loads(result.output)
    assert data["run_defaults"]["mode"] == "smdp"
    assert data["run_defaults"]["training"]["gate_threshold"] == 0.55


def test_load_run_config_overrides(temp_data_dir):
    cfg = temp_data_dir / "run.json"
    cfg.write_text(json.dumps({"mode": "smdp", "sizes": [5], "training": {"rounds": 4}}), encoding="utf-8")
    run = load_run_config(str(cfg), {"training.rounds": 2, "seed": 7, "count": None})

    assert run.training.rounds == 2
    assert run.seed == 7
    assert run.sizes == [5]
    with pytest.raises(ConfigError):
        load_run_config(str(temp_data_dir / "nope.yaml"), {})
