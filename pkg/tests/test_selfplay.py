"""Tests for games, demonstrations, training rounds and gating."""

import numpy as np
import pandas as pd
import pytest

from src.approximator import init_params
from src.env import DecisionLogger
from src.errors import EmptyTrainingData
from src.matrix_core import PivotAction, SymmetricMatrix, generate_random_symmetric
from src.models import ModelConfig, PathsConfig, RunConfig
from src.orderings import SweepOption
from src.policies import FixedOptionPolicy, MaxElemPolicy, RandomPolicy
from src.selfplay import (
    Episode,
    TrainerState,
    best_fixed_option,
    build_pools,
    effective_model_config,
    episode_samples,
    gate,
    gate_accepts,
    gate_smdp,
    make_synthetic_demos,
    make_synthetic_option_demos,
    play_mdp_game,
    play_smdp_episode,
    replay_episode,
    run_training,
    training_round,
)
from src.storage import read_json, read_jsonl, write_json, write_matrix


def _tiny_run(mode="mdp", **training):
    base = dict(
        games_per_round=2, epochs=1, batch_size=8, train_simulations=3,
        eval_simulations=2, rounds=1, gate_matrices=2, synthetic_fraction=0.5,
    )
    base.update(training)
    return RunConfig(
        mode=mode,
        sizes=[3] if mode == "mdp" else [4],
        seed=5,
        split=(4, 2),
        model=dict(n_max=3, num_layers=1, hidden_dim=8, dropout_rate=0.0),
        training=base,
    )


def _two_by_two():
    return SymmetricMatrix.from_array([[1.0, 0.7], [0.7, -2.0]])


def test_two_by_two_race_is_a_tie(rng):
    episodes = play_mdp_game(_two_by_two(), [MaxElemPolicy(), MaxElemPolicy()], None, rng)

    assert [ep.outcome for ep in episodes] == [0.0, 0.0]
    assert [ep.rotation_count for ep in episodes] == [1, 1]
    assert all(ep.finished for ep in episodes)


def test_zero_depth_race_is_a_double_loss(rng):
    episodes = play_mdp_game(generate_random_symmetric(3, seed=0), [MaxElemPolicy(), RandomPolicy()], 0, rng)

    assert [ep.outcome for ep in episodes] == [-1.0, -1.0]
    assert all(not ep.records for ep in episodes)


def test_race_winner_gets_plus_one(rng):
    """A random player rarely beats MaxElem; outcomes are always opposite or tied."""
    m = generate_random_symmetric(4, seed=2)
    episodes = play_mdp_game(m, [MaxElemPolicy(), RandomPolicy()], None, rng)
    outcomes = sorted(ep.outcome for ep in episodes)

    assert outcomes in ([-1.0, 1.0], [0.0, 0.0], [-1.0, -1.0])
    assert episodes[0].player == "maxelem"
    assert episodes[1].seat == 1
    assert episodes[0].value_targets == [episodes[0].outcome] * len(episodes[0].records)


def test_game_records_replay(rng):
    m = generate_random_symmetric(4, seed=8)
    episodes = play_mdp_game(m, [MaxElemPolicy(), RandomPolicy()], None, rng)

    for ep in episodes:
        assert len(replay_episode(ep)) == len(ep.records)
        assert ep.final_state().step == ep.rotation_count


def test_replay_detects_divergence(rng):
    ep = play_mdp_game(generate_random_symmetric(3, seed=1), [MaxElemPolicy(), MaxElemPolicy()], None, rng)[0]
    ep.records[-1].state_key = "3:bogus"

    with pytest.raises(ValueError):
        replay_episode(ep)


def test_episode_json_round_trip(rng):
    ep = play_mdp_game(generate_random_symmetric(3, seed=1), [MaxElemPolicy(), RandomPolicy()], None, rng)[1]
    back = Episode.from_json(ep.to_json())

    assert back.actions == ep.actions
    assert back.outcome == ep.outcome
    assert np.array_equal(back.matrix.entries, ep.matrix.entries)
    assert replay_episode(back) == replay_episode(ep)


def test_decisions_are_logged(rng, temp_data_dir):
    log = DecisionLogger(temp_data_dir / "decisions.jsonl")
    episodes = play_mdp_game(generate_random_symmetric(3, seed=3), [MaxElemPolicy(), MaxElemPolicy()], None, rng,
                             decisions=log)

    assert log.records == sum(len(ep.records) for ep in episodes)
    first = next(iter(read_jsonl(temp_data_dir / "decisions.jsonl")))
    assert first["legal_actions"]
    assert first["seat"] == 0


def test_smdp_episode_on_diagonal_matrix_is_empty(rng):
    m = SymmetricMatrix.from_array(np.diag([3.0, 2.0, 1.0]))
    ep = play_smdp_episode(m, FixedOptionPolicy(SweepOption.Horizontal), None, rng)

    assert ep.records == []
    assert ep.outcome == 0.0
    assert ep.finished


def test_smdp_episode_rewards_count_rotations(rng):
    m = generate_random_symmetric(5, seed=7)
    ep = play_smdp_episode(m, FixedOptionPolicy(SweepOption.TopLeftBottomRight), None, rng)

    assert ep.finished
    assert ep.records[0].reward == pytest.approx(-0.10)
    assert ep.outcome == pytest.approx(-0.01 * ep.rotation_count)
    assert all(-1.0 <= v <= 0.0 for v in ep.value_targets)
    assert ep.value_targets == sorted(ep.value_targets)


def test_two_by_two_demo_has_one_step(rng):
    demos = make_synthetic_demos(2, 1, rng)

    assert len(demos) == 1
    assert len(demos[0].records) == 1
    assert demos[0].records[0].action == PivotAction(0, 1)
    assert demos[0].value_targets == [1.0]
    assert demos[0].source == "demo"


def test_demos_mix_maxelem_and_random_transitions(rng):
    demos = make_synthetic_demos(4, 5, rng)
    sources = {ep.source for ep in demos}

    assert "demo" in sources
    for ep in demos:
        assert all(r.policy.sum() == 1.0 for r in ep.records)
        assert ep.value_targets == [ep.outcome] * len(ep.records)
        if ep.source == "random":
            assert len(ep.records) == 1
            assert ep.rotation_count == 0


def test_best_fixed_option_is_cheapest():
    m = generate_random_symmetric(5, seed=3)
    best = best_fixed_option(m)
    counts = {
        opt: play_smdp_episode(m, FixedOptionPolicy(opt), None, np.random.default_rng(0)).rotation_count
        for opt in SweepOption
    }

    assert counts[best] == min(counts.values())


def test_option_demos(rng):
    demos = make_synthetic_option_demos(4, 2, rng)

    assert len(demos) == 2
    for ep in demos:
        assert ep.source == "demo"
        assert len(set(ep.actions)) == 1


def test_episode_samples_pad_targets(rng):
    ep = play_mdp_game(generate_random_symmetric(3, seed=1), [MaxElemPolicy(), MaxElemPolicy()], None, rng)[0]
    samples = episode_samples(ep, ModelConfig(n_max=5))

    assert len(samples) == len(ep.records)
    assert samples[0].policy.shape == (10,)
    assert samples[0].policy[3:].sum() == 0.0
    assert samples[0].context is None


def test_option_samples_carry_context(rng):
    ep = play_smdp_episode(generate_random_symmetric(4, seed=1), FixedOptionPolicy(SweepOption.Vertical), None, rng)
    samples = episode_samples(ep, ModelConfig(option_head=True, context_dim=9))

    assert samples[0].context.tolist() == [0.0] * 8 + [1.0]
    assert samples[1].context[2] == 1.0
    assert samples[0].policy.shape == (8,)


def test_effective_model_config():
    smdp = effective_model_config(RunConfig(mode="smdp"))
    mdp = effective_model_config(RunConfig(mode="mdp", sizes=[5]))

    assert smdp.option_head and smdp.context_dim == 9
    assert not mdp.option_head and mdp.context_dim == 0


def test_gate_accepts_threshold():
    assert gate_accepts(0.56, 0.55)
    assert not gate_accepts(0.55, 0.55)
    assert gate_accepts(1.0, 1.0)
    assert not gate_accepts(0.99, 1.0)


def test_gate_between_equal_players_is_even(rng):
    """MaxElem against itself ties every race."""
    matrices = [generate_random_symmetric(3, seed=s) for s in range(3)]
    result = gate(MaxElemPolicy(), MaxElemPolicy(), matrices, 0.55, rng)

    assert result.games == 6
    assert result.metric == pytest.approx(0.5)
    assert not result.accepted


def test_gate_smdp_requires_strict_improvement(rng):
    matrices = [generate_random_symmetric(4, seed=s) for s in range(3)]
    policy = FixedOptionPolicy(SweepOption.Horizontal)
    result = gate_smdp(policy, policy, matrices, rng)

    assert result.metric == result.champion_metric
    assert not result.accepted


def test_build_pools_are_disjoint():
    run = RunConfig(sizes=[3, 4], split=(3, 2))
    train, evaluation = build_pools(run, seed=1)

    assert len(train) == 6
    assert len(evaluation) == 4
    assert sorted({m.n for m in train}) == [3, 4]


def test_build_pools_from_manifests(temp_data_dir):
    names = []
    for i in range(3):
        name = f"matrix_3_{i:04d}.txt"
        write_matrix(temp_data_dir / name, generate_random_symmetric(3, seed=i).entries)
        names.append(name)
    write_json(temp_data_dir / "train_manifest.json", names[:2])
    write_json(temp_data_dir / "eval_manifest.json", names[2:])
    run = RunConfig(sizes=[3], paths=dict(
        train_manifest=str(temp_data_dir / "train_manifest.json"),
        eval_manifest=str(temp_data_dir / "eval_manifest.json"),
    ))
    train, evaluation = build_pools(run, seed=0)

    assert len(train) == 2
    assert len(evaluation) == 1


def test_training_round_produces_candidate(rng):
    run = _tiny_run()
    champion = init_params(effective_model_config(run), seed=0)
    pool = [generate_random_symmetric(3, seed=s) for s in range(2)]
    result = training_round(TrainerState(champion), run, pool, rng)

    assert result.opponent == "maxelem"
    assert len(result.losses) == 1
    assert result.samples > 0
    assert all(ep.player in ("mcts", "maxelem") for ep in result.episodes)
    assert result.candidate.metadata["iteration"] == 1
    assert not np.array_equal(result.candidate.weights["fc.W"], champion.weights["fc.W"])


def test_training_round_logs_decisions(rng, temp_data_dir):
    run = _tiny_run()
    champion = init_params(effective_model_config(run), seed=0)
    pool = [generate_random_symmetric(3, seed=s) for s in range(2)]
    log = temp_data_dir / "decisions.jsonl"
    training_round(TrainerState(champion), run, pool, rng, decisions_path=log)

    records = list(read_jsonl(log))
    assert records
    assert {r["round"] for r in records} == {1}
    assert {r["game"] for r in records} == {0}
    assert {r["seat"] for r in records} == {0, 1}
    assert all(len(r["policy_target"]) == 3 for r in records)
    assert not list(temp_data_dir.glob("decisions.jsonl.part*"))


def test_training_round_without_data_fails(rng):
    run = _tiny_run(games_per_round=0)
    champion = init_params(effective_model_config(run), seed=0)

    with pytest.raises(EmptyTrainingData):
        training_round(TrainerState(champion), run, [], rng)


def test_run_training_writes_artifacts_and_resumes(temp_data_dir):
    run = _tiny_run()
    manifest = run_training(run, temp_data_dir, jobs=1)

    assert len(manifest.rounds) == 1
    assert (temp_data_dir / "checkpoints" / "champion_000.json").exists()
    assert (temp_data_dir / "checkpoints" / "candidate_001.json").exists()
    assert read_json(temp_data_dir / "effective_config.json")["seed"] == 5
    assert pd.read_csv(temp_data_dir / "metrics.csv")["round"].tolist() == [1]
    assert list(read_jsonl(temp_data_dir / "episodes.jsonl"))
    assert {r["round"] for r in read_jsonl(temp_data_dir / "decisions.jsonl")} == {1}

    again = run_training(run, temp_data_dir, jobs=1)
    assert len(again.rounds) == 1

    more = run_training(_tiny_run(rounds=2), temp_data_dir, jobs=1)
    assert [e.round for e in more.rounds] == [1, 2]


def test_zero_rounds_only_writes_initial_champion(temp_data_dir):
    manifest = run_training(_tiny_run(rounds=0), temp_data_dir, jobs=1)

    assert manifest.rounds == []
    assert manifest.champion == "checkpoints/champion_000.json"
    assert not (temp_data_dir / "metrics.csv").exists()


def test_smdp_training_round(temp_data_dir):
    manifest = run_training(_tiny_run(mode="smdp"), temp_data_dir, jobs=1)

    assert len(manifest.rounds) == 1
    assert manifest.rounds[0].opponent == "champion"
    assert manifest.rounds[0].gate_metric > 0
    records = list(read_jsonl(temp_data_dir / "decisions.jsonl"))
    assert records and all(0 <= r["action"] < 8 for r in records)


def test_decision_log_can_be_disabled(temp_data_dir):
    run = _tiny_run().model_copy(update={"paths": PathsConfig(decisions=None)})
    run_training(run, temp_data_dir, jobs=1)

    assert not (temp_data_dir / "decisions.jsonl").exists()
