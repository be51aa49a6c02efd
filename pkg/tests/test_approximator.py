"""Tests for the graph network, its gradients and checkpoints."""

import json

import numpy as np
import pytest

from src.approximator import (
    NetworkEvaluator,
    TrainingSample,
    batch_loss,
    build_graph,
    forward,
    init_params,
    lattice_edges,
    load_params,
    loss_and_grads,
    map_policy,
    save_params,
    train_step,
)
from src.errors import CorruptFile, DimensionMismatch, MissingCheckpoint, SizeExceedsMax, VersionMismatch
from src.matrix_core import SymmetricMatrix, generate_random_symmetric
from src.mcts import PivotGame
from src.models import ModelConfig


def _small_config(**overrides):
    base = dict(n_max=3, num_layers=2, hidden_dim=6, dropout_rate=0.0, l2=1e-3)
    base.update(overrides)
    return ModelConfig(**base)


def _samples():
    a = generate_random_symmetric(3, seed=1)
    b = generate_random_symmetric(3, seed=2)
    c = SymmetricMatrix.from_array([[1.0, 0.4], [0.4, -1.0]])
    return [
        TrainingSample.from_matrix(a, np.array([0.2, 0.5, 0.3]), 0.5),
        TrainingSample.from_matrix(b, np.array([0.0, 0.0, 1.0]), -0.25),
        TrainingSample.from_matrix(c, np.array([1.0, 0.0, 0.0]), 1.0),
    ]


def test_lattice_sizes():
    """Nodes n(n+1)/2, edges n(n-1)."""
    g2 = build_graph(SymmetricMatrix.from_array([[1.0, 0.5], [0.5, 2.0]]))
    g3 = build_graph(generate_random_symmetric(3, seed=0))

    assert g2.num_nodes == 3
    assert len(g2.edges) == 2
    assert g3.num_nodes == 6
    assert len(g3.edges) == 6
    assert len(lattice_edges(6)) == 30


def test_node_values_follow_upper_index():
    m = SymmetricMatrix.from_array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    g = build_graph(m)

    assert g.node_values.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    assert g.features.shape == (6, 4)
    assert g.features[:, 2].tolist() == [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]


def test_map_policy_masks_unused_slots():
    """n = 3 inside n_max = 5: three nonzero slots, uniform for flat logits."""
    out = map_policy(np.zeros(10), 3, 5)

    assert out[:3] == pytest.approx([1 / 3, 1 / 3, 1 / 3])
    assert np.count_nonzero(out) == 3
    assert out.sum() == pytest.approx(1.0)


def test_map_policy_errors():
    with pytest.raises(SizeExceedsMax):
        map_policy(np.zeros(10), 6, 5)
    with pytest.raises(DimensionMismatch):
        map_policy(np.zeros(7), 3, 5)


def test_forward_shapes_and_range():
    params = init_params(ModelConfig(n_max=6, num_layers=3, hidden_dim=16), seed=0)
    out = forward(build_graph(generate_random_symmetric(4, seed=3)), params)

    assert out.policy.shape == (15,)
    assert out.policy[:6].sum() == pytest.approx(1.0)
    assert np.all(out.policy[6:] == 0.0)
    assert -1.0 < out.value < 1.0


def test_forward_policy_is_mapped_logits():
    """The pivot head's policy is map_policy of its own logits."""
    params = init_params(ModelConfig(n_max=5, num_layers=2, hidden_dim=8), seed=2)
    out = forward(build_graph(generate_random_symmetric(3, seed=4)), params)

    assert out.policy == pytest.approx(map_policy(out.logits, 3, 5), abs=1e-15)


def test_forward_rejects_oversized_matrix():
    params = init_params(_small_config(), seed=0)

    with pytest.raises(SizeExceedsMax):
        forward(build_graph(generate_random_symmetric(4, seed=0)), params)


def test_forward_is_permutation_invariant():
    """Relabeling nodes leaves the pooled readout unchanged."""
    params = init_params(ModelConfig(n_max=4, num_layers=2, hidden_dim=8), seed=4)
    g = build_graph(generate_random_symmetric(4, seed=5))
    perm = np.random.default_rng(0).permutation(g.num_nodes)

    a = forward(g, params)
    b = forward(g.permuted(perm), params)
    assert b.value == pytest.approx(a.value, abs=1e-12)
    assert b.logits == pytest.approx(a.logits, abs=1e-12)


def test_dropout_only_in_train_mode():
    params = init_params(ModelConfig(n_max=4, num_layers=2, hidden_dim=16, dropout_rate=0.5), seed=1)
    g = build_graph(generate_random_symmetric(4, seed=1))

    assert forward(g, params).value == forward(g, params).value
    a = forward(g, params, train_mode=True, rng=np.random.default_rng(1))
    b = forward(g, params, train_mode=True, rng=np.random.default_rng(2))
    assert a.value != b.value


def test_option_head_with_context():
    params = init_params(ModelConfig(option_head=True, context_dim=9, num_layers=2, hidden_dim=8), seed=0)
    ctx = np.zeros(9)
    ctx[8] = 1.0
    out = forward(build_graph(generate_random_symmetric(7, seed=0)), params, context=ctx)

    assert out.policy.shape == (8,)
    assert out.policy.sum() == pytest.approx(1.0)


def test_gradients_match_finite_differences():
    """Analytic gradient of the full loss against central differences."""
    params = init_params(_small_config(learn_eps=True), seed=7)
    params.weights["gin0.eps"][:] = 0.1
    samples = _samples()
    _, grads = loss_and_grads(params, samples)
    h = 1e-6

    for name, arr in params.weights.items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            original = arr[idx]
            arr[idx] = original + h
            plus, _ = loss_and_grads(params, samples)
            arr[idx] = original - h
            minus, _ = loss_and_grads(params, samples)
            arr[idx] = original
            numeric[idx] = (plus - minus) / (2 * h)
        assert grads[name] == pytest.approx(numeric, rel=1e-4, abs=1e-6), name


def test_fixed_eps_gets_no_gradient():
    params = init_params(_small_config(learn_eps=False), seed=0)
    _, grads = loss_and_grads(params, _samples())

    assert grads["gin0.eps"].tolist() == [0.0]
    assert "gin0.eps" not in params.trainable()


def test_train_step_reduces_loss():
    """A few steps on a fixed batch lower its loss."""
    params = init_params(_small_config(hidden_dim=16), seed=3)
    samples = _samples()
    before = batch_loss(params, samples)
    for _ in range(40):
        params, _ = train_step(params, samples, lr=0.01)

    assert batch_loss(params, samples) < before


def test_train_step_does_not_mutate_input():
    params = init_params(_small_config(), seed=0)
    snapshot = params.weights["fc.W"].copy()
    new, loss = train_step(params, _samples(), lr=0.1)

    assert np.array_equal(params.weights["fc.W"], snapshot)
    assert not np.array_equal(new.weights["fc.W"], snapshot)
    assert np.isfinite(loss)


def test_checkpoint_round_trip(temp_data_dir):
    params = init_params(_small_config(), seed=9)
    path = temp_data_dir / "ckpt.json"
    save_params(params, path)
    loaded = load_params(path)

    assert loaded.config == params.config
    for name, arr in params.weights.items():
        assert np.array_equal(loaded.weights[name], arr)


def test_checkpoint_errors(temp_data_dir):
    with pytest.raises(MissingCheckpoint):
        load_params(temp_data_dir / "none.json")

    bad = temp_data_dir / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(CorruptFile):
        load_params(bad)

    path = temp_data_dir / "old.json"
    save_params(init_params(_small_config(), seed=0), path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["format_version"] = 99
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(VersionMismatch):
        load_params(path)


def test_network_evaluator_priors_cover_legal_actions(sample_matrix):
    params = init_params(ModelConfig(n_max=4, num_layers=2, hidden_dim=8), seed=0)
    game = PivotGame(policy_size=6)
    state = game.initial(sample_matrix)
    priors, values = NetworkEvaluator(params).evaluate(game, state)

    assert len(priors) == len(game.legal_actions(state))
    assert priors.sum() == pytest.approx(1.0)
    assert values.shape == (1,)
