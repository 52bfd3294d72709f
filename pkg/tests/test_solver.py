from collections import OrderedDict

import numpy as np
import pytest

from engines.metrics_engine import rmse_mfcc
from engines.triple_engine import build_generators, generate_triples
from errors import NonFiniteLoss, TrainingError
from network.amss_net import forward, init_params, triple_loss
from solver import AdamOptimizer, Solver
from mocks import get_mock_triple, get_mock_two_stem


@pytest.fixture
def micro_model(micro_dims):
    return init_params(micro_dims, seed=0)


@pytest.fixture
def small_set():
    return [get_mock_triple(seconds=0.25, seed=s) for s in range(2)]


def test_adam_first_step_moves_by_lr():
    tensors = OrderedDict([("w", np.array([1.0, -2.0, 3.0]))])
    grads = OrderedDict([("w", np.array([0.5, -4.0, 1e-3]))])
    adam = AdamOptimizer(lr=0.01)
    updated = adam.step(tensors, grads)
    np.testing.assert_allclose(updated["w"], tensors["w"] - 0.01 * np.sign(grads["w"]), atol=1e-6)
    np.testing.assert_array_equal(tensors["w"], [1.0, -2.0, 3.0])
    assert adam.t == 1


def test_zero_learning_rate_keeps_loss_constant(micro_model, small_set):
    result = Solver(micro_model).train(small_set, steps=3, lr=0.0, batch_size=2)
    assert len(result.losses) == 3
    assert result.losses[0] == result.losses[1] == result.losses[2]
    for name, value in micro_model.tensors.items():
        np.testing.assert_array_equal(result.params.tensors[name], value)


def test_training_reduces_loss_on_a_tiny_set(micro_model, small_set):
    result = Solver(micro_model).train(small_set, steps=10, lr=1e-3, batch_size=2)
    assert result.losses[-1] < result.losses[0]


def test_parallel_batch_gradients_match_serial(micro_model, small_set):
    serial = Solver(micro_model, jobs=1).batch_gradients(small_set, [0, 1])
    parallel = Solver(micro_model, jobs=2).batch_gradients(small_set, [0, 1])
    assert serial[0] == parallel[0]
    for name in serial[1]:
        np.testing.assert_array_equal(serial[1][name], parallel[1][name])


def test_halve_and_restart(micro_model, small_set):
    solver = Solver(micro_model)
    solver.optimizer.lr = 1e-3
    solver.step(small_set, [0, 1], 0)
    solver.halve_and_restart()
    assert solver.optimizer.lr == pytest.approx(5e-4)
    assert solver.optimizer.t == 0
    for name, value in micro_model.tensors.items():
        np.testing.assert_array_equal(solver.params.tensors[name], value)


def test_restart_schedule_is_recorded(micro_model, small_set):
    result = Solver(micro_model).train(small_set, steps=4, lr=1e-3, batch_size=2, restart_at=[2])
    assert result.restarts == [2]


def test_non_finite_loss_aborts(micro_model, small_set):
    tensors = OrderedDict(micro_model.tensors)
    tensors["agg.wg.head_a.b"] = np.full_like(tensors["agg.wg.head_a.b"], np.inf)
    solver = Solver(micro_model.with_tensors(tensors))
    with pytest.raises(NonFiniteLoss) as exc:
        solver.step(small_set, [0], 7)
    assert exc.value.step == 7


def test_empty_dataset_rejected(micro_model):
    with pytest.raises(ValueError):
        Solver(micro_model).train([], steps=1)


@pytest.mark.parametrize("kwargs", [
    {"steps": 0, "lr": 1e-3},
    {"steps": 1, "lr": 1e-3, "batch_size": 0},
    {"steps": 1, "lr": 0.1},
    {"steps": 1, "lr": 1e-6},
])
def test_out_of_range_training_settings_rejected(micro_model, small_set, kwargs):
    with pytest.raises(TrainingError):
        Solver(micro_model).train(small_set, **kwargs)


@pytest.mark.slow
def test_micro_training_acceptance(micro_model):
    tracks = [get_mock_two_stem(seconds=1.0, seed=s) for s in range(8)]
    gens = build_generators(["decrease_volume"], ("vocals", "drums"))
    train = generate_triples(tracks, gens, 64, seed=0, segment_s=0.5)
    held_out = generate_triples(tracks, gens, 16, seed=1, segment_s=0.5)

    before = np.mean([triple_loss(t, micro_model) for t in train])
    result = Solver(micro_model).train(train, steps=200, lr=1e-3, batch_size=8, seed=0)
    after = np.mean([triple_loss(t, result.params) for t in train])
    assert after <= 0.5 * before

    model_rmse = np.mean([rmse_mfcc(t.target, forward(t.input, t.description, result.params)) for t in held_out])
    identity_rmse = np.mean([rmse_mfcc(t.target, t.input) for t in held_out])
    assert model_rmse < identity_rmse
