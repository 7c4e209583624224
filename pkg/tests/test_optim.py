import numpy as np
import pytest

from splitlab.errors import ValidationError
from splitlab.nn import backward, bce_loss, forward
from splitlab.optim import AdamState, Optimizer, OptimizerConfig, adam_step, sgd_step

from conftest import build_model, random_batch


def scalar_adam_oracle(grads, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, p0=0.0):
    """Plain-python Adam trajectory for one scalar parameter."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p -= lr * m_hat / (v_hat**0.5 + eps)
    return p


def test_defaults_match_expected_values():
    cfg = OptimizerConfig()
    assert cfg.learning_rate == 1e-4
    assert cfg.beta1 == 0.9
    assert cfg.beta2 == 0.999
    assert cfg.epsilon == 1e-8
    assert cfg.algo == "adam"


def test_config_validation():
    with pytest.raises(ValidationError):
        OptimizerConfig(learning_rate=-1.0)
    with pytest.raises(ValidationError):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ValidationError):
        OptimizerConfig(epsilon=0.0)
    with pytest.raises(ValidationError):
        OptimizerConfig(algo="momentum")


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.5, -2.0])}
    state = AdamState(params)
    adam_step(params, {"w": np.zeros(2)}, state, OptimizerConfig())
    assert np.array_equal(params["w"], np.array([1.5, -2.0]))
    assert state.step_count == 1


def test_first_step_moves_by_learning_rate():
    params = {"p": np.array([0.0])}
    state = AdamState(params)
    adam_step(params, {"p": np.array([1.0])}, state, OptimizerConfig(learning_rate=1e-4))
    # bias correction makes the first step lr * sign(grad), up to epsilon
    assert params["p"][0] == pytest.approx(-1e-4, abs=1e-11)
    assert params["p"][0] == pytest.approx(scalar_adam_oracle([1.0]), abs=1e-15)


def test_two_steps_match_scalar_oracle():
    params = {"p": np.array([0.0])}
    state = AdamState(params)
    cfg = OptimizerConfig(learning_rate=1e-4)
    adam_step(params, {"p": np.array([1.0])}, state, cfg)
    adam_step(params, {"p": np.array([1.0])}, state, cfg)
    assert state.step_count == 2
    assert params["p"][0] == pytest.approx(scalar_adam_oracle([1.0, 1.0]), abs=1e-12)


def test_varied_gradient_trajectory_matches_oracle():
    grads = [0.3, -1.2, 0.05, 2.0, -0.7]
    params = {"p": np.array([0.25])}
    state = AdamState(params)
    cfg = OptimizerConfig(learning_rate=3e-3)
    for g in grads:
        adam_step(params, {"p": np.array([g])}, state, cfg)
    expected = scalar_adam_oracle(grads, lr=3e-3, p0=0.25)
    assert params["p"][0] == pytest.approx(expected, abs=1e-12)


def test_shape_mismatch_rejected():
    params = {"w": np.zeros((2, 2))}
    state = AdamState(params)
    with pytest.raises(ValidationError):
        adam_step(params, {"w": np.zeros(3)}, state, OptimizerConfig())
    with pytest.raises(ValidationError):
        adam_step(params, {"v": np.zeros((2, 2))}, state, OptimizerConfig())


def test_sgd_step_is_plain_descent():
    params = {"w": np.array([1.0, -1.0])}
    state = AdamState(params)
    sgd_step(params, {"w": np.array([0.5, 0.5])}, state, OptimizerConfig(learning_rate=0.1, algo="sgd"))
    assert params["w"] == pytest.approx(np.array([0.95, -1.05]))
    assert state.step_count == 1


def test_optimizer_mutates_live_model_and_bumps_versions():
    model = build_model((3, 2, 1), seed=0)
    opt = Optimizer(model, OptimizerConfig(learning_rate=0.05))
    x, y = random_batch(np.random.default_rng(5), 4, 3)
    out, cache = forward(model, x)
    _, dpred = bce_loss(out, y)
    grads, _ = backward(model, cache, dpred)
    before = model.checksum()
    versions = [layer.version for layer in model.layers]
    opt.step(grads)
    assert model.checksum() != before
    for layer, v in zip(model.layers, versions):
        expected = v + 1 if layer.params() else v
        assert layer.version == expected
    assert opt.state.step_count == 1


def test_training_reduces_loss_on_separable_data():
    model = build_model((2, 4, 1), seed=3)
    opt = Optimizer(model, OptimizerConfig(learning_rate=0.05))
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-2.0, 0.5, (30, 2)), rng.normal(2.0, 0.5, (30, 2))])
    y = np.vstack([np.zeros((30, 1)), np.ones((30, 1))])
    first_loss = None
    for _ in range(60):
        out, cache = forward(model, x)
        loss, dpred = bce_loss(out, y)
        if first_loss is None:
            first_loss = loss
        grads, _ = backward(model, cache, dpred)
        opt.step(grads)
    final_loss = bce_loss(forward(model, x)[0], y)[0]
    assert final_loss < first_loss * 0.5
