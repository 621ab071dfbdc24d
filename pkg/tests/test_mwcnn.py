import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pamwcnn import gradcheck
from pamwcnn.mwcnn import (
    DESK_CONFIG,
    FULL_CONFIG,
    ConfigError,
    ModelConfig,
    ModelParams,
    backward,
    build_model,
    forward,
    shape_walk,
)
from pamwcnn.tensor_core import ConvLayerParams, ShapeError, mse_loss

from oracles import conv2d_direct, dwt_loops, iwt_loops

TINY = ModelConfig(levels=1, convs_per_block=1, channel_schedule=(4,))


def _zero_model(config):
    params = build_model(config, 0, dtype=np.float64)
    for layer in params.layers:
        layer.weights[:] = 0
    return params


def test_desk_forward_shape_and_dtype(rng):
    params = build_model(DESK_CONFIG, 0)
    x = rng.uniform(0, 1, (3, 1, 16, 20)).astype(np.float32)
    out = forward(params, x)
    assert out.shape == x.shape and out.dtype == np.float32
    assert np.isfinite(out).all()


def test_build_is_seed_deterministic():
    a, b, c = build_model(DESK_CONFIG, 7), build_model(DESK_CONFIG, 7), build_model(DESK_CONFIG, 8)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    assert any(not np.array_equal(x, y) for x, y in zip(a.arrays(), c.arrays()))


def test_he_initialisation_variance():
    cfg = ModelConfig(levels=1, convs_per_block=1, channel_schedule=(64,))
    params = build_model(cfg, 3, dtype=np.float64)
    w = params.layers[0].weights  # 64 x 4 x 3 x 3
    big = params.layers[1].weights  # 4 x 64 x 3 x 3
    for weights in (w, big):
        fan_in = weights.shape[1] * 9
        assert weights.var() == pytest.approx(2.0 / fan_in, rel=0.2)
    assert w.size + big.size > 4000
    assert all(not layer.bias.any() for layer in params.layers)


def test_he_variance_large_layer():
    cfg = ModelConfig(levels=1, convs_per_block=2, channel_schedule=(40,))
    w = build_model(cfg, 0, dtype=np.float64).layers[1].weights  # 40 x 40 x 3 x 3
    assert w.size >= 10_000
    assert w.var() == pytest.approx(2.0 / (40 * 9), rel=0.2)


def test_layer_shapes_desk():
    assert DESK_CONFIG.layer_shapes() == [
        (16, 4), (16, 16),
        (32, 64), (32, 32),
        (32, 32), (64, 32),
        (16, 16), (4, 16),
    ]


def test_zero_weight_model_outputs_zero(rng):
    x = rng.standard_normal((2, 1, 8, 8))
    assert not forward(_zero_model(DESK_CONFIG), x).any()


def test_zero_weight_residual_model_is_identity(rng):
    cfg = ModelConfig(levels=2, convs_per_block=2, channel_schedule=(16, 32), residual_mode=True)
    x = rng.standard_normal((2, 1, 8, 8))
    np.testing.assert_array_equal(forward(_zero_model(cfg), x), x)


def test_tiny_model_matches_composed_oracles(rng):
    params = build_model(TINY, 5, dtype=np.float64)
    for layer in params.layers:
        layer.bias[:] = rng.standard_normal(layer.bias.shape)
    x = rng.standard_normal((1, 1, 4, 6))
    s = np.array(dwt_loops(x))
    z = np.array(conv2d_direct(s, params.layers[0].weights, params.layers[0].bias))
    h = np.maximum(z, 0)
    z = np.array(conv2d_direct(h, params.layers[1].weights, params.layers[1].bias))
    expected = np.array(iwt_loops(z))
    np.testing.assert_allclose(forward(params, x), expected, rtol=1e-10, atol=1e-12)


def test_two_level_skip_matches_composed_oracles(rng):
    cfg = ModelConfig(levels=2, convs_per_block=1, channel_schedule=(1, 2))
    params = build_model(cfg, 2, dtype=np.float64)
    x = rng.standard_normal((1, 1, 8, 8))
    relu = lambda a: np.maximum(a, 0)
    conv = lambda a, i: np.array(conv2d_direct(a, params.layers[i].weights, params.layers[i].bias))
    e1 = relu(conv(np.array(dwt_loops(x)), 0))
    e2 = relu(conv(np.array(dwt_loops(e1)), 1))
    d2 = np.array(iwt_loops(relu(conv(e2, 2)))) + e1
    expected = np.array(iwt_loops(conv(d2, 3)))
    np.testing.assert_allclose(forward(params, x), expected, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name", sorted(gradcheck.TINY_MODELS))
def test_model_gradcheck(name):
    config, size = gradcheck.TINY_MODELS[name]
    assert build_model(config, 0).num_params() <= 500
    assert gradcheck.check_model(config, size, seed=0) < 1e-5


def test_zero_output_gradient_gives_zero_grads(rng):
    params = build_model(DESK_CONFIG, 0, dtype=np.float64)
    x = rng.standard_normal((1, 1, 8, 8))
    for g in backward(params, x, np.zeros_like(x)):
        assert not g.weights.any() and not g.bias.any()


def test_backward_rejects_bad_grad_shape(rng):
    params = build_model(TINY, 0)
    with pytest.raises(ShapeError):
        backward(params, np.zeros((1, 1, 4, 4), np.float32), np.zeros((1, 1, 2, 2), np.float32))


def test_training_step_reduces_loss(rng):
    params = build_model(DESK_CONFIG, 1, dtype=np.float64)
    x = rng.uniform(0, 1, (2, 1, 8, 8))
    loss0, g = mse_loss(forward(params, x), x)
    grads = backward(params, x, g)
    for layer, lg in zip(params.layers, grads):
        layer.weights -= 1e-3 * lg.weights
        layer.bias -= 1e-3 * lg.bias
    assert mse_loss(forward(params, x), x)[0] < loss0


@pytest.mark.parametrize("shape", [(1, 1, 6, 8), (1, 1, 8, 6), (1, 2, 8, 8), (1, 8, 8)])
def test_bad_input_shapes(shape):
    with pytest.raises(ShapeError):
        forward(build_model(DESK_CONFIG, 0), np.zeros(shape, np.float32))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(levels=0, channel_schedule=()),
        dict(levels=2, channel_schedule=(4,)),
        dict(levels=1, convs_per_block=0, channel_schedule=(4,)),
        dict(levels=1, channel_schedule=(0,)),
        dict(levels=1, channel_schedule=(4,), input_channels=3),
        dict(levels=2, channel_schedule=(8, 4)),
    ],
)
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_params_reject_wrong_layer_shapes():
    params = build_model(TINY, 0)
    bad = list(params.layers)
    bad[0] = ConvLayerParams(np.zeros((5, 4, 3, 3), np.float32), np.zeros(5, np.float32))
    with pytest.raises(ShapeError):
        ModelParams(TINY, bad)
    with pytest.raises(ShapeError):
        ModelParams(TINY, bad[:1])


def test_full_config_shape_walk():
    trace = dict(shape_walk(FULL_CONFIG, 512, 512))
    assert trace["enc3.conv2"] == (1024, 64, 64)
    assert trace["iwt1"] == (1, 512, 512)
    assert sum(k.startswith("dwt") for k in trace) == sum(k.startswith("iwt") for k in trace) == 3


def test_shape_walk_rejects_indivisible():
    with pytest.raises(ShapeError):
        shape_walk(FULL_CONFIG, 100, 512)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4).flatmap(
        lambda L: st.tuples(
            st.just(L),
            st.integers(1, 3),
            st.lists(st.integers(1, 64), min_size=L, max_size=L),
            st.integers(1, 4),
            st.booleans(),
        )
    )
)
def test_property_shape_walk_round_trips(args):
    levels, k, schedule, mult, residual = args
    schedule = schedule[:-1] + [max(schedule)]
    cfg = ModelConfig(levels=levels, convs_per_block=k, channel_schedule=schedule, residual_mode=residual)
    size = cfg.downsample * mult
    trace = shape_walk(cfg, size, size)
    assert trace[-1][1] == (1, size, size)
    assert sum(stage.startswith("add") for stage, _ in trace) == levels - 1
    convs = [shape for stage, shape in trace if ".conv" in stage]
    assert len(convs) == len(cfg.layer_shapes()) == 2 * levels * k


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_property_forward_preserves_shape(levels, k, seed):
    cfg = ModelConfig(levels=levels, convs_per_block=k, channel_schedule=(2,) * levels)
    params = build_model(cfg, seed)
    x = np.random.default_rng(seed).uniform(0, 1, (1, 1, 2 * cfg.downsample, cfg.downsample)).astype(np.float32)
    out = forward(params, x)
    assert out.shape == x.shape and np.isfinite(out).all()
