"""Multi-level wavelet CNN: Haar DWT in place of pooling, IWT in place of upsampling.

Topology for ``levels = L`` and widths ``s[1..L]`` (``s[0]`` = input channels)::

    contracting, l = 1..L:  DWT -> [conv+ReLU] x k   (4*s[l-1] -> s[l])    -> skip[l]
    expanding,   l = L..1:  [conv+ReLU] x k   (s[l] -> 4*s[l-1]) -> IWT -> + skip[l-1]

The last conv of the expanding path has no ReLU. At l = 1 there is no
contracting map at full resolution, so the only full-resolution addition is
the optional residual connection to the input.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import (
    ConvLayerParams,
    ShapeError,
    add_forward,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)
from .wavelet import dwt_backward, dwt_forward, iwt_backward, iwt_forward


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 3
    convs_per_block: int = 3
    channel_schedule: tuple = (64, 256, 1024)
    input_channels: int = 1
    residual_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(int(c) for c in self.channel_schedule))
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.convs_per_block < 1:
            raise ConfigError(f"convs_per_block must be >= 1, got {self.convs_per_block}")
        if len(self.channel_schedule) != self.levels:
            raise ConfigError(
                f"channel_schedule has {len(self.channel_schedule)} entries for {self.levels} levels"
            )
        if any(c < 1 for c in self.channel_schedule):
            raise ConfigError(f"channel widths must be positive: {self.channel_schedule}")
        if max(self.channel_schedule) != self.channel_schedule[-1]:
            raise ConfigError(f"the deepest level must be the widest: {self.channel_schedule}")
        if self.input_channels != 1:
            raise ConfigError("only single-channel input is supported")

    @property
    def widths(self):
        return (self.input_channels,) + self.channel_schedule

    def layer_shapes(self):
        """(c_out, c_in) of every conv layer in builder order."""
        s, k = self.widths, self.convs_per_block
        shapes = []
        for l in range(1, self.levels + 1):
            c_in = 4 * s[l - 1]
            for _ in range(k):
                shapes.append((s[l], c_in))
                c_in = s[l]
        for l in range(self.levels, 0, -1):
            for j in range(k):
                c_out = s[l] if j < k - 1 else 4 * s[l - 1]
                shapes.append((c_out, s[l]))
        return shapes

    @property
    def downsample(self):
        return 2 ** self.levels


DESK_CONFIG = ModelConfig(levels=2, convs_per_block=2, channel_schedule=(16, 32))
FULL_CONFIG = ModelConfig()


@dataclass
class ModelParams:
    config: ModelConfig
    layers: list = field(default_factory=list)

    def __post_init__(self):
        expected = self.config.layer_shapes()
        if len(self.layers) != len(expected):
            raise ShapeError(f"expected {len(expected)} conv layers, got {len(self.layers)}")
        for i, (layer, (c_out, c_in)) in enumerate(zip(self.layers, expected)):
            if layer.weights.shape != (c_out, c_in, 3, 3):
                raise ShapeError(
                    f"layer {i}: weights {layer.weights.shape} != {(c_out, c_in, 3, 3)}"
                )

    def arrays(self):
        """Flat list of parameter arrays, weights then bias per layer."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def num_params(self):
        return sum(a.size for a in self.arrays())

    def astype(self, dtype):
        return ModelParams(self.config, [layer.astype(dtype) for layer in self.layers])

    def copy(self):
        return self.astype(self.layers[0].weights.dtype)


def build_model(config, seed, dtype=np.float32):
    """He-normal weights (variance 2/fan_in) and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    layers = []
    for c_out, c_in in config.layer_shapes():
        fan_in = c_in * 9
        w = rng.standard_normal((c_out, c_in, 3, 3)) * math.sqrt(2.0 / fan_in)
        layers.append(ConvLayerParams(w.astype(dtype), np.zeros(c_out, dtype=dtype)))
    return ModelParams(config, layers)


def _check_input(params, x):
    if x.ndim != 4:
        raise ShapeError(f"model input must be (n, 1, h, w), got shape {x.shape}")
    cfg = params.config
    if x.shape[1] != cfg.input_channels:
        raise ShapeError(f"model expects {cfg.input_channels} input channel(s), got {x.shape[1]}")
    h, w = x.shape[2:]
    if h % cfg.downsample or w % cfg.downsample:
        raise ShapeError(
            f"spatial dims {h}x{w} must be divisible by 2**levels = {cfg.downsample}"
        )


def forward_with_cache(params, x):
    """Forward pass that also records everything the backward pass needs."""
    _check_input(params, x)
    cfg = params.config
    k, L = cfg.convs_per_block, cfg.levels
    layers = iter(params.layers)
    # one record per conv: (conv input, pre-activation output or None if linear)
    records = []
    skips = []

    h = x
    for _ in range(L):
        h = dwt_forward(h)
        for _ in range(k):
            layer = next(layers)
            z = conv2d_forward(h, layer)
            records.append((h, z))
            h = relu_forward(z)
        skips.append(h)

    for l in range(L, 0, -1):
        for j in range(k):
            layer = next(layers)
            z = conv2d_forward(h, layer)
            last = l == 1 and j == k - 1
            records.append((h, None if last else z))
            h = z if last else relu_forward(z)
        h = iwt_forward(h)
        if l > 1:
            h = add_forward(h, skips[l - 2])
    if cfg.residual_mode:
        h = add_forward(h, x)
    return h, records


def forward(params, x):
    return forward_with_cache(params, x)[0]


def backward_from_cache(params, records, grad_output):
    """Chain rule over the cached forward. Returns (layer grads, grad wrt input)."""
    cfg = params.config
    k, L = cfg.convs_per_block, cfg.levels
    grads = [None] * len(params.layers)
    idx = len(params.layers) - 1
    g = grad_output
    grad_input = grad_output.copy() if cfg.residual_mode else 0
    # gradients arriving at each contracting block output via its skip
    skip_grads = [None] * L

    def conv_back(g):
        nonlocal idx
        inp, z = records[idx]
        if z is not None:
            g = relu_backward(z, g)
        gx, gw, gb = conv2d_backward(inp, params.layers[idx], g)
        grads[idx] = ConvLayerParams(gw, gb)
        idx -= 1
        return gx

    for l in range(1, L + 1):
        if l > 1:
            skip_grads[l - 2] = g
        g = iwt_backward(g)
        for _ in range(k):
            g = conv_back(g)

    for l in range(L, 0, -1):
        if l < L:
            # contracting output of level l feeds both level l+1 and the skip
            g = g + skip_grads[l - 1]
        for _ in range(k):
            g = conv_back(g)
        g = dwt_backward(g)
    return grads, grad_input + g


def backward(params, x, grad_output):
    out, records = forward_with_cache(params, x)
    if grad_output.shape != out.shape:
        raise ShapeError(f"grad_output shape {grad_output.shape} != output shape {out.shape}")
    return backward_from_cache(params, records, grad_output)[0]


def shape_walk(config, height, width):
    """Symbolically trace tensor shapes through the network without computing anything.

    Returns a list of ``(stage, (channels, h, w))`` and checks every skip-add.
    """
    if height % config.downsample or width % config.downsample:
        raise ShapeError(
            f"spatial dims {height}x{width} must be divisible by {config.downsample}"
        )
    s, k = config.widths, config.convs_per_block
    shapes = iter(config.layer_shapes())
    trace = []
    c, h, w = s[0], height, width
    skips = []
    n_dwt = n_iwt = 0
    for l in range(1, config.levels + 1):
        c, h, w = 4 * c, h // 2, w // 2
        n_dwt += 1
        trace.append((f"dwt{l}", (c, h, w)))
        for j in range(k):
            c_out, c_in = next(shapes)
            if c_in != c:
                raise ShapeError(f"contracting level {l} conv {j}: expects {c_in} channels, has {c}")
            c = c_out
            trace.append((f"enc{l}.conv{j}", (c, h, w)))
        skips.append((c, h, w))
    for l in range(config.levels, 0, -1):
        for j in range(k):
            c_out, c_in = next(shapes)
            if c_in != c:
                raise ShapeError(f"expanding level {l} conv {j}: expects {c_in} channels, has {c}")
            c = c_out
            trace.append((f"dec{l}.conv{j}", (c, h, w)))
        if c % 4:
            raise ShapeError(f"expanding level {l}: {c} channels not divisible by 4")
        c, h, w = c // 4, 2 * h, 2 * w
        n_iwt += 1
        trace.append((f"iwt{l}", (c, h, w)))
        if l > 1:
            if skips[l - 2] != (c, h, w):
                raise ShapeError(f"skip at level {l - 1}: {skips[l - 2]} vs {(c, h, w)}")
            trace.append((f"add{l - 1}", (c, h, w)))
    if (c, h, w) != (s[0], height, width):
        raise ShapeError(f"output shape {(c, h, w)} != input shape {(s[0], height, width)}")
    assert n_dwt == n_iwt == config.levels
    return trace
