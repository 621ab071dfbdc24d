"""Double-precision central-difference checks of every backward pass.

Each check uses the scalar objective ``sum(w * f(x))`` for a fixed random
weight tensor ``w`` and compares the analytic gradient with
``sum(w * (f(x + h e_i) - f(x - h e_i))) / 2h``. Differencing the output
tensor before contracting keeps untouched outputs from contributing roundoff.
"""
from dataclasses import dataclass

import numpy as np

from . import mwcnn, tensor_core as tc, wavelet

STEP = 1e-5
OP_TOL = 1e-6
MODEL_TOL = 1e-5
# gradients smaller than this are compared absolutely, not relatively
FLOOR = 1e-6

TINY_MODELS = {
    "tiny": (mwcnn.ModelConfig(levels=1, convs_per_block=1, channel_schedule=(4,)), 4),
    "tiny2": (mwcnn.ModelConfig(levels=2, convs_per_block=1, channel_schedule=(1, 2)), 8),
    "tiny-deep": (mwcnn.ModelConfig(levels=1, convs_per_block=2, channel_schedule=(2,)), 4),
    "tiny-residual": (
        mwcnn.ModelConfig(levels=1, convs_per_block=1, channel_schedule=(4,), residual_mode=True),
        4,
    ),
}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error < self.tolerance


def numerical_grad(f, x, weights=1.0, h=STEP):
    """Central differences of ``sum(weights * f())`` w.r.t. every element of ``x``.

    ``x`` is perturbed in place and restored.
    """
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = np.sum(weights * (fp - fm)) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor=FLOOR):
    a, b = np.asarray(analytic, float), np.asarray(numeric, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _rng(seed):
    return np.random.default_rng(seed)


def check_conv(seed, shape=(2, 3, 5, 4), c_out=2):
    r = _rng(seed)
    x = r.standard_normal(shape)
    p = tc.ConvLayerParams(r.standard_normal((c_out, shape[1], 3, 3)), r.standard_normal(c_out))
    proj = r.standard_normal((shape[0], c_out) + shape[2:])
    f = lambda: tc.conv2d_forward(x, p)
    gx, gw, gb = tc.conv2d_backward(x, p, proj)
    return max(
        max_relative_error(gx, numerical_grad(f, x, proj)),
        max_relative_error(gw, numerical_grad(f, p.weights, proj)),
        max_relative_error(gb, numerical_grad(f, p.bias, proj)),
    )


def check_relu(seed, shape=(2, 2, 3, 3)):
    r = _rng(seed)
    x = r.standard_normal(shape)
    # keep inputs away from the kink so the difference quotient is smooth
    x = np.where(np.abs(x) < 1e-2, 0.5, x)
    proj = r.standard_normal(shape)
    f = lambda: tc.relu_forward(x)
    return max_relative_error(tc.relu_backward(x, proj), numerical_grad(f, x, proj))


def check_add(seed, shape=(2, 2, 3, 3)):
    r = _rng(seed)
    a, b, proj = r.standard_normal(shape), r.standard_normal(shape), r.standard_normal(shape)
    f = lambda: tc.add_forward(a, b)
    ga, gb = tc.add_backward(proj)
    return max(
        max_relative_error(ga, numerical_grad(f, a, proj)),
        max_relative_error(gb, numerical_grad(f, b, proj)),
    )


def check_mse(seed, shape=(3, 1, 4, 4)):
    r = _rng(seed)
    pred, target = r.standard_normal(shape), r.standard_normal(shape)
    _, g = tc.mse_loss(pred, target)
    # per-element terms of the loss, so the difference stays local
    f = lambda: (pred - target) ** 2 / shape[0]
    return max_relative_error(g, numerical_grad(f, pred))


def check_dwt(seed, shape=(2, 2, 4, 4)):
    r = _rng(seed)
    x = r.standard_normal(shape)
    proj = r.standard_normal((shape[0], 4 * shape[1], shape[2] // 2, shape[3] // 2))
    f = lambda: wavelet.dwt_forward(x)
    return max_relative_error(wavelet.dwt_backward(proj), numerical_grad(f, x, proj))


def check_iwt(seed, shape=(2, 8, 2, 2)):
    r = _rng(seed)
    s = r.standard_normal(shape)
    proj = r.standard_normal((shape[0], shape[1] // 4, 2 * shape[2], 2 * shape[3]))
    f = lambda: wavelet.iwt_forward(s)
    return max_relative_error(wavelet.iwt_backward(proj), numerical_grad(f, s, proj))


def check_model(config, size, seed, batch=2):
    """End-to-end check of every parameter and input gradient under the MSE objective."""
    r = _rng(seed)
    params = mwcnn.build_model(config, seed, dtype=np.float64)
    for layer in params.layers:
        layer.bias[:] = 0.1 * r.standard_normal(layer.bias.shape)
    x = r.uniform(0, 1, (batch, 1, size, size))
    y = r.uniform(0, 1, (batch, 1, size, size))
    out = mwcnn.forward(params, x)
    _, g = tc.mse_loss(out, y)
    _, records = mwcnn.forward_with_cache(params, x)
    grads, grad_x = mwcnn.backward_from_cache(params, records, g)
    f = lambda: (mwcnn.forward(params, x) - y) ** 2 / batch
    err = max_relative_error(grad_x, numerical_grad(f, x))
    for layer, lg in zip(params.layers, grads):
        err = max(err, max_relative_error(lg.weights, numerical_grad(f, layer.weights)))
        err = max(err, max_relative_error(lg.bias, numerical_grad(f, layer.bias)))
    return err


OP_CHECKS = {
    "conv2d": check_conv,
    "relu": check_relu,
    "add": check_add,
    "mse": check_mse,
    "dwt": check_dwt,
    "iwt": check_iwt,
}


def run_suite(seeds=range(20), models=("tiny",), model_seeds=range(3)):
    results = []
    for name, fn in OP_CHECKS.items():
        results.append(CheckResult(name, max(fn(s) for s in seeds), OP_TOL))
    for m in models:
        config, size = TINY_MODELS[m]
        err = max(check_model(config, size, s) for s in model_seeds)
        results.append(CheckResult(f"model[{m}]", err, MODEL_TOL))
    return results
