"""Differentiable primitives on (n, c, h, w) arrays with hand-written backward passes.

Tensors are plain numpy arrays. float32 is the training dtype; float64 is used
for finite-difference gradient checks. Convolution is a 3x3 cross-correlation
(no kernel flip) with stride 1 and zero padding 1, so spatial size is kept.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass
class ConvLayerParams:
    weights: np.ndarray  # (c_out, c_in, 3, 3)
    bias: np.ndarray  # (c_out,)

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3):
            raise ShapeError(f"conv weights must be (c_out, c_in, 3, 3), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match c_out={self.weights.shape[0]}"
            )

    @property
    def c_in(self):
        return self.weights.shape[1]

    @property
    def c_out(self):
        return self.weights.shape[0]

    def astype(self, dtype):
        return ConvLayerParams(self.weights.astype(dtype), self.bias.astype(dtype))


def _check_4d(x, name):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")


def _correlate(x, weights):
    n, c, h, w = x.shape
    c_out = weights.shape[0]
    cols = _accel.im2col(x)
    out = np.matmul(weights.reshape(c_out, c * 9), cols)
    return out.reshape(n, c_out, h, w)


def conv2d_forward(x, params):
    _check_4d(x, "input")
    if x.shape[1] != params.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {params.c_in}")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"input spatial dims must be >= 1, got {x.shape[2:]}")
    out = _correlate(x, params.weights)
    out += params.bias[None, :, None, None]
    return out


def conv2d_backward(x, params, grad_out):
    """Return (grad_input, grad_weights, grad_bias) for ``conv2d_forward(x, params)``."""
    _check_4d(x, "input")
    n, c, h, w = x.shape
    if c != params.c_in:
        raise ShapeError(f"input has {c} channels, weights expect {params.c_in}")
    expected = (n, params.c_out, h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")

    g = grad_out.reshape(n, params.c_out, h * w)
    cols = _accel.im2col(x)
    # per-sample GEMM, then a fixed-order sum over the batch
    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
    grad_w = grad_w.reshape(params.weights.shape)
    grad_b = g.sum(axis=(0, 2))
    # adjoint of same-padded correlation: correlate with the 180-degree rotated,
    # channel-transposed kernel
    w_adj = np.ascontiguousarray(params.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    grad_x = _correlate(np.ascontiguousarray(grad_out), w_adj)
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu grad shape {grad_out.shape} != input shape {x.shape}")
    # subgradient at exactly zero is taken as zero
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def add_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def add_backward(grad_out):
    return grad_out, grad_out


def mse_loss(pred, target):
    """Batch mean of per-sample squared-error sums, and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    n = pred.shape[0]
    diff = pred - target
    loss = float(np.square(diff, dtype=np.float64).sum()) / n
    grad = diff * diff.dtype.type(2.0 / n)
    return loss, grad
