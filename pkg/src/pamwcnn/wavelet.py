"""Orthonormal 2-D Haar transform used as the network's down/up-sampling step.

The four 2x2 stencils below are scaled by 1/2 in both directions, which makes
the transform orthogonal: it preserves energy and the inverse is its transpose.
Subbands of input channel ``k`` occupy output channels ``4k .. 4k+3`` in the
order LL, LH, HL, HH.
"""
import numpy as np

from . import _accel
from .tensor_core import ShapeError

HAAR_SCALE = 0.5
HAAR_FILTERS = {
    "LL": np.array([[1, 1], [1, 1]]),
    "LH": np.array([[-1, -1], [1, 1]]),
    "HL": np.array([[-1, 1], [-1, 1]]),
    "HH": np.array([[1, -1], [-1, 1]]),
}
BAND_ORDER = ("LL", "LH", "HL", "HH")


def analysis_matrix():
    """4x4 matrix whose rows are the flattened, scaled stencils."""
    return HAAR_SCALE * np.stack([HAAR_FILTERS[b].ravel() for b in BAND_ORDER]).astype(float)


def dwt_forward(x):
    if x.ndim != 4:
        raise ShapeError(f"dwt input must be 4-D, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"odd spatial dimension: dwt needs even height and width, got {h}x{w}")
    return _accel.haar_analysis(x)


def iwt_forward(subbands):
    if subbands.ndim != 4:
        raise ShapeError(f"iwt input must be 4-D, got shape {subbands.shape}")
    if subbands.shape[1] % 4:
        raise ShapeError(f"iwt needs a channel count divisible by 4, got {subbands.shape[1]}")
    return _accel.haar_synthesis(subbands)


def dwt_backward(grad_out):
    # the transform is orthogonal, so its adjoint is its inverse
    return iwt_forward(grad_out)


def iwt_backward(grad_out):
    return dwt_forward(grad_out)


def wavedec(x, levels):
    """Multi-level decomposition of the LL path.

    Returns ``(approx, details)`` where ``details[l]`` holds the LH/HL/HH bands
    of level ``l + 1`` with shape (n, 3c, h / 2**(l+1), w / 2**(l+1)).
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    n, c = x.shape[:2]
    details = []
    approx = x
    for _ in range(levels):
        s = dwt_forward(approx)
        h2, w2 = s.shape[2:]
        bands = s.reshape(n, c, 4, h2, w2)
        approx = np.ascontiguousarray(bands[:, :, 0])
        details.append(np.ascontiguousarray(bands[:, :, 1:]).reshape(n, 3 * c, h2, w2))
    return approx, details


def waverec(approx, details):
    n, c = approx.shape[:2]
    x = approx
    for d in reversed(details):
        h2, w2 = x.shape[2:]
        if d.shape != (n, 3 * c, h2, w2):
            raise ShapeError(f"detail bands {d.shape} do not match approximation {x.shape}")
        bands = np.empty((n, c, 4, h2, w2), dtype=x.dtype)
        bands[:, :, 0] = x
        bands[:, :, 1:] = d.reshape(n, c, 3, h2, w2)
        x = iwt_forward(bands.reshape(n, 4 * c, h2, w2))
    return x
