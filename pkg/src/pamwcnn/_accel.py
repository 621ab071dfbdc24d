"""Hot kernels: im2col gather and the Haar analysis/synthesis butterflies.

Each kernel exists twice, as a numba ``@njit`` loop and as a pure-numpy
expression. Both variants perform the same IEEE operations in the same order,
so they agree bit-for-bit; the numba path only removes temporaries.

Set ``PAMWCNN_DISABLE_NUMBA=1`` before import to force the numpy path.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("PAMWCNN_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
HAVE_NUMBA = numba is not None
BACKEND = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


# ---------------------------------------------------------------- numpy path

def im2col_numpy(x):
    """(n, c, h, w) -> (n, c*9, h*w) patches of the zero-padded input."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:h + 1, 1:w + 1] = x
    cols = np.empty((n, c, 3, 3, h, w), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + h, kx:kx + w]
    return cols.reshape(n, c * 9, h * w)


def haar_analysis_numpy(x):
    n, c, h, w = x.shape
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    cc = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    out = np.empty((n, c, 4, h // 2, w // 2), dtype=x.dtype)
    half = x.dtype.type(0.5)
    out[:, :, 0] = (a + b + cc + d) * half
    out[:, :, 1] = (-a - b + cc + d) * half
    out[:, :, 2] = (-a + b - cc + d) * half
    out[:, :, 3] = (a - b - cc + d) * half
    return out.reshape(n, 4 * c, h // 2, w // 2)


def haar_synthesis_numpy(s):
    n, c4, h2, w2 = s.shape
    c = c4 // 4
    bands = s.reshape(n, c, 4, h2, w2)
    ll = bands[:, :, 0]
    lh = bands[:, :, 1]
    hl = bands[:, :, 2]
    hh = bands[:, :, 3]
    out = np.empty((n, c, 2 * h2, 2 * w2), dtype=s.dtype)
    half = s.dtype.type(0.5)
    out[:, :, 0::2, 0::2] = (ll - lh - hl + hh) * half
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * half
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * half
    out[:, :, 1::2, 1::2] = (ll + lh + hl + hh) * half
    return out


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _im2col_nb(x, cols):
        n, c, h, w = x.shape
        for s in range(n):
            for ci in range(c):
                for ky in range(3):
                    for kx in range(3):
                        r = (ci * 3 + ky) * 3 + kx
                        for y in range(h):
                            sy = y + ky - 1
                            base = y * w
                            if sy < 0 or sy >= h:
                                for xx in range(w):
                                    cols[s, r, base + xx] = 0.0
                                continue
                            for xx in range(w):
                                sx = xx + kx - 1
                                if sx < 0 or sx >= w:
                                    cols[s, r, base + xx] = 0.0
                                else:
                                    cols[s, r, base + xx] = x[s, ci, sy, sx]

    @numba.njit(cache=True)
    def _haar_analysis_nb(x, out):
        n, c, h, w = x.shape
        half = 0.5
        for s in range(n):
            for ci in range(c):
                o = 4 * ci
                for i in range(h // 2):
                    for j in range(w // 2):
                        a = x[s, ci, 2 * i, 2 * j]
                        b = x[s, ci, 2 * i, 2 * j + 1]
                        cc = x[s, ci, 2 * i + 1, 2 * j]
                        d = x[s, ci, 2 * i + 1, 2 * j + 1]
                        out[s, o, i, j] = (a + b + cc + d) * half
                        out[s, o + 1, i, j] = (-a - b + cc + d) * half
                        out[s, o + 2, i, j] = (-a + b - cc + d) * half
                        out[s, o + 3, i, j] = (a - b - cc + d) * half

    @numba.njit(cache=True)
    def _haar_synthesis_nb(sb, out):
        n, c4, h2, w2 = sb.shape
        half = 0.5
        for s in range(n):
            for ci in range(c4 // 4):
                o = 4 * ci
                for i in range(h2):
                    for j in range(w2):
                        ll = sb[s, o, i, j]
                        lh = sb[s, o + 1, i, j]
                        hl = sb[s, o + 2, i, j]
                        hh = sb[s, o + 3, i, j]
                        out[s, ci, 2 * i, 2 * j] = (ll - lh - hl + hh) * half
                        out[s, ci, 2 * i, 2 * j + 1] = (ll - lh + hl - hh) * half
                        out[s, ci, 2 * i + 1, 2 * j] = (ll + lh - hl - hh) * half
                        out[s, ci, 2 * i + 1, 2 * j + 1] = (ll + lh + hl + hh) * half


def im2col_numba(x):
    n, c, h, w = x.shape
    cols = np.empty((n, c * 9, h * w), dtype=x.dtype)
    _im2col_nb(np.ascontiguousarray(x), cols)
    return cols


def haar_analysis_numba(x):
    n, c, h, w = x.shape
    out = np.empty((n, 4 * c, h // 2, w // 2), dtype=x.dtype)
    _haar_analysis_nb(np.ascontiguousarray(x), out)
    return out


def haar_synthesis_numba(s):
    n, c4, h2, w2 = s.shape
    out = np.empty((n, c4 // 4, 2 * h2, 2 * w2), dtype=s.dtype)
    _haar_synthesis_nb(np.ascontiguousarray(s), out)
    return out


if BACKEND == "numba":
    im2col = im2col_numba
    haar_analysis = haar_analysis_numba
    haar_synthesis = haar_synthesis_numba
else:
    im2col = im2col_numpy
    haar_analysis = haar_analysis_numpy
    haar_synthesis = haar_synthesis_numpy
