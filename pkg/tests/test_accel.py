import os
import subprocess
import sys

import numpy as np
import pytest

from pamwcnn import _accel

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 3, 5, 7), (3, 4, 8, 8)])
def test_im2col_backends_bit_identical(dtype, shape, rng):
    x = rng.standard_normal(shape).astype(dtype)
    a, b = _accel.im2col_numba(x), _accel.im2col_numpy(x)
    assert a.dtype == b.dtype == dtype
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_haar_backends_bit_identical(dtype, rng):
    x = rng.standard_normal((2, 3, 10, 6)).astype(dtype)
    np.testing.assert_array_equal(_accel.haar_analysis_numba(x), _accel.haar_analysis_numpy(x))
    s = rng.standard_normal((2, 12, 5, 3)).astype(dtype)
    np.testing.assert_array_equal(_accel.haar_synthesis_numba(s), _accel.haar_synthesis_numpy(s))


def test_non_contiguous_input(rng):
    x = rng.standard_normal((2, 2, 8, 8))[:, :, ::-1, :]
    np.testing.assert_array_equal(_accel.im2col_numba(x), _accel.im2col_numpy(x))
    np.testing.assert_array_equal(_accel.haar_analysis_numba(x), _accel.haar_analysis_numpy(x))


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, PAMWCNN_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "import pamwcnn; print(pamwcnn.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
