import os
import subprocess
import sys

import numpy as np
import pytest

from rail import kernels


def test_point_and_batch_agree_with_numpy_reference():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = rng.integers(1, 20)
        k = rng.integers(1, 8)
        coeffs = rng.normal(size=(m, k))
        tau = float(rng.uniform(-2, 2))
        np.testing.assert_allclose(
            kernels.polyval_point(coeffs, tau),
            kernels.polyval_point_numpy(coeffs, tau),
            rtol=1e-13, atol=1e-13,
        )
        taus = rng.uniform(-2, 2, size=17)
        np.testing.assert_allclose(
            kernels.polyval_batch(coeffs, taus),
            kernels.polyval_batch_numpy(coeffs, taus),
            rtol=1e-12, atol=1e-12,
        )


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba unavailable or disabled")
def test_numba_path_matches_numpy_path():
    rng = np.random.default_rng(11)
    coeffs = rng.normal(size=(16, 6))
    taus = rng.uniform(0, 1, size=101)
    np.testing.assert_allclose(
        kernels.polyval_batch_numba(coeffs, taus),
        kernels.polyval_batch_numpy(coeffs, taus),
        rtol=1e-12, atol=1e-14,
    )


def test_env_flag_selects_numpy_fallback():
    code = (
        "from rail import kernels\n"
        "import numpy as np\n"
        "assert not kernels.NUMBA_ENABLED\n"
        "assert kernels.polyval_point is kernels.polyval_point_numpy\n"
        "out = kernels.polyval_point(np.array([[1.0, 2.0]]), 3.0)\n"
        "assert abs(out[0] - 7.0) < 1e-15\n"
    )
    env = dict(os.environ, RAIL_NUMBA="0")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)
