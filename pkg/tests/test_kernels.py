import os
import subprocess
import sys

import numpy as np
import pytest

from bmdrkit.channel import MimoSystem
from bmdrkit.coding import builtin_code, encode
from bmdrkit.kernels import _numpy
from bmdrkit.numerics import RngStream, qr_decompose, real_embed_matrix

numba_backend = pytest.importorskip("bmdrkit.kernels._numba")


def _kbest_inputs(seed=0, B=200):
    sysm = MimoSystem.uniform(16, 4, m=4)
    r = RngStream(seed)
    _, R = qr_decompose(real_embed_matrix(r.complex_normal((16, 4)) * 0.5))
    amps, sizes, _, _ = sysm.level_tables
    return r.standard_normal((B, 8)), R, amps, sizes


@pytest.mark.parametrize("K", [1, 8, 32])
def test_kbest_backends_agree(K):
    ybar, R, amps, sizes = _kbest_inputs()
    i1, m1 = _numpy.kbest_search(ybar, R, amps, sizes, K)
    i2, m2 = numba_backend.kbest_search(ybar, R, amps, sizes, K)
    assert np.array_equal(i1, i2)
    assert np.allclose(m1, m2, rtol=1e-12, atol=1e-12)


def test_bp_backends_agree():
    H = builtin_code("ldpc648")
    r = RngStream(3)
    for t in range(20):
        c = encode(H, r.bits(432))
        llr = 2.0 * ((2.0 * c - 1.0) + 0.9 * r.standard_normal(648))
        a = _numpy.bp_decode(llr, H.check_ptr, H.edge_var, H.var_ptr, H.var_edges, 50)
        b = numba_backend.bp_decode(llr, H.check_ptr, H.edge_var, H.var_ptr, H.var_edges, 50)
        assert np.array_equal(a[0], b[0]) and a[1:] == b[1:]


def test_env_flag_selects_numpy():
    env = dict(os.environ, BMDRKIT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from bmdrkit import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
