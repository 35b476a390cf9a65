import os
import subprocess
import sys

import numpy as np
import pytest

from mwlab import backend
from oracles import random_hpd


def _stack(rng, batch, d):
    return np.array([random_hpd(rng, d) for _ in range(batch)])


@pytest.mark.skipif("cython" not in backend.available(), reason="compiled kernels not built")
@pytest.mark.parametrize("d", [1, 2, 3, 4, 6])
def test_compiled_and_fallback_agree(d):
    rng = np.random.default_rng(d)
    a, b = _stack(rng, 200, d), _stack(rng, 200, d)
    cy, py = backend.get("cython"), backend.get("numpy")
    w1, v1 = cy.eigh_batch(a)
    w2, _ = py.eigh_batch(a)
    assert np.allclose(w1, w2, rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(w1, axis=-1) >= 0)
    recon = (v1 * w1[:, None, :]) @ np.conj(np.swapaxes(v1, 1, 2))
    assert np.allclose(recon, a, atol=1e-11)
    assert np.allclose(cy.sqrt_product_norm_batch(a, b), py.sqrt_product_norm_batch(a, b), rtol=1e-11)


def test_use_switches_and_restores():
    before = backend.name()
    try:
        backend.use("numpy")
        assert backend.name() == "numpy"
    finally:
        backend.use(before)
    with pytest.raises(ValueError):
        backend.use("fortran")


def test_pure_env_selects_fallback():
    code = "from mwlab import backend; print(backend.name())"
    env = dict(os.environ, MWLAB_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
