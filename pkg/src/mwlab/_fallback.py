"""Pure numpy implementations of the batch kernels in ``_kernels.pyx``."""
import numpy as np


def eigh_batch(a):
    a = np.asarray(a, dtype=np.complex128)
    if a.shape[0] == 0:
        d = a.shape[-1]
        return np.empty((0, d)), np.empty((0, d, d), dtype=np.complex128)
    w, v = np.linalg.eigh(a)
    return w, v


def sqrt_product_norm_batch(a, b):
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape[0] == 0:
        return np.empty(0)
    w, v = np.linalg.eigh(a)
    sa = (v * np.sqrt(np.clip(w, 0.0, None))[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    m = sa @ b @ sa
    m = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    top = np.linalg.eigvalsh(m)[:, -1]
    return np.sqrt(np.clip(top, 0.0, None))
