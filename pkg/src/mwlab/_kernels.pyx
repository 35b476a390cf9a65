# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels for small Hermitian matrices.

Each kernel loops over a stack of d x d complex Hermitian matrices and runs a
cyclic Jacobi eigensolver per matrix. The loops release the GIL.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

cdef extern from "complex.h" nogil:
    double cabs(double complex)
    double complex conj(double complex)
    double creal(double complex)

cnp.import_array()

cdef int MAX_SWEEPS = 60


cdef void _jacobi(double complex* a, double complex* v, int d) noexcept nogil:
    """In-place cyclic Jacobi on a (row-major d x d). Columns of v become eigenvectors."""
    cdef int sweep, p, q, k
    cdef double off, scale, g, theta, t, c, s, app, aqq
    cdef double complex apq, e, akp, akq, vkp, vkq
    for p in range(d):
        for q in range(d):
            v[p * d + q] = 1.0 if p == q else 0.0
        a[p * d + p] = creal(a[p * d + p])
    for sweep in range(MAX_SWEEPS):
        off = 0.0
        scale = 0.0
        for p in range(d):
            scale += fabs(creal(a[p * d + p]))
            for q in range(p + 1, d):
                off += cabs(a[p * d + q])
        if off <= 1e-17 * scale or off == 0.0:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p * d + q]
                g = cabs(apq)
                if g == 0.0:
                    continue
                e = apq / g
                app = creal(a[p * d + p])
                aqq = creal(a[q * d + q])
                theta = (aqq - app) / (2.0 * g)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                # U = [[c, s], [-s*conj(e), c*conj(e)]] on (p, q); A <- U^* A U
                for k in range(d):
                    akp = a[k * d + p]
                    akq = a[k * d + q]
                    a[k * d + p] = c * akp - s * conj(e) * akq
                    a[k * d + q] = s * akp + c * conj(e) * akq
                    vkp = v[k * d + p]
                    vkq = v[k * d + q]
                    v[k * d + p] = c * vkp - s * conj(e) * vkq
                    v[k * d + q] = s * vkp + c * conj(e) * vkq
                for k in range(d):
                    akp = a[p * d + k]
                    akq = a[q * d + k]
                    a[p * d + k] = c * akp - s * e * akq
                    a[q * d + k] = s * akp + c * e * akq
                a[p * d + q] = 0.0
                a[q * d + p] = 0.0
                a[p * d + p] = app - t * g
                a[q * d + q] = aqq + t * g


cdef void _sort_ascending(double complex* a, double complex* v, double* w, int d) noexcept nogil:
    cdef int i, j, k, m
    cdef double tmp
    cdef double complex tv
    for i in range(d):
        w[i] = creal(a[i * d + i])
    for i in range(d):
        m = i
        for j in range(i + 1, d):
            if w[j] < w[m]:
                m = j
        if m != i:
            tmp = w[i]; w[i] = w[m]; w[m] = tmp
            for k in range(d):
                tv = v[k * d + i]; v[k * d + i] = v[k * d + m]; v[k * d + m] = tv


def eigh_batch(cnp.ndarray a_in):
    """Eigen-decompose a (B, d, d) stack of Hermitian matrices.

    Returns ``(w, v)`` with ascending eigenvalues ``w`` of shape (B, d) and
    eigenvectors in the columns of ``v``.
    """
    cdef double complex[:, :, ::1] a = np.ascontiguousarray(a_in, dtype=np.complex128).copy()
    cdef Py_ssize_t nb = a.shape[0], b
    cdef int d = a.shape[1]
    w_out = np.empty((nb, d), dtype=np.float64)
    v_out = np.empty((nb, d, d), dtype=np.complex128)
    cdef double[:, ::1] w = w_out
    cdef double complex[:, :, ::1] v = v_out
    if nb == 0:
        return w_out, v_out
    with nogil:
        for b in range(nb):
            _jacobi(&a[b, 0, 0], &v[b, 0, 0], d)
            _sort_ascending(&a[b, 0, 0], &v[b, 0, 0], &w[b, 0], d)
    return w_out, v_out


def sqrt_product_norm_batch(cnp.ndarray a_in, cnp.ndarray b_in):
    """Spectral norm of ``sqrt(a) @ sqrt(b)`` for each pair in two (B, d, d) stacks.

    Uses ``||a^(1/2) b^(1/2)||^2 = lambda_max(a^(1/2) b a^(1/2))``.
    """
    cdef double complex[:, :, ::1] a = np.ascontiguousarray(a_in, dtype=np.complex128).copy()
    cdef double complex[:, :, ::1] bm = np.ascontiguousarray(b_in, dtype=np.complex128)
    cdef Py_ssize_t nb = a.shape[0], b
    cdef int d = a.shape[1], i, j, k, l
    out_arr = np.empty(nb, dtype=np.float64)
    cdef double[::1] out = out_arr
    if nb == 0:
        return out_arr
    cdef double complex* v = <double complex*> malloc(d * d * sizeof(double complex))
    cdef double complex* sa = <double complex*> malloc(d * d * sizeof(double complex))
    cdef double complex* tmp = <double complex*> malloc(d * d * sizeof(double complex))
    cdef double complex* m = <double complex*> malloc(d * d * sizeof(double complex))
    cdef double* w = <double*> malloc(d * sizeof(double))
    cdef double lam, top
    cdef double complex acc
    try:
        with nogil:
            for b in range(nb):
                _jacobi(&a[b, 0, 0], v, d)
                for k in range(d):
                    lam = creal(a[b, k, k])
                    w[k] = sqrt(lam) if lam > 0.0 else 0.0
                for i in range(d):
                    for j in range(d):
                        acc = 0.0
                        for k in range(d):
                            acc = acc + v[i * d + k] * w[k] * conj(v[j * d + k])
                        sa[i * d + j] = acc
                for i in range(d):
                    for j in range(d):
                        acc = 0.0
                        for k in range(d):
                            acc = acc + bm[b, i, k] * sa[k * d + j]
                        tmp[i * d + j] = acc
                for i in range(d):
                    for j in range(d):
                        acc = 0.0
                        for l in range(d):
                            acc = acc + sa[i * d + l] * tmp[l * d + j]
                        m[i * d + j] = acc
                for i in range(d):
                    for j in range(i + 1, d):
                        acc = 0.5 * (m[i * d + j] + conj(m[j * d + i]))
                        m[i * d + j] = acc
                        m[j * d + i] = conj(acc)
                _jacobi(m, v, d)
                top = creal(m[0])
                for k in range(1, d):
                    if creal(m[k * d + k]) > top:
                        top = creal(m[k * d + k])
                out[b] = sqrt(top) if top > 0.0 else 0.0
    finally:
        free(v); free(sa); free(tmp); free(m); free(w)
    return out_arr
