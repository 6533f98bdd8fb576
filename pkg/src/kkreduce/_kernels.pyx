# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (see ``_kernels_py`` for the reference contract)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, NAN

cnp.import_array()



cdef double _lu_inverse(double* a, double* inv, Py_ssize_t m, Py_ssize_t* piv) nogil:
    """Gauss-Jordan inverse with partial pivoting; returns the determinant.

    ``a`` is destroyed. On a zero pivot the inverse is filled with NaN.
    """
    cdef Py_ssize_t i, j, k, p
    cdef double det = 1.0, best, tmp, f
    for i in range(m):
        for j in range(m):
            inv[i * m + j] = 1.0 if i == j else 0.0
    for k in range(m):
        p = k
        best = fabs(a[k * m + k])
        for i in range(k + 1, m):
            if fabs(a[i * m + k]) > best:
                best = fabs(a[i * m + k])
                p = i
        if best == 0.0:
            for i in range(m * m):
                inv[i] = NAN
            return 0.0
        if p != k:
            det = -det
            for j in range(m):
                tmp = a[k * m + j]; a[k * m + j] = a[p * m + j]; a[p * m + j] = tmp
                tmp = inv[k * m + j]; inv[k * m + j] = inv[p * m + j]; inv[p * m + j] = tmp
        f = a[k * m + k]
        det *= f
        for j in range(m):
            a[k * m + j] /= f
            inv[k * m + j] /= f
        for i in range(m):
            if i != k:
                f = a[i * m + k]
                if f != 0.0:
                    for j in range(m):
                        a[i * m + j] -= f * a[k * m + j]
                        inv[i * m + j] -= f * inv[k * m + j]
    return det


DEF MAXN = 16
DEF MAXTERMS = 120


cdef int _terms_for(double norm, double* invfact) nogil:
    """Smallest K with norm**(K+1) / (K+2)! < 1.1e-16 (at least 1)."""
    cdef int k = 0
    cdef double pw = norm
    while k < MAXTERMS:
        if pw * invfact[k + 1] < 1.1e-16:
            break
        pw *= norm
        k += 1
    return k if k > 1 else 1


def frame_batch(ad_coset, coset_idx, y):
    """Compiled version of :func:`kkreduce._kernels_py.frame_batch`.

    Unlike the fallback, the series length is chosen per point from the
    1-norm of ``ad(Y)``, so results agree with the fallback to rounding.
    """
    cdef double[:, :, ::1] ad = np.ascontiguousarray(ad_coset, dtype=np.float64)
    cdef cnp.int64_t[::1] cidx = np.ascontiguousarray(coset_idx, dtype=np.int64)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t npts = yv.shape[0], m = yv.shape[1], n = ad.shape[1]
    if n > MAXN:
        raise ValueError("frame_batch: algebra dimension exceeds compiled limit")
    e_full_arr = np.zeros((npts, n, m))
    recip_arr = np.empty((npts, m, m))
    det_arr = np.empty(npts)
    if m == 0:
        return e_full_arr, recip_arr, np.ones(npts)
    cdef double[:, :, ::1] Rout = e_full_arr
    cdef double[:, :, ::1] recip = recip_arr
    cdef double[::1] det = det_arr
    cdef double A[MAXN * MAXN]
    cdef double R0[MAXN * MAXN]
    cdef double R1[MAXN * MAXN]
    cdef double block[MAXN * MAXN]
    cdef Py_ssize_t piv[MAXN]
    cdef double invfact[MAXTERMS + 2]
    cdef double* cur
    cdef double* nxt
    cdef double* tmp
    cdef Py_ssize_t p, a, i, j, mu, k
    cdef int nterms
    cdef double s, norm, col, ya
    invfact[0] = 1.0
    for k in range(1, MAXTERMS + 2):
        invfact[k] = invfact[k - 1] / (k + 1)

    with nogil:
        for p in range(npts):
            for i in range(n * n):
                A[i] = 0.0
            for a in range(m):
                ya = yv[p, a]
                if ya != 0.0:
                    for i in range(n):
                        for j in range(n):
                            A[i * n + j] += ya * ad[a, i, j]
            norm = 0.0
            for j in range(n):
                col = 0.0
                for i in range(n):
                    col += fabs(A[i * n + j])
                if col > norm:
                    norm = col
            nterms = _terms_for(norm, invfact)
            # Horner: R = c_K E ; R <- c_k E + A R  (E selects coset columns)
            cur = R0
            nxt = R1
            for i in range(n * m):
                cur[i] = 0.0
            for mu in range(m):
                cur[cidx[mu] * m + mu] = invfact[nterms]
            for k in range(nterms - 1, -1, -1):
                for i in range(n):
                    for mu in range(m):
                        nxt[i * m + mu] = 0.0
                    for j in range(n):
                        s = A[i * n + j]
                        if s != 0.0:
                            for mu in range(m):
                                nxt[i * m + mu] += s * cur[j * m + mu]
                for mu in range(m):
                    nxt[cidx[mu] * m + mu] += invfact[k]
                tmp = cur
                cur = nxt
                nxt = tmp
            for i in range(n):
                for mu in range(m):
                    Rout[p, i, mu] = cur[i * m + mu]
            for i in range(m):
                for j in range(m):
                    block[i * m + j] = cur[cidx[i] * m + j]
            det[p] = _lu_inverse(block, &recip[p, 0, 0], m, piv)
    return e_full_arr, recip_arr, det_arr
