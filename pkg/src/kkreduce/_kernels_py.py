"""Pure numpy implementation of the hot kernels (fallback backend).

The functions here define the reference contract; the compiled module
``_kernels`` must return identical results up to floating-point rounding.
"""

from __future__ import annotations

import math

import numpy as np

#: Maximum number of Taylor terms used by the series kernels.
MAX_TERMS = 120


def series_terms(norm: float, tol: float = 1.1e-16) -> int:
    """Number of terms ``K`` such that ``norm**(K+1) / (K+2)! < tol``."""
    if not np.isfinite(norm):
        return MAX_TERMS
    k = 0
    term = 1.0  # norm**(k+1) / (k+2)!  with k = -1 -> 1
    while k < MAX_TERMS:
        term = norm ** (k + 1) / math.factorial(k + 2)
        if term < tol:
            break
        k += 1
    return max(k, 1)


def frame_batch(ad_coset, coset_idx, y):
    """Right Maurer-Cartan frame in exponential coordinates, batched.

    Parameters
    ----------
    ad_coset : float array (m, n, n)
        Adjoint matrices of the coset generators (in coset order).
    coset_idx : int array (m,)
        Position of each coset generator in the full algebra basis.
    y : float array (N, m)
        Exponential coordinates.

    Returns
    -------
    e_full : (N, n, m)
        ``e_full[p, A, mu] = e^A_mu(y_p)``, the columns ``phi(ad Y) Q_mu`` with
        ``phi(z) = (exp(z) - 1) / z``.
    e_recip : (N, m, m)
        ``e_recip[p, mu, a]``, inverse of the coset block ``e^a_mu``; NaN where
        the block is singular.
    det : (N,)
        Determinant of the coset block.
    """
    ad_coset = np.ascontiguousarray(ad_coset, dtype=np.float64)
    coset_idx = np.asarray(coset_idx, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    npts, m = y.shape
    n = ad_coset.shape[1]
    if m == 0:
        return np.zeros((npts, n, 0)), np.zeros((npts, 0, 0)), np.ones(npts)
    A = (y @ ad_coset.reshape(m, n * n)).reshape(npts, n, n)
    # Series length per point (from the 1-norm of ad Y) so that every point's
    # result is independent of the rest of the batch.
    norms = np.abs(A).sum(axis=1).max(axis=1) if npts else np.zeros(0)
    nterms = np.array([series_terms(float(v)) for v in norms], dtype=int)
    E = np.zeros((n, m))
    E[coset_idx, np.arange(m)] = 1.0
    R = np.empty((npts, n, m))
    for K in np.unique(nterms):
        sel = np.flatnonzero(nterms == K)
        As = A[sel]
        Rs = np.broadcast_to(E / math.factorial(K + 1), (sel.size, n, m)).copy()
        for k in range(K - 1, -1, -1):
            Rs = As @ Rs
            Rs += E / math.factorial(k + 1)
        R[sel] = Rs
    block = R[:, coset_idx, :]
    det = np.linalg.det(block)
    ok = np.isfinite(det) & (np.abs(det) > 1e-300)
    recip = np.full((npts, m, m), np.nan)
    if ok.any():
        recip[ok] = np.linalg.inv(block[ok])
    return R, recip, det
