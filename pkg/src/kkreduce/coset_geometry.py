"""Geometry of the orbit ``H\\G`` in exponential coordinates.

A point of the orbit is represented by the coset of ``L_y = exp(y^a Q_a)``
where ``a`` runs over the coset indices (``khat`` block first, then ``lbar``).
All fields below are derived from the right Maurer-Cartan form

    dL_y L_y^{-1} = e^A_mu(y) dy^mu Q_A,

whose coefficients are ``e^A_mu = [phi(ad Y) Q_mu]^A`` with
``phi(z) = (exp(z) - 1)/z`` and ``Y = y^a Q_a``.

Index conventions (upper index first in every array):

========================  ============================  ==================
field                     meaning                       shape
========================  ============================  ==================
``e_full[A, mu]``         e^A_mu                        (n, m)
``e_coframe[a, mu]``      e^a_mu (coset block)          (m, m)
``e_recip[mu, a]``        e^mu_a, inverse of coframe    (m, m)
``D_adj[A, B]``           D^A_B(L_y)                    (n, n)
``D_bar[B, a]``           right inverse of D^a_B        (n, m)
``phi[A, alpha]``         D_bar^A_b e^b_alpha           (n, m)
``killing[alpha, A]``     K^alpha_A = e^alpha_a D^a_A   (m, n)
``proj[B, A]``            pi^B_A = D_bar^B_a D^a_A      (n, n)
``F[alpha, mu, nu]``      -phi^A_mu d_nu K^alpha_A      (m, m, m)
========================  ============================  ==================
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from . import kernels
from .errors import ChartDomainError, DegenerateFrameError, DomainError, StructuralError
from .lie_algebra import LieAlgebraSpec, adjoint_matrix, group_exp

__all__ = [
    "CosetChart",
    "CosetFrame",
    "FTensorContractions",
    "dexp_series",
    "fiber_metric",
    "frame_at",
    "frame_batch",
    "f_tensor_contractions",
    "recenter",
    "stratonovich_fiber_drift",
]

#: Determinant threshold below which the coframe is considered singular.
DEGENERATE_DET = 1e-10


@dataclass(frozen=True, eq=False)
class CosetChart:
    """Exponential-coordinate chart on the orbit.

    Parameters
    ----------
    spec : LieAlgebraSpec
    safe_radius : float
        Radius (in the Euclidean norm of ``y``) up to which the chart is known
        to be regular for the instance.
    radius_cutoff : float, optional
        Trusted radius; paths leaving it are re-centred. Defaults to
        ``0.9 * safe_radius``.
    """

    spec: LieAlgebraSpec
    safe_radius: float
    radius_cutoff: float | None = None

    def __post_init__(self):
        if not self.safe_radius > 0:
            raise StructuralError("safe_radius must be positive")
        cutoff = 0.9 * self.safe_radius if self.radius_cutoff is None else float(self.radius_cutoff)
        if not cutoff > 0:
            raise StructuralError("radius_cutoff must be positive")
        object.__setattr__(self, "radius_cutoff", cutoff)

    @property
    def coset_dim(self) -> int:
        return self.spec.coset_dim

    @cached_property
    def ad_coset(self) -> np.ndarray:
        """Adjoint matrices of the coset generators, shape (m, n, n)."""
        return np.ascontiguousarray(self.spec.ad_matrices[list(self.spec.coset_idx)])

    @cached_property
    def coset_index_array(self) -> np.ndarray:
        return np.asarray(self.spec.coset_idx, dtype=np.int64)

    def element(self, y) -> np.ndarray:
        """The section ``L_y`` in the faithful representation."""
        return group_exp(self.spec, self.spec.embed_coset(y))


def dexp_series(spec: LieAlgebraSpec, X: np.ndarray, Z: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    """Evaluate ``sum_k ad_X^k(Z) / (k+1)!`` for matrices ``X``, ``Z``.

    This is the differential of the exponential map in its right-trivialized
    form: ``d/dt exp(X + tZ) exp(-X)`` at ``t = 0``.
    """
    term = np.array(Z, dtype=complex)
    total = term.copy()
    scale = max(float(np.abs(total).max()), 1e-300)
    for k in range(1, 400):
        term = (X @ term - term @ X) / (k + 1)
        total += term
        if float(np.abs(term).max()) < tol * scale:
            break
    return total


def _dphi_block(adY: np.ndarray, direction: np.ndarray):
    """``phi(adY)`` and its directional derivative along ``direction`` (both n x n)."""
    n = adY.shape[0]
    M = np.zeros((3 * n, 3 * n))
    M[:n, :n] = adY
    M[:n, n:2 * n] = direction
    M[n:2 * n, n:2 * n] = adY
    M[n:2 * n, 2 * n:] = np.eye(n)
    big = expm(M)
    return big[n:2 * n, 2 * n:], big[:n, 2 * n:]


@dataclass(frozen=True, eq=False)
class CosetFrame:
    """All y-dependent geometric fields at one point of the chart.

    Derivative fields (``de_full``, ``de_recip``, ``dkilling``, ``F``) are
    computed lazily from the analytic derivative of the exponential series.
    """

    chart: CosetChart
    y: np.ndarray
    L: np.ndarray
    e_full: np.ndarray
    e_coframe: np.ndarray
    e_recip: np.ndarray
    D_adj: np.ndarray
    D_bar: np.ndarray
    phi: np.ndarray
    killing: np.ndarray
    proj: np.ndarray

    @property
    def spec(self) -> LieAlgebraSpec:
        return self.chart.spec

    @cached_property
    def det_coframe(self) -> float:
        return float(np.linalg.det(self.e_coframe))

    @cached_property
    def de_full(self) -> np.ndarray:
        """``de_full[nu, A, mu] = d_nu e^A_mu``."""
        spec = self.spec
        cos = list(spec.coset_idx)
        adY = spec.ad(spec.embed_coset(self.y))
        out = np.empty((len(cos), spec.dim, len(cos)))
        for nu, idx in enumerate(cos):
            _, dphi = _dphi_block(adY, spec.ad_matrices[idx])
            out[nu] = dphi[:, cos]
        return out

    @cached_property
    def de_recip(self) -> np.ndarray:
        """``de_recip[nu, alpha, a] = d_nu e^alpha_a``."""
        cos = list(self.spec.coset_idx)
        dco = self.de_full[:, cos, :]  # [nu, b, kappa]
        return -np.einsum("ab,nbk,kc->nac", self.e_recip, dco, self.e_recip)

    @cached_property
    def dD_adj(self) -> np.ndarray:
        """``dD_adj[nu, A, B] = d_nu D^A_B = f^A_{E C} e^E_nu D^C_B``."""
        f = self.spec.structure_constants
        return np.einsum("aec,en,cb->nab", f, self.e_full, self.D_adj)

    @cached_property
    def dkilling(self) -> np.ndarray:
        """``dkilling[nu, alpha, A] = d_nu K^alpha_A``."""
        cos = list(self.spec.coset_idx)
        return (
            np.einsum("nab,bA->naA", self.de_recip, self.D_adj[cos, :])
            + np.einsum("ab,nbA->naA", self.e_recip, self.dD_adj[:, cos, :])
        )

    @cached_property
    def F(self) -> np.ndarray:
        """``F[alpha, mu, nu] = -phi^A_mu d_nu K^alpha_A``."""
        return -np.einsum("Am,naA->amn", self.phi, self.dkilling)

    @cached_property
    def F_closed_form(self) -> np.ndarray:
        """Independent expression of ``F`` through the frame only.

        ``F^alpha_mu_nu = -(d_nu e^alpha_a e^a_mu + e^alpha_a f^a_{E b} e^E_nu e^b_mu)``
        with ``b`` restricted to coset indices (uses ``D^h_A D_bar^A_b = 0``).
        """
        cos = list(self.spec.coset_idx)
        f = self.spec.structure_constants[np.ix_(cos, range(self.spec.dim), cos)]
        t1 = np.einsum("nab,bm->amn", self.de_recip, self.e_coframe)
        t2 = np.einsum("ab,bEc,En,cm->amn", self.e_recip, f, self.e_full, self.e_coframe)
        return -(t1 + t2)


def frame_at(chart: CosetChart, y, *, check_radius: bool = True) -> CosetFrame:
    """Compute the :class:`CosetFrame` at coordinates ``y``.

    The Maurer-Cartan coefficients are obtained by applying the
    differential-of-exponential series to the generators in the faithful
    representation and projecting back onto the basis ``Q_A``.
    """
    spec = chart.spec
    y = np.array(y, dtype=float).reshape(-1)
    if y.shape != (chart.coset_dim,):
        raise StructuralError(f"expected {chart.coset_dim} coset coordinates, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DomainError("frame_at: non-finite coordinates")
    if check_radius and np.linalg.norm(y) >= chart.radius_cutoff:
        raise ChartDomainError(
            f"|y| = {np.linalg.norm(y):.4f} outside chart cutoff {chart.radius_cutoff:.4f}"
        )
    cos = list(spec.coset_idx)
    X = spec.combine(spec.embed_coset(y))
    columns = np.stack([dexp_series(spec, X, spec.generators[i]) for i in cos])
    e_full = np.ascontiguousarray(spec.decompose(columns).T) if cos else np.zeros((spec.dim, 0))
    e_coframe = e_full[cos, :]
    det = np.linalg.det(e_coframe) if cos else 1.0
    if abs(det) < DEGENERATE_DET:
        raise DegenerateFrameError(f"coframe determinant {det:.3e} below {DEGENERATE_DET}")
    e_recip = np.linalg.inv(e_coframe) if cos else np.zeros((0, 0))
    L = group_exp(spec, spec.embed_coset(y))
    D = adjoint_matrix(spec, L)
    D_bar = np.linalg.inv(D)[:, cos]
    phi = D_bar @ e_coframe
    killing = e_recip @ D[cos, :]
    proj = D_bar @ D[cos, :]
    fields = dict(y=y, L=L, e_full=e_full, e_coframe=e_coframe, e_recip=e_recip, D_adj=D,
                  D_bar=D_bar, phi=phi, killing=killing, proj=proj)
    for value in fields.values():
        if isinstance(value, np.ndarray):
            value.setflags(write=False)
    return CosetFrame(chart=chart, **fields)


def frame_batch(chart: CosetChart, Y):
    """Batched Maurer-Cartan frame (hot path, compiled when available).

    Returns ``(e_full, e_recip, det)`` with shapes ``(N, n, m)``,
    ``(N, m, m)`` and ``(N,)``; see :mod:`kkreduce.kernels`.
    """
    return kernels.frame_batch(chart.ad_coset, chart.coset_index_array, np.atleast_2d(Y))


def _check_spd(mat: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(mat)):
        raise DomainError(f"{what} has non-finite entries")
    if np.abs(mat - mat.T).max() > 1e-12 * max(1.0, np.abs(mat).max()):
        raise DomainError(f"{what} is not symmetric")
    if mat.size:
        ev = np.linalg.eigvalsh(mat)
        if ev.min() <= 0:
            raise DomainError(f"{what} is not positive-definite (smallest eigenvalue {ev.min():.3e})")


def fiber_metric(frame: CosetFrame, g) -> tuple[np.ndarray, np.ndarray, float]:
    """Fiber metric ``gamma_ab = g_ab e^a_alpha e^b_beta`` with inverse and determinant."""
    g = np.asarray(g, dtype=float)
    _check_spd(g, "fiber algebra metric g")
    ec, er = frame.e_coframe, frame.e_recip
    gamma = ec.T @ g @ ec
    gamma = 0.5 * (gamma + gamma.T)
    gamma_inv = er @ np.linalg.inv(g) @ er.T
    gamma_inv = 0.5 * (gamma_inv + gamma_inv.T)
    det = float(np.linalg.det(g) * np.linalg.det(ec) ** 2)
    return gamma, gamma_inv, det


class FTensorContractions(NamedTuple):
    """Contractions of the F-tensor entering the fiber drift.

    ``crosscheck_residual`` compares ``gamma^{mu nu} F^alpha_{mu nu}`` computed
    from Killing-vector derivatives with the same contraction computed from
    the frame-only closed form :attr:`CosetFrame.F_closed_form`.
    """

    gamma_F: np.ndarray
    connection_F: np.ndarray
    crosscheck_residual: float


def f_tensor_contractions(frame: CosetFrame, gamma_inv, hBB) -> FTensorContractions:
    """Return ``gamma^{mu nu} F^alpha_{mu nu}`` and ``(h B B)^{mu nu} F^alpha_{mu nu}``.

    Parameters
    ----------
    gamma_inv : (m, m) symmetric positive-definite
    hBB : (m, m)
        ``h^{ij} B^mu_i B^nu_j`` with ``B^mu_i = A^b_i e^mu_b``.
    """
    gamma_inv = np.asarray(gamma_inv, dtype=float)
    hBB = np.asarray(hBB, dtype=float)
    _check_spd(gamma_inv, "gamma_inv")
    if np.abs(hBB - hBB.T).max() > 1e-12 * max(1.0, np.abs(hBB).max()):
        raise DomainError("hBB is not symmetric")
    F = frame.F
    gF = np.einsum("mn,amn->a", gamma_inv, F)
    cF = np.einsum("mn,amn->a", hBB, F)
    alt = np.einsum("mn,amn->a", gamma_inv, frame.F_closed_form)
    scale = max(1.0, float(np.abs(gF).max()))
    return FTensorContractions(gF, cF, float(np.abs(gF - alt).max()) / scale)


def stratonovich_fiber_drift(frame: CosetFrame, g_inv) -> np.ndarray:
    """Frame part of the Stratonovich fiber drift (without the 1/2 mu^2 kappa factor).

    ``s^alpha = e^alpha_a g^{cb} f^a_{h b} c^h_c``, ``c^h_c = e^h_nu e^nu_c``.
    With the noise fields ``Y_b = e_a (chol g^{-1})^a_b`` this equals the Ito
    drift ``-gamma^{mu nu} F^alpha_{mu nu}`` minus the Stratonovich correction
    ``1/2 sum_b Y_b . d Y_b``.
    """
    spec = frame.spec
    cos = list(spec.coset_idx)
    H = list(spec.h_idx)
    f = spec.structure_constants[np.ix_(cos, H, cos)]
    c = frame.e_full[H, :] @ frame.e_recip
    s = np.einsum("cb,ahb,hc->a", np.asarray(g_inv, dtype=float), f, c)
    return frame.e_recip @ s


def recenter(chart: CosetChart, y, basepoint):
    """Re-express ``H L_y B`` as ``H L_0 B'`` with ``B' = L_y B``.

    Returns the new coordinates (the origin) and the new basepoint. The group
    element represented by the state is unchanged exactly.
    """
    y = np.asarray(y, dtype=float)
    return np.zeros_like(y), chart.element(y) @ np.asarray(basepoint)
