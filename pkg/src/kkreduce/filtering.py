"""Reduced (filtered) dynamics: the matrix SDE along the orbit-space process.

For a spherical irrep ``lambda`` with generators ``J_A`` (d x d) and a
coefficient field ``C(x)`` (d x rho), the bundle function
``psi(x, y) = tr(V D(L_y) C(x))`` (``V`` selects the spherical rows)
evolves under the bundle generator into a function of the same form. Along
a base path ``xi_t`` the fiber dependence is carried by the ``d x d`` matrix
``N_t`` solving the linear Ito SDE

    dN = (Lambda(xi) dt + Theta_n(xi) dW^n) N,       N(t_a) = I,

    Lambda = 1/2 mu^2 kappa [ g^{ab} J_a J_b - div(A)^khat J_khat
                              + h^{ij} A^khat_i A^lhat_j J_khat J_lhat ],
    Theta_n = -mu sqrt(kappa) X^i_n A^khat_i J_khat,

where ``dW`` are exactly the increments that drove ``xi``. The semigroup
value is then ``E[ tr(V N_T D(L_{y_a}) C(xi_T)) ]``.

The generators multiply from the spherical-row side, so new factors are
applied on the left of the accumulated product. The ``"column"`` ordering
(factors on the right, readout ``tr(V D(L_{y_a}) M C)``) is provided as an
A/B alternative.

``Lambda`` already contains the ``h A A J J`` term (the quadratic variation
of the noise term); the Ito-Euler update therefore uses it directly, and for
``x``-independent coefficients ``E[N_t] = exp(t Lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle_model import BundleModel, _as_batch
from .errors import MetadataMismatch, StructuralError
from .representation import CoefficientField, IrrepSpec, coset_rep_matrices
from .sde import BaseEnsemble, SimulationParams

__all__ = [
    "ORDERINGS",
    "FilterMatrix",
    "ReducedGenerator",
    "filter_step",
    "ordered_exponential",
    "reduced_generator_apply",
    "spherical_leakage",
]

#: ``"row"``: new factors on the left, generators on the spherical-row side.
#: ``"column"``: new factors on the right, generators on the representation index.
ORDERINGS = ("row", "column")

FD_STEP_GRADIENT = 1e-4


def _check_ordering(ordering: str) -> None:
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")


class ReducedGenerator:
    """Matrix coefficients of the reduced generator for one irrep.

    All methods take a batch of base points ``X`` (shape ``(N, nb)``) and
    return batched matrices.
    """

    def __init__(self, model: BundleModel, irrep: IrrepSpec, params: SimulationParams):
        spec = model.spec
        if irrep.J.shape[0] != spec.dim:
            raise StructuralError(f"irrep {irrep.label!r} does not belong to this algebra")
        self.model = model
        self.irrep = irrep
        self.params = params
        J = np.asarray(irrep.J, dtype=complex)
        self.J_coset = J[list(spec.coset_idx)]          # (m, d, d)
        self.J_khat = J[list(spec.khat_idx)]            # (nk, d, d)
        self._JJ_coset = np.einsum("aij,bjk->abik", self.J_coset, self.J_coset)
        self._JJ_khat = self._JJ_coset[: model.khat_dim, : model.khat_dim]
        if model.gmetric.is_constant:
            g_inv = model.gmetric.g_inv(np.zeros((1, model.base_dim)))
            self._casimir_const = _contract(g_inv, self._JJ_coset)[0]

    @property
    def dim(self) -> int:
        return self.irrep.dim

    @property
    def label(self) -> str:
        return self.irrep.label

    def casimir_part(self, X) -> np.ndarray:
        """``g^{ab}(x) J_a J_b`` over the coset directions, shape (N, d, d)."""
        X = _as_batch(X, self.model.base_dim)
        if self.model.gmetric.is_constant:
            return np.broadcast_to(self._casimir_const, (X.shape[0], self.dim, self.dim))
        return _contract(self.model.gmetric.g_inv(X), self._JJ_coset)

    def drift_matrix(self, X, *, include_quadratic_variation: bool = True) -> np.ndarray:
        """``Lambda(x)`` (with the ``h A A J J`` term unless disabled), shape (N, d, d)."""
        X = _as_batch(X, self.model.base_dim)
        c = 0.5 * self.params.mu2kappa
        out = self.casimir_part(X)
        if self.model.khat_dim and self.model.base_dim:
            div = self.model.connection_divergence(X)
            out = out - _contract(div, self.J_khat)
            if include_quadratic_variation:
                A = self.model.connection(X)
                hAA = A @ self.model.base.h_inv(X) @ np.swapaxes(A, 1, 2)
                out = out + _contract(hAA, self._JJ_khat)
        return c * out

    def noise_matrices(self, X) -> np.ndarray:
        """``Theta_i(x) = -mu sqrt(kappa) A^khat_i J_khat``, shape (N, nb, d, d)."""
        X = _as_batch(X, self.model.base_dim)
        A = np.swapaxes(self.model.connection(X), 1, 2)  # [p, i, k]
        return -self.params.sigma * _contract(A, self.J_khat)

    def channel_noise_matrices(self, X) -> np.ndarray:
        """``Theta_i X^i_n`` per Wiener channel ``n``, shape (N, nb, d, d)."""
        X = _as_batch(X, self.model.base_dim)
        Xf = self.model.base.noise_factor(X)
        A = self.model.connection(X) @ Xf                  # A^khat_i X^i_n
        return -self.params.sigma * _contract(np.swapaxes(A, 1, 2), self.J_khat)

    def first_order_coefficient(self, X) -> np.ndarray:
        """``-mu^2 kappa h^{ij} A^khat_i J_khat`` (coefficient of ``d_j``), shape (N, nb, d, d)."""
        X = _as_batch(X, self.model.base_dim)
        A = self.model.connection(X)
        hA = np.einsum("pij,pki->pkj", self.model.base.h_inv(X), A)
        return -self.params.mu2kappa * np.einsum("pkj,kab->pjab", hA, self.J_khat)

    def scalar_part(self, func, X, step: float = FD_STEP_GRADIENT) -> np.ndarray:
        """``1/2 mu^2 kappa [Delta_M + h^{ij} d_i(ln sqrt g) d_j] func`` by central differences.

        ``func`` maps a batch ``(N, nb)`` to arrays ``(N, ...)``. Uses
        ``h^{ij} d_i d_j f + (1/sqrt(hg)) d_i(sqrt(hg) h^{ij}) d_j f``.
        """
        X = _as_batch(X, self.model.base_dim)
        f0 = np.asarray(func(X))
        nb = self.model.base_dim
        if nb == 0:
            return np.zeros_like(f0)
        hi = self.model.base.h_inv(X)
        b = self.model.base_ito_drift(X)
        grad, hess = _fd_derivatives(func, X, step)
        lap = np.einsum("pij,pij...->p...", hi, hess) + np.einsum("pj,pj...->p...", b, grad)
        return 0.5 * self.params.mu2kappa * lap

    def spherical_block(self, mat: np.ndarray) -> np.ndarray:
        """Restriction of (batched) ``d x d`` matrices to the spherical rows/columns."""
        r = self.irrep.n_spherical
        return mat[..., :r, :r]


def _contract(coef: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """``sum_K coef[p, ..., K] mats[K]`` over the trailing index (or index pair) of ``coef``.

    ``mats`` has shape ``(K..., d, d)`` with the same leading index shape as
    the trailing axes of ``coef``.
    """
    k_shape = mats.shape[:-2]
    lead = coef.shape[: coef.ndim - len(k_shape)]
    d = mats.shape[-1]
    flat = coef.reshape(-1, int(np.prod(k_shape, dtype=int))) @ mats.reshape(-1, d * d)
    return flat.reshape(lead + (d, d))


def _fd_derivatives(func, X, step):
    """Central-difference gradient ``[p, j, ...]`` and Hessian ``[p, i, j, ...]`` of a batched field."""
    N, nb = X.shape
    E = np.eye(nb) * step
    pts = [X]
    for i in range(nb):
        pts += [X + E[i], X - E[i]]
    for i in range(nb):
        for j in range(i + 1, nb):
            pts += [X + E[i] + E[j], X + E[i] - E[j], X - E[i] + E[j], X - E[i] - E[j]]
    vals = np.asarray(func(np.concatenate(pts))).reshape((len(pts), N) + np.shape(func(X[:1]))[1:])
    f0 = vals[0]
    grad = np.empty((N, nb) + f0.shape[1:], dtype=vals.dtype)
    hess = np.empty((N, nb, nb) + f0.shape[1:], dtype=vals.dtype)
    for i in range(nb):
        fp, fm = vals[1 + 2 * i], vals[2 + 2 * i]
        grad[:, i] = (fp - fm) / (2 * step)
        hess[:, i, i] = (fp - 2 * f0 + fm) / step ** 2
    k = 1 + 2 * nb
    for i in range(nb):
        for j in range(i + 1, nb):
            pp, pm, mp, mm = vals[k:k + 4]
            hess[:, i, j] = hess[:, j, i] = (pp - pm - mp + mm) / (4 * step ** 2)
            k += 4
    return grad, hess


# ---------------------------------------------------------------------------
# Filter state and stepping
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FilterMatrix:
    """Ordered-exponential state for one irrep over a batch of paths.

    ``M`` has shape ``(P, d, d)``; the spherical-row projection is applied
    only at readout.
    """

    label: str
    M: np.ndarray
    t: float
    ordering: str = "row"
    n_spherical: int = 1

    def readout(self, D0: np.ndarray, C: np.ndarray) -> np.ndarray:
        """Per-path ``tr(V N D0 C)`` (row) or ``tr(V D0 M C)`` (column).

        ``D0``: ``(d, d)`` or ``(P, d, d)`` matrices of ``D(L_{y_a})``;
        ``C``: ``(P, d, rho)`` coefficient values at the terminal base points.
        """
        r = self.n_spherical
        D0 = np.broadcast_to(D0, self.M.shape)
        prod = self.M @ D0 if self.ordering == "row" else D0 @ self.M
        return np.einsum("pri,pir->p", prod[:, :r, :], C)


def filter_step(gen: ReducedGenerator, M, X, dW_base, dt: float, *, ordering: str = "row") -> np.ndarray:
    """One Ito-Euler step ``M' = F M`` (row) or ``M' = M F`` (column).

    ``F = I + Lambda(x_k) dt + Theta_i(x_k) X^i_n(x_k) dW^n`` with ``x_k`` the
    base points *before* the step and ``dW_base`` the increments that moved
    them.
    """
    _check_ordering(ordering)
    M = np.asarray(M)
    X = _as_batch(X, gen.model.base_dim)
    d = gen.dim
    if M.ndim == 2:
        M = np.broadcast_to(M, (X.shape[0], d, d))
    if M.shape != (X.shape[0], d, d):
        raise StructuralError(f"filter matrix shape {M.shape} does not match irrep {gen.label!r} of dim {d}")
    dW = np.asarray(dW_base, dtype=float).reshape(X.shape[0], gen.model.base_dim)
    F = np.eye(d) + gen.drift_matrix(X) * dt
    if gen.model.base_dim and gen.model.khat_dim and not gen.model.connection.is_zero:
        # Theta_i X^i_n dW^n = -sigma (A X dW)^khat J_khat
        coef = (gen.model.connection(X) @ gen.model.base.noise_factor(X) @ dW[:, :, None])[:, :, 0]
        F = F - gen.params.sigma * _contract(coef, gen.J_khat)
    return F @ M if ordering == "row" else M @ F


def ordered_exponential(gen: ReducedGenerator, paths: BaseEnsemble, *, ordering: str = "row",
                        expected_seed: int | None = None, M0=None) -> FilterMatrix:
    """Compose :func:`filter_step` along every recorded base path.

    ``expected_seed`` guards the shared-noise contract: the increments must
    come from the same seed as the run they are combined with.
    """
    _check_ordering(ordering)
    if expected_seed is not None and int(expected_seed) != paths.seed:
        raise MetadataMismatch(
            f"base paths were generated with seed {paths.seed}, expected {int(expected_seed)}"
        )
    if paths.params.dt != gen.params.dt:
        raise MetadataMismatch("base paths and generator use different time steps")
    P, K1, _ = paths.x.shape
    d = gen.dim
    M = np.broadcast_to(np.eye(d, dtype=complex), (P, d, d)).copy() if M0 is None \
        else np.array(np.broadcast_to(M0, (P, d, d)), dtype=complex)
    for k in range(K1 - 1):
        M = filter_step(gen, M, paths.x[:, k], paths.dW_base[:, k], paths.params.dt, ordering=ordering)
    return FilterMatrix(gen.label, M, float(paths.times[-1]), ordering, gen.irrep.n_spherical)


def spherical_leakage(M: np.ndarray, n_spherical: int, ordering: str = "row") -> float:
    """Size of the block that would mix spherical and non-spherical indices.

    For the row ordering the spherical rows of ``N`` must stay inside the
    spherical block (``N[:rho, rho:] = 0``).
    """
    r = n_spherical
    block = M[..., :r, r:] if ordering == "row" else M[..., r:, :r]
    return float(np.abs(block).max(initial=0.0))


# ---------------------------------------------------------------------------
# Reduced generator acting on coefficient fields
# ---------------------------------------------------------------------------

def reduced_generator_apply(gen: ReducedGenerator, coeff: CoefficientField, x, *,
                            ordering: str = "row", step: float = FD_STEP_GRADIENT) -> np.ndarray:
    """Action of the reduced generator on ``C(x)`` (shape ``(N, d, rho)``).

    Row ordering (generators on the spherical-row side; exact for the bundle
    Laplacian): with reduced ``rho x rho`` blocks ``~`` of the matrices,

        L C = S[C] + d_j C P~_j + C Lambda~,

    where ``S`` is the scalar part and ``P_j`` the first-order coefficient;
    then ``tr(V D(L_y) L C)`` is the generator applied to ``tr(V D(L_y) C)``.
    Column ordering applies the full ``d x d`` matrices on the left of ``C``.
    """
    _check_ordering(ordering)
    if coeff.irrep.label != gen.label:
        raise StructuralError("coefficient field and generator use different irreps")
    X = _as_batch(x, gen.model.base_dim)
    S = gen.scalar_part(coeff, X, step)
    Lam = gen.drift_matrix(X)
    C0 = coeff(X)
    nb = gen.model.base_dim
    if nb:
        grad, _ = _fd_derivatives(coeff, X, step)
        P = gen.first_order_coefficient(X)
    if ordering == "row":
        out = S + C0 @ gen.spherical_block(Lam)
        if nb:
            out = out + np.einsum("pjir,pjrs->pis", grad, gen.spherical_block(P))
    else:
        out = S + Lam @ C0
        if nb:
            out = out + np.einsum("pjab,pjbr->par", P, grad)
    return out


def rep_readout(irrep: IrrepSpec, chart, y, C) -> np.ndarray:
    """``tr(V D(L_y) C)`` for a batch of fiber points and coefficient values."""
    D = coset_rep_matrices(irrep, chart, np.atleast_2d(y))
    r = irrep.n_spherical
    return np.einsum("pri,pir->p", D[:, :r, :], C)
