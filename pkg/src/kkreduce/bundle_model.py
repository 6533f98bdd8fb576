"""Kaluza-Klein metric on the orbit bundle and the batched base fields.

The manifold is described in bundle coordinates ``(x^i, y^alpha)``: ``x`` on
the orbit space (base) with metric ``h_ij(x)``, ``y`` exponential coordinates
on the orbit. Given an ``Ad(h)``-invariant metric ``g_ab(x)`` on the coset
directions and a connection ``A^khat_i(x)``, the metric reads

    G = [[h + B^T gamma B, B^T gamma],
         [gamma B,         gamma   ]],   B^alpha_i = A^khat_i e^alpha_khat,

with ``gamma_alpha_beta = g_ab e^a_alpha e^b_beta``. Its inverse is

    G^{-1} = [[h^{-1},       -h^{-1} B^T              ],
              [-B h^{-1},    gamma^{-1} + B h^{-1} B^T]].

All field callables are *batched*: they take ``X`` of shape ``(N, base_dim)``
and return arrays with a leading axis ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .coset_geometry import CosetChart, CosetFrame, fiber_metric
from .errors import DomainError, MetricError, StructuralError
from .expressions import ExpressionMatrix, variable_names
from .lie_algebra import CheckResult, LieAlgebraSpec

__all__ = [
    "BaseChart",
    "BaseFields",
    "BundleModel",
    "ConnectionField",
    "HorizontalAlgebraMetric",
    "KaluzaKleinMetric",
    "assemble_metric",
    "invariance_report",
]

#: Central-difference step for derivatives of the base fields.
FD_STEP = 1e-5

BatchField = Callable[[np.ndarray], np.ndarray]


def _as_batch(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if dim else np.zeros((1, 0))
    if X.shape[-1] != dim:
        raise StructuralError(f"expected points of dimension {dim}, got shape {X.shape}")
    return X


def _fd_gradient(func: BatchField, X: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a batched field: ``out[p, j, ...] = d_j func(X)[p, ...]``.

    All shifted points are evaluated in a single call of ``func``.
    """
    N, d = X.shape
    if d == 0:
        val = func(X)
        return np.zeros((N, 0) + val.shape[1:])
    shifts = np.eye(d) * step
    pts = np.concatenate([X[None, :, :] + shifts[:, None, :], X[None, :, :] - shifts[:, None, :]])
    vals = func(pts.reshape(2 * d * N, d))
    vals = vals.reshape((2, d, N) + vals.shape[1:])
    grad = (vals[0] - vals[1]) / (2.0 * step)
    return np.moveaxis(grad, 0, 1)


def batch_inv(M: np.ndarray) -> np.ndarray:
    """Inverse of a batch of small matrices (closed form up to 2x2)."""
    n = M.shape[-1]
    if n == 0:
        return M.copy()
    if n == 1:
        return 1.0 / M
    if n == 2:
        a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        det = a * d - b * c
        out = np.empty_like(M)
        out[..., 0, 0] = d / det
        out[..., 0, 1] = -b / det
        out[..., 1, 0] = -c / det
        out[..., 1, 1] = a / det
        return out
    return np.linalg.inv(M)


def batch_det(M: np.ndarray) -> np.ndarray:
    """Determinant of a batch of small matrices (closed form up to 2x2)."""
    n = M.shape[-1]
    if n == 0:
        return np.ones(M.shape[:-2])
    if n == 1:
        return M[..., 0, 0].copy()
    if n == 2:
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return np.linalg.det(M)


def batch_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a batch of SPD matrices (closed form up to 2x2).

    Raises :class:`numpy.linalg.LinAlgError` if a matrix is not positive-definite.
    """
    n = M.shape[-1]
    if n == 0:
        return M.copy()
    if n > 2:
        return np.linalg.cholesky(M)
    with np.errstate(invalid="ignore"):
        l00 = np.sqrt(M[..., 0, 0])
        out = np.zeros_like(M)
        out[..., 0, 0] = l00
        if n == 2:
            l10 = M[..., 1, 0] / l00
            out[..., 1, 0] = l10
            out[..., 1, 1] = np.sqrt(M[..., 1, 1] - l10 * l10)
    diag = np.diagonal(out, axis1=-2, axis2=-1)
    if not np.all(diag > 0):
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return out


# ---------------------------------------------------------------------------
# Base, connection and fiber-metric fields
# ---------------------------------------------------------------------------

class BaseChart:
    """Chart on the orbit space with metric ``h_ij(x)``.

    Parameters
    ----------
    dim : int
        Base dimension (0 for a point).
    metric : callable
        Batched ``X -> h(X)`` of shape ``(N, dim, dim)``.
    domain : array (dim, 2)
        Coordinate box; paths leaving it are aborted.
    """

    def __init__(self, dim: int, metric: BatchField, domain=None, name: str = "", *,
                 is_constant: bool = False):
        self.dim = int(dim)
        self._metric = metric
        self.is_constant = bool(is_constant)
        if domain is None:
            domain = np.tile([-np.inf, np.inf], (self.dim, 1))
        self.domain = np.asarray(domain, dtype=float).reshape(self.dim, 2)
        self.name = name

    # -- builtin charts -----------------------------------------------------
    @classmethod
    def point(cls) -> "BaseChart":
        """Zero-dimensional base (pure orbit problem)."""
        return cls(0, lambda X: np.zeros((np.shape(X)[0], 0, 0)), np.zeros((0, 2)), "point", is_constant=True)

    @classmethod
    def flat(cls, dim: int, domain=None) -> "BaseChart":
        def metric(X):
            return np.broadcast_to(np.eye(dim), (np.shape(X)[0], dim, dim)).copy()

        return cls(dim, metric, domain, "flat", is_constant=True)

    @classmethod
    def round_sphere(cls, radius: float = 1.0, domain=None) -> "BaseChart":
        """Stereographic chart of the round 2-sphere: ``h = 4 R^2 / (1 + |x|^2)^2 delta``."""
        r2 = float(radius) ** 2

        def metric(X):
            X = np.asarray(X)
            conf = 4.0 * r2 / (1.0 + np.sum(X * X, axis=1)) ** 2
            return conf[:, None, None] * np.eye(2)

        return cls(2, metric, domain, "round-sphere")

    @classmethod
    def from_expressions(cls, rows, domain=None) -> "BaseChart":
        dim = len(rows)
        mat = ExpressionMatrix(rows, variable_names(dim))
        if mat.shape != (dim, dim) or mat.is_complex:
            raise StructuralError("base metric must be a real square expression table")
        return cls(dim, mat, domain, "expression", is_constant=all(e.is_constant for r in mat.entries for e in r))

    # -- evaluation -----------------------------------------------------------
    def h(self, X) -> np.ndarray:
        X = _as_batch(X, self.dim)
        return np.asarray(self._metric(X), dtype=float).reshape(X.shape[0], self.dim, self.dim)

    def h_inv(self, X) -> np.ndarray:
        return batch_inv(self.h(X))

    def det_h(self, X) -> np.ndarray:
        return batch_det(self.h(X))

    def noise_factor(self, X) -> np.ndarray:
        """Lower-triangular ``X^i_n`` with ``X X^T = h^{-1}`` (batched)."""
        hi = self.h_inv(X)
        if not self.dim:
            return hi
        try:
            return batch_cholesky(hi)
        except np.linalg.LinAlgError:
            raise MetricError("base metric is not positive-definite on the batch") from None

    def contains(self, X) -> np.ndarray:
        X = _as_batch(X, self.dim)
        return np.all((X >= self.domain[:, 0]) & (X <= self.domain[:, 1]), axis=1)


class ConnectionField:
    """Connection coefficients ``A^khat_i(x)`` (shape ``(N, n_khat, base_dim)``).

    ``divergence`` optionally supplies the analytic
    ``(1/sqrt(hg)) d_i(sqrt(hg) h^{ij} A^khat_j)``; when absent it is computed
    by central differences.
    """

    def __init__(self, khat_dim: int, base_dim: int, field: BatchField | None = None,
                 divergence: BatchField | None = None, name: str = ""):
        self.khat_dim = int(khat_dim)
        self.base_dim = int(base_dim)
        if field is None:
            field = lambda X: np.zeros((np.shape(X)[0], self.khat_dim, self.base_dim))  # noqa: E731
            name = name or "zero"
        self._field = field
        self.divergence = divergence
        self.name = name

    @property
    def is_zero(self) -> bool:
        return self.name == "zero" or self.khat_dim == 0 or self.base_dim == 0

    @classmethod
    def zero(cls, khat_dim: int, base_dim: int) -> "ConnectionField":
        return cls(khat_dim, base_dim, None, None, "zero")

    @classmethod
    def monopole(cls, charge: float) -> "ConnectionField":
        """Monopole connection on the stereographic sphere.

        ``A = q (x1 dx2 - x2 dx1) / (1 + |x|^2)`` with a single structure-group
        direction.
        """
        q = float(charge)

        def field(X):
            X = np.asarray(X)
            den = 1.0 + np.sum(X * X, axis=1)
            out = np.empty((X.shape[0], 1, 2))
            out[:, 0, 0] = -q * X[:, 1] / den
            out[:, 0, 1] = q * X[:, 0] / den
            return out

        return cls(1, 2, field, None, "monopole")

    @classmethod
    def from_expressions(cls, rows, base_dim: int) -> "ConnectionField":
        mat = ExpressionMatrix(rows, variable_names(base_dim))
        if mat.shape[1] != base_dim or mat.is_complex:
            raise StructuralError("connection table must be real with base_dim columns")
        return cls(mat.shape[0], base_dim, mat, None, "expression")

    def __call__(self, X) -> np.ndarray:
        X = _as_batch(X, self.base_dim)
        out = np.asarray(self._field(X), dtype=float)
        return out.reshape(X.shape[0], self.khat_dim, self.base_dim)


class HorizontalAlgebraMetric:
    """``Ad(h)``-invariant metric ``g_ab(x)`` on the coset directions."""

    def __init__(self, coset_dim: int, base_dim: int, field: BatchField, name: str = ""):
        self.coset_dim = int(coset_dim)
        self.base_dim = int(base_dim)
        self._field = field
        self.name = name
        self._const = None  # (g, g_inv, det g) when x-independent

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @classmethod
    def constant(cls, matrix, base_dim: int) -> "HorizontalAlgebraMetric":
        mat = np.array(matrix, dtype=float)
        mat.setflags(write=False)
        m = mat.shape[0]
        out = cls(m, base_dim, lambda X: np.broadcast_to(mat, (np.shape(X)[0], m, m)).copy(), "constant")
        if m:
            inv = np.linalg.inv(mat)
            inv.setflags(write=False)
            chol = np.linalg.cholesky(inv)
            chol.setflags(write=False)
            out._const = (mat, inv, float(np.linalg.det(mat)), chol)
        return out

    @classmethod
    def from_expressions(cls, rows, base_dim: int) -> "HorizontalAlgebraMetric":
        mat = ExpressionMatrix(rows, variable_names(base_dim))
        if mat.shape[0] != mat.shape[1] or mat.is_complex:
            raise StructuralError("fiber metric table must be real and square")
        if all(e.is_constant for r in mat.entries for e in r):
            return cls.constant(mat(np.zeros((1, base_dim)))[0], base_dim)
        return cls(mat.shape[0], base_dim, mat, "expression")

    def g(self, X) -> np.ndarray:
        X = _as_batch(X, self.base_dim)
        return np.asarray(self._field(X), dtype=float).reshape(X.shape[0], self.coset_dim, self.coset_dim)

    __call__ = g

    def g_inv(self, X) -> np.ndarray:
        if self._const is not None:
            n = _as_batch(X, self.base_dim).shape[0]
            return np.broadcast_to(self._const[1], (n, self.coset_dim, self.coset_dim)).copy()
        return np.linalg.inv(self.g(X))

    def g_inv_factor(self, X) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``L L^T = g^{-1}``, shape (N, m, m)."""
        if self._const is not None:
            n = _as_batch(X, self.base_dim).shape[0]
            return np.broadcast_to(self._const[3], (n, self.coset_dim, self.coset_dim)).copy()
        try:
            return np.linalg.cholesky(self.g_inv(X))
        except np.linalg.LinAlgError:
            raise MetricError("fiber metric is not positive-definite on the batch") from None

    def det_g(self, X) -> np.ndarray:
        n = _as_batch(X, self.base_dim).shape[0]
        if self._const is not None:
            return np.full(n, self._const[2])
        return np.linalg.det(self.g(X)) if self.coset_dim else np.ones(n)


def invariance_report(gmet: HorizontalAlgebraMetric, spec: LieAlgebraSpec, sample_points,
                      threshold: float = 1e-10) -> CheckResult:
    """Infinitesimal ``Ad(h)``-invariance of ``g``: ``f^c_{ha} g_cb + f^c_{hb} g_ac = 0``."""
    cos = list(spec.coset_idx)
    H = list(spec.h_idx)
    pts = _as_batch(sample_points, gmet.base_dim)
    if not H or not cos:
        return CheckResult("fiber_metric_ad_h_invariance", 0.0, threshold)
    f = spec.structure_constants[np.ix_(cos, H, cos)]  # f[c, h, a]
    g = gmet.g(pts)
    t = np.einsum("cha,pcb->phab", f, g)
    resid = np.abs(t + np.swapaxes(t, 2, 3)).max()
    return CheckResult("fiber_metric_ad_h_invariance", float(resid), threshold)


# ---------------------------------------------------------------------------
# Kaluza-Klein metric at a point
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KaluzaKleinMetric:
    """Assembled bundle metric at one point ``(x, y)``.

    Coordinates are ordered ``(x^1..x^nb, y^1..y^m)``.
    """

    G: np.ndarray
    G_inv: np.ndarray
    det_G: float
    h: np.ndarray
    gamma: np.ndarray
    gamma_inv: np.ndarray
    det_h: float
    det_gamma: float
    B: np.ndarray  # B[alpha, i]


def assemble_metric(base: BaseChart, conn: ConnectionField, gmet: HorizontalAlgebraMetric,
                    frame: CosetFrame, x) -> KaluzaKleinMetric:
    """Assemble the metric, its closed-form inverse and determinant at ``(x, frame.y)``."""
    x = _as_batch(x, base.dim)
    if x.shape[0] != 1:
        raise StructuralError("assemble_metric takes a single base point")
    if not np.all(np.isfinite(x)):
        raise DomainError("assemble_metric: non-finite base point")
    h = base.h(x)[0]
    hi = np.linalg.inv(h) if base.dim else h
    gamma, gamma_inv, det_gamma = fiber_metric(frame, gmet.g(x)[0])
    nk = len(frame.spec.khat_idx)
    A = conn(x)[0]  # (nk, nb)
    B = frame.e_recip[:, :nk] @ A  # (m, nb)
    nb, m = base.dim, frame.chart.coset_dim
    G = np.empty((nb + m, nb + m))
    G[:nb, :nb] = h + B.T @ gamma @ B
    G[:nb, nb:] = B.T @ gamma
    G[nb:, :nb] = gamma @ B
    G[nb:, nb:] = gamma
    Gi = np.empty_like(G)
    Gi[:nb, :nb] = hi
    Gi[:nb, nb:] = -hi @ B.T
    Gi[nb:, :nb] = -B @ hi
    Gi[nb:, nb:] = gamma_inv + B @ hi @ B.T
    G = 0.5 * (G + G.T)
    Gi = 0.5 * (Gi + Gi.T)
    ev = np.linalg.eigvalsh(G)
    if ev.min() <= 0:
        raise MetricError(f"bundle metric not positive-definite (eigenvalue {ev.min():.3e})", ev.min())
    det_h = float(np.linalg.det(h)) if nb else 1.0
    return KaluzaKleinMetric(G, Gi, det_h * det_gamma, h, gamma, gamma_inv, det_h, det_gamma, B)


# ---------------------------------------------------------------------------
# The bundle model with batched base fields
# ---------------------------------------------------------------------------

class BaseFields(NamedTuple):
    """Base-dependent fields on a batch of points."""

    h_inv: np.ndarray   # (N, nb, nb)
    X: np.ndarray       # (N, nb, nb) noise factor X^i_n
    A: np.ndarray       # (N, nk, nb)
    g: np.ndarray       # (N, m, m)
    g_inv: np.ndarray   # (N, m, m)


@dataclass(frozen=True, eq=False)
class BundleModel:
    """Everything that defines the bundle geometry of an instance."""

    spec: LieAlgebraSpec
    chart: CosetChart
    base: BaseChart
    connection: ConnectionField
    gmetric: HorizontalAlgebraMetric
    name: str = ""
    fd_step: float = FD_STEP

    def __post_init__(self):
        nk, m, nb = len(self.spec.khat_idx), self.spec.coset_dim, self.base.dim
        if self.chart.spec is not self.spec:
            raise StructuralError("chart and model refer to different algebras")
        if (self.connection.khat_dim, self.connection.base_dim) != (nk, nb):
            raise StructuralError(
                f"connection must be {nk}x{nb}, got {self.connection.khat_dim}x{self.connection.base_dim}"
            )
        if (self.gmetric.coset_dim, self.gmetric.base_dim) != (m, nb):
            raise StructuralError(f"fiber metric must be {m}x{m} over a {nb}-dimensional base")

    @property
    def base_dim(self) -> int:
        return self.base.dim

    @property
    def coset_dim(self) -> int:
        return self.spec.coset_dim

    @property
    def khat_dim(self) -> int:
        return len(self.spec.khat_idx)

    # -- pointwise fields ----------------------------------------------------
    def fields(self, X) -> BaseFields:
        X = _as_batch(X, self.base_dim)
        g = self.gmetric.g(X)
        return BaseFields(self.base.h_inv(X), self.base.noise_factor(X), self.connection(X),
                          g, np.linalg.inv(g))

    @property
    def metrics_constant(self) -> bool:
        """True when both ``h`` and ``g`` are x-independent (metric drift terms vanish)."""
        return self.base.is_constant and self.gmetric.is_constant

    def sqrt_hg(self, X) -> np.ndarray:
        X = _as_batch(X, self.base_dim)
        return np.sqrt(self.base.det_h(X) * self.gmetric.det_g(X))

    def metric(self, frame: CosetFrame, x) -> KaluzaKleinMetric:
        return assemble_metric(self.base, self.connection, self.gmetric, frame, x)

    # -- first-order terms built from base derivatives -----------------------
    def base_ito_drift(self, X) -> np.ndarray:
        """``(1/sqrt(hg)) d_n(h^{ni} sqrt(hg))``, shape (N, nb)."""
        X = _as_batch(X, self.base_dim)
        if not self.base_dim or self.metrics_constant:
            return np.zeros((X.shape[0], self.base_dim))

        def w(P):
            return self.base.h_inv(P) * self.sqrt_hg(P)[:, None, None]

        dw = _fd_gradient(w, X, self.fd_step)  # [p, j, n, i]
        return np.einsum("pnni->pi", dw) / self.sqrt_hg(X)[:, None]

    def base_noise_correction(self, X) -> np.ndarray:
        """``X^j_n d_j X^i_n`` (Stratonovich correction of the base noise), shape (N, nb)."""
        X = _as_batch(X, self.base_dim)
        if not self.base_dim or self.base.is_constant:
            return np.zeros((X.shape[0], self.base_dim))
        Xf = self.base.noise_factor(X)
        dX = _fd_gradient(self.base.noise_factor, X, self.fd_step)  # [p, j, i, n]
        return np.einsum("pjn,pjin->pi", Xf, dX)

    def connection_divergence(self, X) -> np.ndarray:
        """``(1/sqrt(hg)) d_i(sqrt(hg) h^{ij} A^khat_j)``, shape (N, nk)."""
        X = _as_batch(X, self.base_dim)
        if self.connection.divergence is not None:
            return np.asarray(self.connection.divergence(X), dtype=float).reshape(X.shape[0], self.khat_dim)
        if self.connection.is_zero:
            return np.zeros((X.shape[0], self.khat_dim))

        def w(P):
            return np.einsum("pij,pkj->pki", self.base.h_inv(P), self.connection(P)) * self.sqrt_hg(P)[:, None, None]

        dw = _fd_gradient(w, X, self.fd_step)  # [p, j, k, i]
        return np.einsum("pjkj->pk", dw) / self.sqrt_hg(X)[:, None]

    def connection_noise_correction(self, X) -> np.ndarray:
        """``X^j_n d_j (X^i_n A^khat_i)``, shape (N, nk)."""
        X = _as_batch(X, self.base_dim)
        if self.connection.is_zero:
            return np.zeros((X.shape[0], self.khat_dim))

        def w(P):
            return np.einsum("pin,pki->pnk", self.base.noise_factor(P), self.connection(P))

        Xf = self.base.noise_factor(X)
        dw = _fd_gradient(w, X, self.fd_step)  # [p, j, n, k]
        return np.einsum("pjn,pjnk->pk", Xf, dw)
