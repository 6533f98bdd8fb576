"""Irreducible representations and harmonic analysis on the orbit.

An :class:`IrrepSpec` stores anti-Hermitian generators ``J_A`` in a basis
where the *spherical rows* come first: the first ``n_spherical`` basis row
vectors ``v`` satisfy ``v J_h = 0`` for all isotropy generators, hence
``v D(h g) = v D(g)``. Functions on the orbit ``H\\G`` are expanded as

    phi(x, y) = sum_lambda sum_rho sum_i c^lambda_{i rho}(x) D^lambda_{rho i}(L_y),

i.e. ``phi = sum_lambda tr(V D^lambda(L_y) C^lambda(x))`` with ``V`` the
spherical rows and ``C`` a ``d x rho`` coefficient matrix.

With the right-invariant Maurer-Cartan form the derivative of a
representation matrix along the chart is

    d_mu D(L_y) = e^A_mu(y) J_A D(L_y),

so on spherical rows only the coset generators contribute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm

from .coset_geometry import CosetChart, frame_at, frame_batch
from .errors import DomainError, StructuralError
from .expressions import ExpressionMatrix, variable_names
from .lie_algebra import LieAlgebraSpec, group_log

__all__ = [
    "CoefficientField",
    "CosetQuadrature",
    "ExpansionResult",
    "IrrepSpec",
    "PeterWeylCoefficients",
    "adjoint_irrep",
    "derivative_identity_check",
    "expand_on_coset",
    "faithful_irrep",
    "make_irrep",
    "rep_matrices",
    "rep_matrix",
    "spin_irrep",
    "synthesize_batch",
    "synthesize_initial",
    "trivial_irrep",
]


@dataclass(frozen=True, eq=False)
class IrrepSpec:
    """Irreducible representation in a spherical-rows-first basis."""

    label: str
    J: np.ndarray
    n_spherical: int
    basis_labels: tuple = ()

    @property
    def dim(self) -> int:
        return self.J.shape[1]

    @property
    def spherical_rows(self) -> np.ndarray:
        """Orthonormal spherical row vectors (the first basis rows)."""
        return np.eye(self.dim, dtype=complex)[: self.n_spherical]

    def generator(self, coefficients) -> np.ndarray:
        """``sum_A c^A J_A`` (works on batches of coefficient vectors)."""
        return np.einsum("...a,aij->...ij", np.asarray(coefficients), self.J)

    @property
    def is_trivial(self) -> bool:
        return self.dim == 1 and not np.any(self.J)


def _null_space_rows(J: np.ndarray, h_idx: Sequence[int], tol: float) -> np.ndarray:
    """Orthonormal basis (columns) of ``{v : v^T J_h = 0 for all h}`` and a completion."""
    d = J.shape[1]
    if not h_idx:
        return np.eye(d, dtype=complex), d
    M = np.concatenate([J[h].T for h in h_idx], axis=0)
    _, s, vh = np.linalg.svd(M)
    s_full = np.zeros(d)
    s_full[: len(s)] = s
    scale = max(1.0, float(s.max()) if s.size else 1.0)
    null = s_full <= tol * scale
    basis = vh.conj().T  # columns: right singular vectors
    order = np.concatenate([np.flatnonzero(null), np.flatnonzero(~null)])
    return basis[:, order], int(null.sum())


def make_irrep(label: str, J, spec: LieAlgebraSpec, *, basis_labels=(), tol: float = 1e-10) -> IrrepSpec:
    """Validate generators and move the spherical rows to the front of the basis.

    When every spherical vector is (up to phase) a standard basis vector the
    basis change is a permutation, so diagonal generators stay diagonal.
    """
    J = np.array(J, dtype=complex)
    n = spec.dim
    if J.ndim != 3 or J.shape[0] != n or J.shape[1] != J.shape[2]:
        raise StructuralError(f"irrep {label!r}: expected {n} square generators, got {J.shape}")
    comm = np.einsum("aij,bjk->abik", J, J) - np.einsum("bij,ajk->abik", J, J)
    rhs = np.einsum("cab,cij->abij", spec.structure_constants, J)
    resid = float(np.abs(comm - rhs).max()) if J.size else 0.0
    if resid > 1e-10:
        raise StructuralError(f"irrep {label!r}: generators violate the commutation relations ({resid:.2e})")
    herm = float(np.abs(J + np.conj(np.transpose(J, (0, 2, 1)))).max()) if J.size else 0.0
    if herm > 1e-10:
        raise StructuralError(f"irrep {label!r}: generators are not anti-Hermitian ({herm:.2e})")
    d = J.shape[1]
    basis, rho = _null_space_rows(J, spec.h_idx, tol)
    spherical = basis[:, :rho]
    support = np.abs(spherical) > tol
    if rho and np.all(support.sum(axis=0) == 1):
        sph_idx = [int(np.flatnonzero(support[:, k])[0]) for k in range(rho)]
        sph_idx.sort()
        perm = sph_idx + [i for i in range(d) if i not in sph_idx]
        U = np.eye(d, dtype=complex)[perm]
        labels = tuple(basis_labels[i] for i in perm) if basis_labels else ()
    elif rho == 0:
        U = np.eye(d, dtype=complex)
        labels = tuple(basis_labels)
    else:
        U = basis.T.copy()
        labels = ()
    J_new = np.einsum("ij,ajk,lk->ail", U, J, U.conj())
    J_new.setflags(write=False)
    return IrrepSpec(label=label, J=J_new, n_spherical=rho, basis_labels=labels)


def spin_irrep(spec: LieAlgebraSpec, l, label: str | None = None) -> IrrepSpec:
    """Spin-``l`` irrep of ``su(2)`` with ``J_k = -i S_k``.

    The algebra must use the basis ``Q_k = -(i/2) sigma_k``. Basis labels are
    the magnetic numbers ``m``; for integer ``l`` the ``m = 0`` row is moved to
    the front (it is the only spherical row for the ``Q_3`` isotropy).
    """
    if spec.dim != 3:
        raise StructuralError("spin irreps require a three-dimensional algebra")
    l = Fraction(l)
    if l < 0 or (2 * l).denominator != 1:
        raise StructuralError(f"invalid spin {l}")
    ms = [l - k for k in range(int(2 * l) + 1)]
    d = len(ms)
    Sz = np.diag([float(m) for m in ms]).astype(complex)
    Sp = np.zeros((d, d), dtype=complex)
    for k in range(1, d):
        m = ms[k]
        Sp[k - 1, k] = np.sqrt(float(l * (l + 1) - m * (m + 1)))
    Sm = Sp.conj().T
    Sx = 0.5 * (Sp + Sm)
    Sy = -0.5j * (Sp - Sm)
    J = -1j * np.array([Sx, Sy, Sz])
    labels = tuple(float(m) if m.denominator != 1 else int(m) for m in ms)
    return make_irrep(label or f"spin{l}", J, spec, basis_labels=labels)


def trivial_irrep(spec: LieAlgebraSpec, label: str = "trivial") -> IrrepSpec:
    return make_irrep(label, np.zeros((spec.dim, 1, 1)), spec)


def faithful_irrep(spec: LieAlgebraSpec, label: str = "faithful") -> IrrepSpec:
    """The defining representation given by the algebra's own generators."""
    return make_irrep(label, spec.generators, spec)


def adjoint_irrep(spec: LieAlgebraSpec, label: str = "adjoint") -> IrrepSpec:
    """Adjoint representation ``J_A = ad(Q_A)`` (real, antisymmetric for an orthonormal basis)."""
    return make_irrep(label, spec.ad_matrices.astype(complex), spec)


# ---------------------------------------------------------------------------
# Representation matrices
# ---------------------------------------------------------------------------

def rep_matrix(irrep: IrrepSpec, g, spec: LieAlgebraSpec | None = None) -> np.ndarray:
    """``D^lambda`` of a group element.

    ``g`` is either a vector of algebra coefficients (``D = exp(c^A J_A)``)
    or a matrix of the faithful representation, in which case ``spec`` is
    needed and the principal logarithm is used.
    """
    g = np.asarray(g)
    if g.ndim == 2:
        if spec is None:
            raise StructuralError("rep_matrix: a faithful group element requires the algebra spec")
        g = group_log(spec, g)
    c = np.asarray(g, dtype=float)
    if c.shape != (irrep.J.shape[0],):
        raise StructuralError(f"rep_matrix: expected {irrep.J.shape[0]} coefficients, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise DomainError("rep_matrix: non-finite coefficients")
    if float(np.abs(c).max(initial=0.0)) > 1e6:
        raise DomainError("rep_matrix: coefficients too large")
    return expm(irrep.generator(c))


def rep_matrices(irrep: IrrepSpec, C) -> np.ndarray:
    """Batched ``exp(c^A J_A)`` for ``C`` of shape ``(N, n)``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if irrep.dim == 1:
        return np.exp(irrep.generator(C))
    return expm(irrep.generator(C))


def coset_rep_matrices(irrep: IrrepSpec, chart: CosetChart, Y) -> np.ndarray:
    """``D^lambda(L_y)`` for a batch of chart coordinates."""
    return rep_matrices(irrep, chart.spec.embed_coset(np.atleast_2d(Y)))


def derivative_identity_check(irrep: IrrepSpec, chart: CosetChart, y, *, rows: str = "spherical",
                              step: float = 1e-5) -> float:
    """Residual of ``d_mu D(L_y) = e^A_mu J_A D(L_y)`` by central differences.

    ``rows="spherical"`` restricts to the spherical rows and keeps only coset
    generators (``v J_h = 0``); ``rows="full"`` checks every row with all
    generators.
    """
    frame = frame_at(chart, y)
    spec = chart.spec
    y = frame.y
    m = chart.coset_dim
    D = rep_matrix(irrep, spec.embed_coset(y))
    resid = 0.0
    for mu in range(m):
        dy = np.zeros(m)
        dy[mu] = step
        fd = (rep_matrix(irrep, spec.embed_coset(y + dy)) - rep_matrix(irrep, spec.embed_coset(y - dy))) / (2 * step)
        if rows == "spherical":
            V = irrep.spherical_rows
            cos = list(spec.coset_idx)
            pred = V @ irrep.generator(frame.e_full[cos, mu] @ np.eye(spec.dim)[cos]) @ D
            lhs = V @ fd
        elif rows == "full":
            pred = irrep.generator(frame.e_full[:, mu]) @ D
            lhs = fd
        else:
            raise ValueError("rows must be 'spherical' or 'full'")
        if lhs.size:
            resid = max(resid, float(np.abs(lhs - pred).max()))
    return resid


# ---------------------------------------------------------------------------
# Peter-Weyl coefficients
# ---------------------------------------------------------------------------

class CoefficientField:
    """Coefficient matrix ``c_{i rho}(x)`` (``d x rho``) for one irrep.

    ``values`` is either a constant array or a table of expressions in the
    base coordinates.
    """

    def __init__(self, irrep: IrrepSpec, values, base_dim: int):
        self.irrep = irrep
        self.base_dim = int(base_dim)
        d, rho = irrep.dim, irrep.n_spherical
        if isinstance(values, ExpressionMatrix):
            table = values
        elif isinstance(values, np.ndarray) and values.dtype.kind in "biufc":
            table = None
            const = np.array(values, dtype=complex).reshape(d, rho)
            const.setflags(write=False)
            self._const = const
        else:
            table = ExpressionMatrix(values, variable_names(self.base_dim))
        if table is not None and table.shape != (d, rho):
            raise StructuralError(
                f"coefficients for {irrep.label!r} must be {d}x{rho} (rows = representation index, "
                f"columns = spherical index), got {table.shape}"
            )
        if rho == 0:
            raise StructuralError(f"irrep {irrep.label!r} has no spherical rows; it cannot enter an expansion")
        self._table = table

    @property
    def label(self) -> str:
        return self.irrep.label

    @property
    def is_constant(self) -> bool:
        return self._table is None or all(e.is_constant for r in self._table.entries for e in r)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if self.base_dim else np.zeros((1, 0))
        if self._table is None:
            return np.broadcast_to(self._const, (X.shape[0],) + self._const.shape).copy()
        return self._table(X).astype(complex)


@dataclass(frozen=True, eq=False)
class PeterWeylCoefficients:
    """Finite Peter-Weyl expansion: one :class:`CoefficientField` per irrep."""

    fields: tuple[CoefficientField, ...] = field(default_factory=tuple)

    def __post_init__(self):
        labels = [f.label for f in self.fields]
        if len(set(labels)) != len(labels):
            raise StructuralError(f"duplicate irreps in expansion: {labels}")

    @property
    def truncation(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.fields)

    @property
    def irreps(self) -> tuple[IrrepSpec, ...]:
        return tuple(f.irrep for f in self.fields)

    def __add__(self, other: "PeterWeylCoefficients") -> "PeterWeylCoefficients":
        mine = {f.label: f for f in self.fields}
        theirs = {f.label: f for f in other.fields}
        out = []
        for label in list(mine) + [k for k in theirs if k not in mine]:
            a, b = mine.get(label), theirs.get(label)
            if a is None or b is None:
                out.append(a or b)
                continue
            if not (a.is_constant and b.is_constant):
                raise StructuralError("only constant coefficient fields can be added")
            base_dim = a.base_dim
            zero = np.zeros((1, base_dim))
            out.append(CoefficientField(a.irrep, a(zero)[0] + b(zero)[0], base_dim))
        return PeterWeylCoefficients(tuple(out))


def synthesize_batch(coeffs: PeterWeylCoefficients, X, reps: Mapping[str, np.ndarray]) -> np.ndarray:
    """``sum_lambda tr(V D^lambda C^lambda(x))`` on a batch.

    ``reps[label]`` holds the representation matrices ``(N, d, d)`` of the
    group elements at which the function is evaluated.
    """
    X = np.asarray(X, dtype=float)
    total = None
    for fld in coeffs.fields:
        R = reps[fld.label]
        rho = fld.irrep.n_spherical
        val = np.einsum("nri,nir->n", R[:, :rho, :], fld(X))
        total = val if total is None else total + val
    if total is None:
        raise StructuralError("empty truncation set")
    return total


def synthesize_initial(coeffs: PeterWeylCoefficients, x, y, chart: CosetChart) -> complex:
    """``phi_0(x, y) = sum_{lambda, rho, i} c^lambda_{i rho}(x) D^lambda_{rho i}(L_y)``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    reps = {f.label: coset_rep_matrices(f.irrep, chart, y) for f in coeffs.fields}
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return complex(synthesize_batch(coeffs, x, reps)[0])


# ---------------------------------------------------------------------------
# Quadrature on the orbit and expansion
# ---------------------------------------------------------------------------

class CosetQuadrature:
    """Product Gauss-Legendre rule on the coordinate ball ``|y| <= radius``.

    Hyperspherical coordinates are used: Gauss-Legendre in the radius and
    the polar angles, the periodic trapezoid rule in the last angle. The
    weights include the invariant density ``|det e^a_mu(y)|``.
    """

    def __init__(self, chart: CosetChart, radius: float, n_radial: int = 24, n_angular: int = 24):
        m = chart.coset_dim
        if m == 0:
            raise StructuralError("quadrature on a zero-dimensional orbit")
        self.chart = chart
        self.radius = float(radius)
        r, wr = leggauss(n_radial)
        r = 0.5 * self.radius * (r + 1.0)
        wr = 0.5 * self.radius * wr * r ** (m - 1)
        if m == 1:
            dirs = np.array([[1.0], [-1.0]])
            wd = np.array([1.0, 1.0])
        else:
            grids, wgrids = [], []
            for k in range(m - 2):
                t, wt = leggauss(n_angular)
                theta = 0.5 * np.pi * (t + 1.0)
                grids.append(theta)
                wgrids.append(0.5 * np.pi * wt * np.sin(theta) ** (m - 2 - k))
            grids.append(2.0 * np.pi * np.arange(n_angular) / n_angular)
            wgrids.append(np.full(n_angular, 2.0 * np.pi / n_angular))
            mesh = np.meshgrid(*grids, indexing="ij")
            wmesh = np.meshgrid(*wgrids, indexing="ij")
            angles = [a.ravel() for a in mesh]
            wd = np.prod([w.ravel() for w in wmesh], axis=0)
            dirs = np.empty((angles[0].size, m))
            sin_prod = np.ones(angles[0].size)
            for k in range(m - 1):
                dirs[:, k] = sin_prod * np.cos(angles[k])
                sin_prod = sin_prod * np.sin(angles[k])
            dirs[:, m - 1] = sin_prod
        nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, m)
        weights = (wr[:, None] * wd[None, :]).ravel()
        _, _, det = frame_batch(chart, nodes)
        self.nodes = nodes
        self.weights = weights * np.abs(det)
        self.volume = float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class ExpansionResult:
    coefficients: PeterWeylCoefficients
    aliasing_residual: float


def expand_on_coset(samples, quadrature: CosetQuadrature, irreps: Sequence[IrrepSpec],
                    base_dim: int = 0) -> ExpansionResult:
    """Project samples of a function on the orbit onto the given irreps.

    ``c_{i rho} = d_lambda / vol * sum_k w_k phi(y_k) conj(D_{rho i}(L_{y_k}))``
    (Schur orthogonality). The aliasing residual is the relative weighted
    L2 norm of ``phi - synth(expansion)`` on the nodes.
    """
    samples = np.asarray(samples, dtype=complex).reshape(-1)
    if samples.shape[0] != quadrature.nodes.shape[0]:
        raise StructuralError("one sample per quadrature node is required")
    w = quadrature.weights
    fields = []
    reps = {}
    for irrep in irreps:
        if irrep.n_spherical == 0:
            continue
        R = coset_rep_matrices(irrep, quadrature.chart, quadrature.nodes)
        reps[irrep.label] = R
        rho = irrep.n_spherical
        c = irrep.dim / quadrature.volume * np.einsum("k,k,kri->ir", w, samples, R[:, :rho, :].conj())
        fields.append(CoefficientField(irrep, c, base_dim))
    coeffs = PeterWeylCoefficients(tuple(fields))
    X = np.zeros((samples.shape[0], base_dim))
    recon = synthesize_batch(coeffs, X, reps) if fields else np.zeros_like(samples)
    norm = np.sqrt(np.sum(w * np.abs(samples) ** 2))
    resid = np.sqrt(np.sum(w * np.abs(samples - recon) ** 2)) / max(norm, 1e-300)
    return ExpansionResult(coeffs, float(resid))
