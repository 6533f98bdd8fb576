"""Lie algebra data with a reductive splitting and group-level primitives.

The algebra ``g`` of a compact group is described by a basis ``Q_A`` of
anti-Hermitian matrices (a faithful unitary representation), the structure
constants ``f^C_AB`` defined by ``[Q_A, Q_B] = f^C_AB Q_C`` and a splitting of
the index set into three blocks

* ``h``     -- the isotropy subalgebra (stabilizer of a point on the orbit),
* ``khat``  -- a complement of ``h`` inside its normalizer (the structure
  group direction of the orbit bundle),
* ``lbar``  -- the remaining directions.

Coset coordinates are always ordered ``khat`` first, then ``lbar``; the
concatenation is available as :attr:`LieAlgebraSpec.coset_idx`.

Arrays follow the convention "upper index first": ``f[C, A, B] = f^C_AB`` and
the adjoint action ``ad(X)[C, B] = f^C_AB X^A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm, logm

from .errors import DomainError, StructuralError

__all__ = [
    "CheckResult",
    "LieAlgebraSpec",
    "ValidationReport",
    "adjoint_matrix",
    "default_inner_product",
    "group_exp",
    "structure_constants_from_generators",
    "su2_generators",
    "su3_generators",
    "validate_decomposition",
]


# ---------------------------------------------------------------------------
# Reference generator sets (used by tests and to author instance files)
# ---------------------------------------------------------------------------

def su2_generators() -> np.ndarray:
    """Return ``Q_A = -(i/2) sigma_A`` for the Pauli matrices, shape (3, 2, 2)."""
    sigma = np.array(
        [
            [[0, 1], [1, 0]],
            [[0, -1j], [1j, 0]],
            [[1, 0], [0, -1]],
        ],
        dtype=complex,
    )
    return -0.5j * sigma


def su3_generators() -> np.ndarray:
    """Return ``Q_A = -(i/2) lambda_A`` for the Gell-Mann matrices, shape (8, 3, 3)."""
    lam = np.zeros((8, 3, 3), dtype=complex)
    lam[0][0, 1] = lam[0][1, 0] = 1
    lam[1][0, 1], lam[1][1, 0] = -1j, 1j
    lam[2][0, 0], lam[2][1, 1] = 1, -1
    lam[3][0, 2] = lam[3][2, 0] = 1
    lam[4][0, 2], lam[4][2, 0] = -1j, 1j
    lam[5][1, 2] = lam[5][2, 1] = 1
    lam[6][1, 2], lam[6][2, 1] = -1j, 1j
    lam[7] = np.diag([1.0, 1.0, -2.0]) / np.sqrt(3.0)
    return -0.5j * lam


def _trace_gram(generators: np.ndarray) -> np.ndarray:
    """Hilbert-Schmidt Gram matrix ``Re tr(Q_A Q_B^dagger)``."""
    return np.einsum("aij,bij->ab", generators, generators.conj()).real


def structure_constants_from_generators(generators: np.ndarray) -> np.ndarray:
    """Compute ``f[C, A, B]`` from matrix generators by trace-form projection."""
    gens = np.asarray(generators, dtype=complex)
    gram_inv = np.linalg.inv(_trace_gram(gens))
    comm = np.einsum("aij,bjk->abik", gens, gens) - np.einsum("bij,ajk->abik", gens, gens)
    proj = np.einsum("abij,cij->cab", comm, gens.conj()).real
    return np.einsum("dc,cab->dab", gram_inv, proj)


def default_inner_product(structure_constants: np.ndarray) -> np.ndarray:
    """Negative Killing form normalized to unit mean diagonal.

    For ``su(2)`` and ``su(3)`` in the ``-(i/2) sigma`` / ``-(i/2) lambda`` bases
    this is the identity matrix.
    """
    f = np.asarray(structure_constants, dtype=float)
    killing = np.einsum("cad,dbc->ab", f, f)
    neg = -killing
    scale = np.trace(neg) / neg.shape[0]
    if not scale > 0 or np.linalg.eigvalsh(0.5 * (neg + neg.T)).min() <= 1e-12 * scale:
        raise StructuralError("negative Killing form is not positive; algebra is not compact semisimple")
    return neg / scale


# ---------------------------------------------------------------------------
# Algebra specification
# ---------------------------------------------------------------------------

def _as_index_tuple(values: Iterable[int], name: str) -> tuple[int, ...]:
    out = tuple(int(v) for v in values)
    if len(set(out)) != len(out):
        raise StructuralError(f"index set {name} contains duplicates: {out}")
    return out


@dataclass(frozen=True, eq=False)
class LieAlgebraSpec:
    """Lie algebra with a faithful matrix realization and reductive splitting.

    Parameters
    ----------
    structure_constants : array (n, n, n)
        ``f[C, A, B] = f^C_AB``.
    generators : array (n, d, d)
        Matrices ``Q_A`` of a faithful representation (anti-Hermitian).
    h_idx, khat_idx, lbar_idx : sequences of int
        Zero-based, disjoint index blocks covering ``0..n-1``.
    inner_product : array (n, n), optional
        Symmetric positive-definite form on the algebra. Defaults to the
        normalized negative Killing form.
    name : str
        Free-form label.
    """

    structure_constants: np.ndarray
    generators: np.ndarray
    h_idx: tuple[int, ...]
    khat_idx: tuple[int, ...]
    lbar_idx: tuple[int, ...]
    inner_product: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        f = np.array(self.structure_constants, dtype=float)
        if f.ndim != 3 or not (f.shape[0] == f.shape[1] == f.shape[2]):
            raise StructuralError(f"structure constants must have shape (n, n, n), got {f.shape}")
        n = f.shape[0]
        gens = np.array(self.generators, dtype=complex)
        if gens.ndim != 3 or gens.shape[0] != n or gens.shape[1] != gens.shape[2]:
            raise StructuralError(
                f"expected {n} square generator matrices, got array of shape {gens.shape}"
            )
        h = _as_index_tuple(self.h_idx, "h")
        kh = _as_index_tuple(self.khat_idx, "khat")
        lb = _as_index_tuple(self.lbar_idx, "lbar")
        union = h + kh + lb
        overlap = sorted(set(h) & set(kh) | set(h) & set(lb) | set(kh) & set(lb))
        if overlap:
            raise StructuralError(f"index partition blocks overlap at {overlap}")
        missing = sorted(set(range(n)) - set(union))
        extra = sorted(set(union) - set(range(n)))
        if missing or extra:
            raise StructuralError(
                f"index partition must cover 0..{n - 1} exactly (missing {missing}, out of range {extra})"
            )
        if self.inner_product is None:
            try:
                ip = default_inner_product(f)
            except StructuralError:
                # inconsistent constants: fall back to the generators' trace form
                # so that validate_decomposition can report what is wrong
                gram = _trace_gram(gens)
                ip = gram / (np.trace(gram) / n)
        else:
            ip = np.array(self.inner_product, dtype=float)
            if ip.shape != (n, n):
                raise StructuralError(f"inner product must be {n}x{n}, got {ip.shape}")
        for arr in (f, gens, ip):
            arr.setflags(write=False)
        object.__setattr__(self, "structure_constants", f)
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "h_idx", h)
        object.__setattr__(self, "khat_idx", kh)
        object.__setattr__(self, "lbar_idx", lb)
        object.__setattr__(self, "inner_product", ip)

    # -- sizes ---------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.structure_constants.shape[0]

    @property
    def rep_dim(self) -> int:
        return self.generators.shape[1]

    @property
    def coset_idx(self) -> tuple[int, ...]:
        """Coset directions, ``khat`` block first then ``lbar``."""
        return self.khat_idx + self.lbar_idx

    @property
    def coset_dim(self) -> int:
        return len(self.khat_idx) + len(self.lbar_idx)

    # -- derived tensors -------------------------------------------------------
    @cached_property
    def ad_matrices(self) -> np.ndarray:
        """``ad[A]`` with ``ad[A][C, B] = f^C_AB`` (adjoint action of ``Q_A``)."""
        out = np.ascontiguousarray(np.transpose(self.structure_constants, (1, 0, 2)))
        out.setflags(write=False)
        return out

    @cached_property
    def _gram_inv(self) -> np.ndarray:
        return np.linalg.inv(_trace_gram(self.generators))

    def ad(self, coefficients) -> np.ndarray:
        """Matrix of ``ad(X)`` for ``X = c^A Q_A``."""
        c = np.asarray(coefficients, dtype=float)
        return np.einsum("a,acb->cb", c, self.ad_matrices)

    def combine(self, coefficients) -> np.ndarray:
        """Return the matrix ``sum_A c^A Q_A``."""
        return np.einsum("a,aij->ij", np.asarray(coefficients), self.generators)

    def decompose(self, matrix) -> np.ndarray:
        """Coefficients of ``matrix`` on the basis ``Q_A`` (trace-form projection).

        The projection uses the invariant trace form of the faithful
        representation rather than matching individual matrix entries, so
        the result does not depend on how the generators are laid out.
        """
        m = np.asarray(matrix, dtype=complex)
        proj = np.einsum("...ij,aij->...a", m, self.generators.conj()).real
        return proj @ self._gram_inv.T

    def embed_coset(self, y) -> np.ndarray:
        """Full coefficient vector with ``y`` placed on the coset indices."""
        y = np.asarray(y, dtype=float)
        c = np.zeros(y.shape[:-1] + (self.dim,))
        c[..., list(self.coset_idx)] = y
        return c


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    """Outcome of a single named numerical check."""

    name: str
    residual: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual <= self.threshold

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: residual={self.residual:.3e} threshold={self.threshold:.1e}{extra}"


@dataclass(frozen=True)
class ValidationReport:
    """Collection of :class:`CheckResult` objects."""

    checks: tuple[CheckResult, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self) -> str:
        return "\n".join(str(c) for c in self.checks)


def _block_violation(f: np.ndarray, src1, src2, allowed, n) -> float:
    """Largest ``|f^C_AB|`` with A in src1, B in src2 and C outside ``allowed``."""
    if not src1 or not src2:
        return 0.0
    outside = [c for c in range(n) if c not in set(allowed)]
    if not outside:
        return 0.0
    sub = f[np.ix_(outside, list(src1), list(src2))]
    return float(np.abs(sub).max()) if sub.size else 0.0


def validate_decomposition(spec: LieAlgebraSpec) -> ValidationReport:
    """Run all algebraic consistency checks on ``spec``.

    Checks: antisymmetry (exact), Jacobi identity, agreement of the matrix
    generators with the structure constants, the closure relations of the
    splitting, unimodularity, anti-Hermiticity of the generators, and
    symmetry / positivity / block-orthogonality / ad-invariance of the inner
    product.
    """
    f = spec.structure_constants
    n = spec.dim
    checks = []

    antisym = np.abs(f + np.transpose(f, (0, 2, 1)))
    c, a, b = np.unravel_index(np.argmax(antisym), antisym.shape)
    checks.append(CheckResult(
        "antisymmetry", float(antisym.max()), 0.0,
        f"worst f^{c}_{a}{b}" if antisym.max() > 0 else "",
    ))

    jac = (
        np.einsum("dab,edc->eabc", f, f)
        + np.einsum("dbc,eda->eabc", f, f)
        + np.einsum("dca,edb->eabc", f, f)
    )
    per_triple = np.abs(jac).max(axis=0)
    a, b, c = np.unravel_index(np.argmax(per_triple), per_triple.shape)
    checks.append(CheckResult(
        "jacobi", float(per_triple.max()), 1e-12, f"worst triple (A,B,C)=({a},{b},{c})",
    ))

    Q = spec.generators
    comm = np.einsum("aij,bjk->abik", Q, Q) - np.einsum("bij,ajk->abik", Q, Q)
    rhs = np.einsum("cab,cij->abij", f, Q)
    gen_res = np.abs(comm - rhs).max(axis=(2, 3))
    a, b = np.unravel_index(np.argmax(gen_res), gen_res.shape)
    checks.append(CheckResult(
        "generator_commutators", float(gen_res.max()), 1e-10, f"worst pair (A,B)=({a},{b})",
    ))

    herm = np.abs(Q + np.conj(np.transpose(Q, (0, 2, 1)))).max()
    checks.append(CheckResult("generators_anti_hermitian", float(herm), 1e-12))

    H, K, L = spec.h_idx, spec.khat_idx, spec.lbar_idx
    checks.append(CheckResult("closure_[h,h]_in_h", _block_violation(f, H, H, H, n), 1e-12))
    checks.append(CheckResult("closure_[k,k]_in_k", _block_violation(f, K, K, K, n), 1e-12))
    checks.append(CheckResult("closure_[h,k]_zero", _block_violation(f, H, K, (), n), 1e-12))
    checks.append(CheckResult("closure_[h,l]_in_l", _block_violation(f, H, L, L, n), 1e-12))
    checks.append(CheckResult("closure_[k,l]_in_l", _block_violation(f, K, L, L, n), 1e-12))

    unimod = np.abs(np.einsum("aab->b", f))
    checks.append(CheckResult("unimodularity", float(unimod.max()) if n else 0.0, 1e-12))

    ip = spec.inner_product
    checks.append(CheckResult("inner_product_symmetric", float(np.abs(ip - ip.T).max()), 1e-12))
    min_eig = float(np.linalg.eigvalsh(0.5 * (ip + ip.T)).min())
    checks.append(CheckResult(
        "inner_product_positive", 0.0 if min_eig > 0 else float("inf"), 0.0,
        f"smallest eigenvalue {min_eig:.3e}",
    ))
    blocks = [H, K, L]
    off = 0.0
    for i, bi in enumerate(blocks):
        for j, bj in enumerate(blocks):
            if i != j and bi and bj:
                off = max(off, float(np.abs(ip[np.ix_(bi, bj)]).max()))
    checks.append(CheckResult("inner_product_block_orthogonal", off, 1e-12))
    inv = np.einsum("dca,db->cab", f, ip) + np.einsum("dcb,ad->cab", f, ip)
    checks.append(CheckResult("inner_product_ad_invariant", float(np.abs(inv).max()) if n else 0.0, 1e-12))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# Group-level primitives
# ---------------------------------------------------------------------------

def group_exp(spec: LieAlgebraSpec, coefficients: Sequence[float]) -> np.ndarray:
    """Matrix exponential of ``sum_A c^A Q_A`` in the faithful representation."""
    c = np.asarray(coefficients, dtype=float)
    if c.shape != (spec.dim,):
        raise StructuralError(f"expected {spec.dim} coefficients, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise DomainError("group_exp: non-finite algebra coefficients")
    return expm(spec.combine(c))


def adjoint_matrix(spec: LieAlgebraSpec, g, *, membership_tol: float = 1e-8) -> np.ndarray:
    """Adjoint matrix ``D^A_B(g)`` defined by ``g Q_B g^{-1} = D^A_B Q_A``.

    Raises :class:`DomainError` if ``g`` is singular or does not normalize the
    span of the generators (i.e. is not an element of the represented group).
    """
    g = np.asarray(g, dtype=complex)
    d = spec.rep_dim
    if g.shape != (d, d):
        raise StructuralError(f"group element must be {d}x{d}, got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise DomainError("adjoint_matrix: non-finite group element")
    if np.linalg.cond(g) > 1e12:
        raise DomainError("adjoint_matrix: group element is not invertible")
    g_inv = np.linalg.inv(g)
    conj = np.einsum("ij,bjk,kl->bil", g, spec.generators, g_inv)
    coeffs = spec.decompose(conj)  # (B, A)
    recon = np.einsum("ba,aij->bij", coeffs, spec.generators)
    resid = float(np.abs(recon - conj).max())
    if resid > membership_tol:
        raise DomainError(
            f"adjoint_matrix: g does not preserve the algebra (residual {resid:.2e})"
        )
    return np.ascontiguousarray(coeffs.T)


def group_log(spec: LieAlgebraSpec, g) -> np.ndarray:
    """Principal logarithm of a faithful group element, as algebra coefficients."""
    g = np.asarray(g, dtype=complex)
    X = logm(g)
    c = spec.decompose(X)
    if float(np.abs(spec.combine(c) - X).max()) > 1e-8:
        raise DomainError("group_log: principal logarithm leaves the algebra")
    return c
