"""Identity suites shared by ``kkreduce check`` and the test-suite.

Every suite returns a list of :class:`~kkreduce.lie_algebra.CheckResult`
(name, worst residual over the sampled points, threshold). Points are drawn
from a seeded generator, so a suite is a deterministic function of its
arguments.

The finite-difference oracles here (structure equation, Killing commutators,
Laplace-Beltrami operator of the assembled metric) are deliberately
independent of the production code paths: they only use the frame values and
the assembled metric, never the analytic derivative formulas.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .bundle_model import BundleModel, invariance_report
from .coset_geometry import CosetChart, f_tensor_contractions, frame_at, frame_batch, recenter
from .filtering import ReducedGenerator, reduced_generator_apply, rep_readout
from .lie_algebra import CheckResult, group_exp, validate_decomposition
from .representation import CoefficientField, IrrepSpec, derivative_identity_check
from .sde import SimulationParams, base_step_fields, unimodular_term, unsimplified_drift

__all__ = [
    "algebra_suite",
    "drift_suite",
    "frame_suite",
    "generator_consistency",
    "laplace_beltrami_fd",
    "metric_suite",
    "representation_suite",
    "run_all",
    "sample_base_points",
    "sample_fiber_points",
]


def sample_fiber_points(chart: CosetChart, n: int, rng: np.random.Generator, fraction: float = 0.9) -> np.ndarray:
    """Uniform-direction points with radius uniform in ``[0, fraction * cutoff)``."""
    m = chart.coset_dim
    d = rng.normal(size=(n, m))
    d /= np.maximum(np.linalg.norm(d, axis=1), 1e-300)[:, None]
    return d * (fraction * chart.radius_cutoff * rng.random(n))[:, None]


def sample_base_points(model: BundleModel, n: int, rng: np.random.Generator, box: float = 2.0) -> np.ndarray:
    """Uniform points of the base domain clipped to ``[-box, box]``."""
    nb = model.base_dim
    if nb == 0:
        return np.zeros((n, 0))
    lo = np.maximum(model.base.domain[:, 0], -box)
    hi = np.minimum(model.base.domain[:, 1], box)
    return rng.uniform(lo, hi, size=(n, nb))


def _worst(values) -> float:
    values = [float(v) for v in values]
    return max(values) if values else 0.0


# ---------------------------------------------------------------------------
# Algebra and frame
# ---------------------------------------------------------------------------

def algebra_suite(spec) -> list[CheckResult]:
    return list(validate_decomposition(spec).checks)


def frame_suite(chart: CosetChart, n_points: int = 100, seed: int = 0, fd_step: float = 1e-5) -> list[CheckResult]:
    """Frame invariants, structure equation and Killing algebra at random points."""
    spec = chart.spec
    m, n = chart.coset_dim, spec.dim
    cos = list(spec.coset_idx)
    H = list(spec.h_idx)
    f = spec.structure_constants
    rng = np.random.default_rng([seed, 0x6672])
    Y = sample_fiber_points(chart, n_points, rng)
    res = {k: [] for k in ("coframe_inverse", "killing_phi_duality", "killing_phi_projector",
                           "projector_idempotent", "projector_trace", "isotropy_annihilates_dbar",
                           "structure_equation", "killing_commutator", "frame_derivative",
                           "f_tensor_closed_form", "gamma_f_divergence", "batch_matches_pointwise")}
    E = np.eye(m) * fd_step
    for y in Y:
        fr = frame_at(chart, y)
        I = np.eye(m)
        res["coframe_inverse"].append(max(np.abs(fr.e_coframe @ fr.e_recip - I).max(),
                                          np.abs(fr.e_recip @ fr.e_coframe - I).max()))
        res["killing_phi_duality"].append(np.abs(fr.killing @ fr.phi - I).max())
        res["killing_phi_projector"].append(np.abs(fr.phi @ fr.killing - fr.proj).max())
        res["projector_idempotent"].append(np.abs(fr.proj @ fr.proj - fr.proj).max())
        res["projector_trace"].append(abs(np.trace(fr.proj) - m))
        res["isotropy_annihilates_dbar"].append(np.abs(fr.D_adj[H, :] @ fr.D_bar).max(initial=0.0))
        # finite-difference oracles from frame values only
        plus = [frame_at(chart, y + E[k], check_radius=False) for k in range(m)]
        minus = [frame_at(chart, y - E[k], check_radius=False) for k in range(m)]
        de = np.stack([(p.e_full - q.e_full) / (2 * fd_step) for p, q in zip(plus, minus)])  # [nu, A, mu]
        dK = np.stack([(p.killing - q.killing) / (2 * fd_step) for p, q in zip(plus, minus)])  # [nu, a, A]
        curl = np.einsum("mAn->Amn", de) - np.einsum("nAm->Amn", de)  # d_mu e^A_nu - d_nu e^A_mu
        rhs = np.einsum("ABC,Bm,Cn->Amn", f, fr.e_full, fr.e_full)
        res["structure_equation"].append(np.abs(curl - rhs).max())
        # Lie bracket of the Killing fields: K_A^nu d_nu K_B - K_B^nu d_nu K_A = f^C_AB K_C
        KdK = np.einsum("nA,naB->aAB", fr.killing, dK)
        bracket = KdK - np.einsum("aAB->aBA", KdK)
        res["killing_commutator"].append(np.abs(bracket - np.einsum("CAB,aC->aAB", f, fr.killing)).max())
        res["frame_derivative"].append(np.abs(fr.de_full - de).max())
        res["f_tensor_closed_form"].append(np.abs(fr.F - fr.F_closed_form).max())
        # gamma^{mu nu} F^alpha_{mu nu} = -(1/sqrt gamma) d_beta(sqrt gamma gamma^{alpha beta}) for g = 1
        gi, sg = fr.e_recip @ fr.e_recip.T, abs(fr.det_coframe)
        div = sum(
            (abs(p.det_coframe) * (p.e_recip @ p.e_recip.T)[:, b] - abs(q.det_coframe) * (q.e_recip @ q.e_recip.T)[:, b])
            / (2 * fd_step) for b, (p, q) in enumerate(zip(plus, minus))
        ) / sg
        gF = f_tensor_contractions(fr, gi, np.zeros((m, m)))
        res["gamma_f_divergence"].append(np.abs(gF.gamma_F + div).max())
    e_full, e_recip, det = frame_batch(chart, Y)
    for y, ef in zip(Y, e_full):
        res["batch_matches_pointwise"].append(np.abs(frame_at(chart, y).e_full - ef).max())
    thresholds = {"coframe_inverse": 1e-10, "killing_phi_duality": 1e-8, "killing_phi_projector": 1e-8,
                  "projector_idempotent": 1e-8, "projector_trace": 1e-10, "isotropy_annihilates_dbar": 1e-10,
                  "structure_equation": 1e-5, "killing_commutator": 1e-5, "frame_derivative": 1e-6,
                  "f_tensor_closed_form": 1e-10, "gamma_f_divergence": 1e-6, "batch_matches_pointwise": 1e-12}
    _ = (n, cos)
    return [CheckResult(f"frame.{k}", _worst(v), thresholds[k], f"{n_points} points") for k, v in res.items()]


# ---------------------------------------------------------------------------
# Bundle metric, drift
# ---------------------------------------------------------------------------

def metric_suite(model: BundleModel, n_points: int = 100, seed: int = 0) -> list[CheckResult]:
    """Kaluza-Klein metric invariants, Ad(H)-invariance and re-centering invariance."""
    rng = np.random.default_rng([seed, 0x6D6574])
    X = sample_base_points(model, n_points, rng)
    Y = sample_fiber_points(model.chart, n_points, rng)
    res = {k: [] for k in ("metric_inverse_closed_form", "metric_times_inverse", "metric_determinant",
                           "metric_positive", "fiber_metric_inverse", "recenter_frame_invariants",
                           "recenter_group_element", "unimodular_term")}
    spec = model.spec
    for x, y in zip(X, Y):
        fr = frame_at(model.chart, y)
        met = model.metric(fr, x)
        dense_inv = np.linalg.inv(met.G)
        res["metric_inverse_closed_form"].append(np.abs(dense_inv - met.G_inv).max() / max(1.0, np.abs(dense_inv).max()))
        res["metric_times_inverse"].append(np.abs(met.G @ met.G_inv - np.eye(met.G.shape[0])).max())
        det_dense = np.linalg.det(met.G)
        res["metric_determinant"].append(abs(det_dense - met.det_G) / abs(det_dense))
        ev = np.linalg.eigvalsh(met.G).min()
        res["metric_positive"].append(0.0 if ev > 0 else np.inf)
        res["fiber_metric_inverse"].append(np.abs(met.gamma @ met.gamma_inv - np.eye(model.coset_dim)).max())
        # re-centering: the group element is unchanged and the frame components of gamma are g
        B = group_exp(spec, rng.normal(size=spec.dim) * 0.3)
        y2, B2 = recenter(model.chart, y, B)
        res["recenter_group_element"].append(np.abs(model.chart.element(y2) @ B2 - model.chart.element(y) @ B).max())
        fr2 = frame_at(model.chart, y2)
        g = model.gmetric.g(x)[0]
        comp1 = fr.e_recip.T @ met.gamma @ fr.e_recip
        gamma2 = fr2.e_coframe.T @ g @ fr2.e_coframe
        comp2 = fr2.e_recip.T @ gamma2 @ fr2.e_recip
        res["recenter_frame_invariants"].append(np.abs(np.linalg.eigvalsh(comp1) - np.linalg.eigvalsh(comp2)).max())
        res["unimodular_term"].append(np.abs(unimodular_term(fr, met.B)).max(initial=0.0))
    thresholds = {"metric_inverse_closed_form": 1e-10, "metric_times_inverse": 1e-10, "metric_determinant": 1e-10,
                  "metric_positive": 0.0, "fiber_metric_inverse": 1e-10, "recenter_frame_invariants": 1e-8,
                  "recenter_group_element": 1e-12, "unimodular_term": 1e-8}
    out = [CheckResult(f"metric.{k}", _worst(v), thresholds[k], f"{n_points} points") for k, v in res.items()]
    inv = invariance_report(model.gmetric, spec, X)
    out.append(CheckResult("metric." + inv.name, inv.residual, inv.threshold, inv.detail))
    return out


def drift_suite(model: BundleModel, n_points: int = 20, seed: int = 0) -> list[CheckResult]:
    """Closed-form Stratonovich drift and noise vs the literal finite-difference Laplace-Beltrami drift."""
    from .sde import _fiber_step_fields

    rng = np.random.default_rng([seed, 0x647266])
    params = SimulationParams()
    X = sample_base_points(model, n_points, rng)
    Y = sample_fiber_points(model.chart, n_points, rng, fraction=0.8)
    bf = base_step_fields(model, params, X)
    by, VB, VF, _ = _fiber_step_fields(model, params, bf, Y)
    _, b_strat, V = unsimplified_drift(model, params, np.concatenate([X, Y], axis=1))
    nb = model.base_dim
    scale = max(1.0, float(np.abs(b_strat).max()))
    r_drift = max(np.abs(b_strat[:, :nb] - bf.b).max(initial=0.0), np.abs(b_strat[:, nb:] - by).max()) / scale
    V_closed = np.concatenate([np.concatenate([bf.V, np.zeros((n_points, nb, model.coset_dim))], axis=2),
                               np.concatenate([VB, VF], axis=2)], axis=1)
    r_noise = float(np.abs(V_closed - V).max())
    return [CheckResult("drift.stratonovich_closed_form", r_drift, 1e-6, f"{n_points} points"),
            CheckResult("drift.noise_fields", r_noise, 1e-12, f"{n_points} points")]


# ---------------------------------------------------------------------------
# Representations
# ---------------------------------------------------------------------------

def representation_suite(irrep: IrrepSpec, chart: CosetChart, n_points: int = 20, seed: int = 0) -> list[CheckResult]:
    """Commutation relations, spherical-row structure and the derivative identity."""
    spec = chart.spec
    J = irrep.J
    f = spec.structure_constants
    comm = np.einsum("aij,bjk->abik", J, J) - np.einsum("bij,ajk->abik", J, J)
    r_comm = float(np.abs(comm - np.einsum("cab,cij->abij", f, J)).max())
    r_herm = float(np.abs(J + np.conj(np.swapaxes(J, 1, 2))).max())
    r = irrep.n_spherical
    H = list(spec.h_idx)
    r_sph = float(np.abs(J[H][:, :r, :]).max(initial=0.0))
    # spherical block is preserved by the structure-group generators
    K = list(spec.khat_idx)
    r_khat = float(np.abs(J[K][:, :r, r:]).max(initial=0.0)) if K else 0.0
    rng = np.random.default_rng([seed, 0x726570])
    Y = sample_fiber_points(chart, n_points, rng)
    r_der = _worst(derivative_identity_check(irrep, chart, y) for y in Y) if r else 0.0
    name = f"irrep[{irrep.label}]"
    return [
        CheckResult(f"{name}.commutation_relations", r_comm, 1e-10),
        CheckResult(f"{name}.anti_hermitian", r_herm, 1e-12),
        CheckResult(f"{name}.spherical_rows_invariant", r_sph, 1e-12, f"rho = {r}"),
        CheckResult(f"{name}.khat_preserves_spherical_block", r_khat, 1e-12),
        CheckResult(f"{name}.derivative_identity", r_der, 1e-6, f"{n_points} points"),
    ]


# ---------------------------------------------------------------------------
# Generator consistency
# ---------------------------------------------------------------------------

def laplace_beltrami_fd(model: BundleModel, func: Callable[[np.ndarray], np.ndarray], z, step: float = 1e-4,
                        metric_step: float = 1e-5) -> complex:
    """``Delta_G func`` at ``z = (x, y)`` by second-order central differences.

    ``Delta f = G^{AB} d_A d_B f + (1/sqrt G) d_A(sqrt G G^{AB}) d_B f`` with
    the metric obtained from :meth:`BundleModel.metric`; ``func`` maps a
    batch of bundle points to values.
    """
    z = np.asarray(z, dtype=float)
    D = z.size
    nb = model.base_dim
    E = np.eye(D)

    def inv_and_sqrt(q):
        met = model.metric(frame_at(model.chart, q[nb:], check_radius=False), q[:nb])
        return met.G_inv, np.sqrt(met.det_G)

    Gi, sg = inv_and_sqrt(z)
    pts = [z]
    for a in range(D):
        pts += [z + step * E[a], z - step * E[a]]
    for a in range(D):
        for b in range(a + 1, D):
            pts += [z + step * (E[a] + E[b]), z + step * (E[a] - E[b]),
                    z - step * (E[a] - E[b]), z - step * (E[a] + E[b])]
    v = np.asarray(func(np.array(pts)))
    f0 = v[0]
    grad = np.empty(D, dtype=v.dtype)
    hess = np.empty((D, D), dtype=v.dtype)
    for a in range(D):
        fp, fm = v[1 + 2 * a], v[2 + 2 * a]
        grad[a] = (fp - fm) / (2 * step)
        hess[a, a] = (fp - 2 * f0 + fm) / step ** 2
    k = 1 + 2 * D
    for a in range(D):
        for b in range(a + 1, D):
            pp, pm, mp, mm = v[k:k + 4]
            hess[a, b] = hess[b, a] = (pp - pm - mp + mm) / (4 * step ** 2)
            k += 4
    div = np.zeros(D)
    for a in range(D):
        Gp, sp = inv_and_sqrt(z + metric_step * E[a])
        Gm, sm = inv_and_sqrt(z - metric_step * E[a])
        div += (sp * Gp[a] - sm * Gm[a]) / (2 * metric_step)
    return complex(np.sum(Gi * hess) + (div / sg) @ grad)


def default_test_coefficients(irrep: IrrepSpec, base_dim: int, seed: int = 0) -> CoefficientField:
    """A smooth, generic coefficient field used by the consistency check."""
    rng = np.random.default_rng([seed, irrep.dim, 0x636F65])
    d, rho = irrep.dim, irrep.n_spherical
    if base_dim == 0:
        return CoefficientField(irrep, rng.normal(size=(d, rho)) + 1j * rng.normal(size=(d, rho)), 0)
    rows = []
    for i in range(d):
        row = []
        for r in range(rho):
            a, b, c, e = np.round(rng.uniform(-1, 1, 4), 3)
            row.append(f"{a}*sin(x1) + {b}*x2 + 1j*({c}*cos(x1*x2) + {e})")
        rows.append(row)
    return CoefficientField(irrep, rows, base_dim)


def generator_consistency(model: BundleModel, irrep: IrrepSpec, n_points: int = 20, seed: int = 0, *,
                          ordering: str = "row", params: SimulationParams | None = None,
                          coeff: CoefficientField | None = None) -> CheckResult:
    """Relative residual between ``1/2 mu^2 kappa Delta_G`` and the reduced generator.

    The bundle function is ``psi(x, y) = tr(V D(L_y) C(x))``.
    """
    params = params or SimulationParams(mu=1.1, kappa=0.9)
    coeff = coeff or default_test_coefficients(irrep, model.base_dim, seed)
    gen = ReducedGenerator(model, irrep, params)
    rng = np.random.default_rng([seed, 0x67656E])
    X = sample_base_points(model, n_points, rng, box=1.5)
    Y = sample_fiber_points(model.chart, n_points, rng, fraction=0.7)
    nb = model.base_dim

    def psi(Z):
        return rep_readout(irrep, model.chart, Z[:, nb:], coeff(Z[:, :nb]))

    worst = 0.0
    for x, y in zip(X, Y):
        fd = 0.5 * params.mu2kappa * laplace_beltrami_fd(model, psi, np.concatenate([x, y]))
        red = rep_readout(irrep, model.chart, y[None], reduced_generator_apply(gen, coeff, x[None], ordering=ordering))[0]
        worst = max(worst, abs(red - fd) / max(abs(fd), 1e-3))
    return CheckResult(f"generator_consistency[{irrep.label},{ordering}]", worst, 1e-3, f"{n_points} points")


def run_all(instance, *, geometry_points: int = 100, generator_points: int = 20, seed: int = 0) -> list[CheckResult]:
    """Every suite for a loaded instance (used by ``kkreduce check``)."""
    model = instance.model
    out = algebra_suite(instance.spec)
    if not all(c.passed for c in out):
        return out  # geometry is meaningless with an inconsistent algebra
    out += frame_suite(model.chart, geometry_points, seed)
    out += metric_suite(model, geometry_points, seed)
    out += drift_suite(model, min(geometry_points, 20), seed)
    for irrep in instance.irreps.values():
        out += representation_suite(irrep, model.chart, min(geometry_points, 20), seed)
        if irrep.n_spherical and not irrep.is_trivial:
            out.append(generator_consistency(model, irrep, generator_points, seed))
    return out
