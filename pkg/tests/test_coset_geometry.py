import numpy as np
import pytest

from kkreduce import kernels
from kkreduce.checks import frame_suite
from kkreduce.coset_geometry import (
    CosetChart,
    f_tensor_contractions,
    fiber_metric,
    frame_at,
    frame_batch,
    recenter,
)
from kkreduce.errors import ChartDomainError, DegenerateFrameError, DomainError, StructuralError
from kkreduce.lie_algebra import group_exp

from conftest import random_ball

NAMES = ("coset_only", "su2_flat", "flat_const", "hopf")


def fd(func, y, step=1e-5):
    """Central differences of an array-valued function, stacked on a leading axis."""
    E = np.eye(y.size) * step
    return np.stack([(func(y + e) - func(y - e)) / (2 * step) for e in E])


def test_chart_defaults(flat_const):
    chart = flat_const.model.chart
    assert chart.radius_cutoff == pytest.approx(0.9 * chart.safe_radius)
    assert chart.coset_dim == flat_const.spec.dim - len(flat_const.spec.h_idx)
    with pytest.raises(StructuralError):
        CosetChart(flat_const.spec, 0.0)


@pytest.mark.parametrize("name", NAMES)
def test_frame_at_origin(instances, name):
    spec = instances[name].spec
    fr = frame_at(instances[name].model.chart, np.zeros(spec.coset_dim))
    cos, H = list(spec.coset_idx), list(spec.h_idx)
    m = spec.coset_dim
    np.testing.assert_allclose(fr.e_coframe, np.eye(m), atol=1e-15)
    np.testing.assert_allclose(fr.e_full[H], 0.0, atol=1e-15)
    np.testing.assert_allclose(fr.D_adj, np.eye(spec.dim), atol=1e-15)
    np.testing.assert_allclose(fr.phi[cos], np.eye(m), atol=1e-15)
    P = np.zeros((spec.dim, spec.dim))
    P[cos, cos] = 1.0
    np.testing.assert_allclose(fr.proj, P, atol=1e-15)


@pytest.mark.parametrize("name", NAMES)
def test_frame_identity_suite(instances, name):
    results = frame_suite(instances[name].model.chart, n_points=100, seed=3)
    bad = [str(c) for c in results if not c.passed]
    assert not bad, bad


def test_structure_equation_by_finite_differences(coset_only, rng):
    chart = coset_only.model.chart
    f = coset_only.spec.structure_constants
    for y in random_ball(rng, 10, 2, chart.radius_cutoff):
        fr = frame_at(chart, y)
        de = fd(lambda q: frame_at(chart, q, check_radius=False).e_full, y)  # [nu, A, mu]
        lhs = np.einsum("mAn->Amn", de) - np.einsum("nAm->Amn", de)
        rhs = np.einsum("ABC,Bm,Cn->Amn", f, fr.e_full, fr.e_full)
        assert np.abs(lhs - rhs).max() < 1e-5


def test_killing_commutator_by_finite_differences(flat_const, rng):
    chart = flat_const.model.chart
    f = flat_const.spec.structure_constants
    for y in random_ball(rng, 5, 5, chart.radius_cutoff):
        fr = frame_at(chart, y)
        dK = fd(lambda q: frame_at(chart, q, check_radius=False).killing, y)  # [nu, alpha, A]
        KdK = np.einsum("nA,naB->aAB", fr.killing, dK)
        bracket = KdK - np.einsum("aAB->aBA", KdK)
        assert np.abs(bracket - np.einsum("CAB,aC->aAB", f, fr.killing)).max() < 1e-5


def test_chart_domain_and_degenerate_frame(coset_only):
    chart = coset_only.model.chart
    with pytest.raises(ChartDomainError):
        frame_at(chart, [chart.radius_cutoff, 0.0])
    # su(2)/u(1): the exponential coordinates degenerate on the sphere |y| = pi
    with pytest.raises(DegenerateFrameError):
        frame_at(chart, [np.pi, 0.0], check_radius=False)
    with pytest.raises(DomainError):
        frame_at(chart, [np.nan, 0.0])
    with pytest.raises(StructuralError):
        frame_at(chart, [0.1, 0.2, 0.3])


def test_frame_is_deterministic(flat_const, rng):
    chart = flat_const.model.chart
    y = random_ball(rng, 1, 5, chart.radius_cutoff)[0]
    a, b = frame_at(chart, y), frame_at(chart, y)
    for name in ("e_full", "e_recip", "D_adj", "killing", "proj"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.F, b.F)


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_frame_batch_matches_pointwise(flat_const, rng, backend):
    chart = flat_const.model.chart
    Y = random_ball(rng, 50, 5, chart.radius_cutoff)
    previous = kernels.backend()
    kernels.use_backend(backend)
    try:
        e_full, e_recip, det = frame_batch(chart, Y)
    finally:
        kernels.use_backend(previous)
    for k, y in enumerate(Y):
        fr = frame_at(chart, y)
        np.testing.assert_allclose(e_full[k], fr.e_full, atol=1e-13)
        np.testing.assert_allclose(e_recip[k], fr.e_recip, atol=1e-12)
        assert det[k] == pytest.approx(fr.det_coframe, rel=1e-12)


def test_f_tensor_at_origin_matches_finite_differences(flat_const):
    chart = flat_const.model.chart
    y = np.zeros(5)
    fr = frame_at(chart, y)
    dK = fd(lambda q: frame_at(chart, q, check_radius=False).killing, y)
    F_fd = -np.einsum("Am,naA->amn", fr.phi, dK)
    np.testing.assert_allclose(fr.F, F_fd, atol=1e-8)
    g_inv = np.linalg.inv(np.diag([0.8, 1.25, 1.25, 1.25, 1.25]))
    gamma_inv = fr.e_recip @ g_inv @ fr.e_recip.T
    out = f_tensor_contractions(fr, gamma_inv, np.zeros((5, 5)))
    np.testing.assert_allclose(out.gamma_F, np.einsum("mn,amn->a", gamma_inv, F_fd), atol=1e-8)


@pytest.mark.parametrize("name", ["coset_only", "flat_const"])
def test_contracted_f_tensor_is_metric_divergence(instances, name, rng):
    """gamma^{mu nu} F^alpha_{mu nu} = -(1/sqrt gamma) d_beta(sqrt gamma gamma^{alpha beta}) for constant g."""
    chart = instances[name].model.chart
    m = chart.coset_dim
    g = instances[name].model.gmetric.g(np.zeros((1, instances[name].model.base_dim)))[0]

    def weighted(q):
        gamma, gamma_inv, det = fiber_metric(frame_at(chart, q, check_radius=False), g)
        return np.sqrt(det) * gamma_inv

    for y in random_ball(rng, 10, m, chart.radius_cutoff):
        fr = frame_at(chart, y)
        gamma, gamma_inv, det = fiber_metric(fr, g)
        div = np.einsum("bab->a", fd(weighted, y)) / np.sqrt(det)
        out = f_tensor_contractions(fr, gamma_inv, np.zeros((m, m)))
        assert np.abs(out.gamma_F + div).max() < 1e-6
        assert out.crosscheck_residual < 1e-10


def test_f_tensor_contraction_inputs(coset_only):
    fr = frame_at(coset_only.model.chart, [0.3, -0.4])
    out = f_tensor_contractions(fr, np.eye(2), np.zeros((2, 2)))
    assert np.all(out.connection_F == 0.0)
    with pytest.raises(DomainError):
        f_tensor_contractions(fr, np.array([[1.0, 0.2], [0.0, 1.0]]), np.zeros((2, 2)))


def test_fiber_metric_examples(flat_const, rng):
    chart = flat_const.model.chart
    g = np.diag([0.8, 1.25, 1.25, 1.25, 1.25])
    gamma, gamma_inv, det = fiber_metric(frame_at(chart, np.zeros(5)), np.eye(5))
    np.testing.assert_allclose(gamma, np.eye(5), atol=1e-15)
    for y in random_ball(rng, 20, 5, chart.radius_cutoff):
        fr = frame_at(chart, y)
        gamma, gamma_inv, det = fiber_metric(fr, g)
        np.testing.assert_allclose(gamma @ gamma_inv, np.eye(5), atol=1e-12)
        assert np.all(np.linalg.eigvalsh(gamma) > 0)
        assert det == pytest.approx(np.linalg.det(g) * np.linalg.det(fr.e_coframe) ** 2, rel=1e-10)
        assert det == pytest.approx(np.linalg.det(gamma), rel=1e-10)
        # block decomposition over the (khat, lbar) coordinates 0 and 1..4
        er = fr.e_recip
        blocks = er[:, :1] @ np.linalg.inv(g[:1, :1]) @ er[:, :1].T + er[:, 1:] @ np.linalg.inv(g[1:, 1:]) @ er[:, 1:].T
        np.testing.assert_allclose(gamma_inv, blocks, atol=1e-10)
    with pytest.raises(DomainError):
        fiber_metric(frame_at(chart, np.zeros(5)), -np.eye(5))


def test_recenter_preserves_group_element(flat_const, rng):
    chart = flat_const.model.chart
    spec = flat_const.spec
    for y in random_ball(rng, 10, 5, chart.radius_cutoff):
        B = group_exp(spec, rng.normal(size=8))
        y2, B2 = recenter(chart, y, B)
        assert np.all(y2 == 0)
        np.testing.assert_allclose(chart.element(y2) @ B2, chart.element(y) @ B, atol=1e-14)
