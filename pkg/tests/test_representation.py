import numpy as np
import pytest

from kkreduce.checks import representation_suite
from kkreduce.errors import DomainError, StructuralError
from kkreduce.lie_algebra import adjoint_matrix, group_exp
from kkreduce.representation import (
    CoefficientField,
    CosetQuadrature,
    PeterWeylCoefficients,
    adjoint_irrep,
    derivative_identity_check,
    expand_on_coset,
    faithful_irrep,
    make_irrep,
    rep_matrix,
    spin_irrep,
    synthesize_initial,
    trivial_irrep,
)
from kkreduce.representation import coset_rep_matrices

from conftest import random_ball


def _irreps(instance):
    return [instance.irrep(label) for label in sorted(instance.irreps)]


@pytest.mark.parametrize("name", ["coset_only", "hopf"])
def test_commutation_and_unitarity(instances, name):
    inst = instances[name]
    f = inst.spec.structure_constants
    for irrep in _irreps(inst):
        J = irrep.J
        comm = np.einsum("aij,bjk->abik", J, J) - np.einsum("bij,ajk->abik", J, J)
        np.testing.assert_allclose(comm, np.einsum("cab,cij->abij", f, J), atol=1e-12)
        np.testing.assert_allclose(J, -np.conj(np.transpose(J, (0, 2, 1))), atol=1e-14)
        D = rep_matrix(irrep, np.array([0.3, -1.2, 0.7, 0.1, 0.5, -0.4, 0.9, 0.2])[: inst.spec.dim])
        np.testing.assert_allclose(D @ D.conj().T, np.eye(irrep.dim), atol=1e-12)


def test_spin1_rotation_about_q3(coset_only):
    spin1 = coset_only.irrep("spin1")
    assert spin1.basis_labels == (0, 1, -1)
    for theta in (0.0, 0.4, np.pi / 2, 2.5):
        D = rep_matrix(spin1, [0.0, 0.0, theta])
        expected = np.diag(np.exp(-1j * np.array(spin1.basis_labels) * theta))
        np.testing.assert_allclose(D, expected, atol=1e-14)


def test_spin_basis_and_spherical_rows(coset_only):
    spec = coset_only.spec
    assert spin_irrep(spec, 2).basis_labels == (0, 2, 1, -1, -2)
    assert spin_irrep(spec, 1).n_spherical == 1
    assert spin_irrep(spec, 2).n_spherical == 1
    assert spin_irrep(spec, "1/2").n_spherical == 0
    assert spin_irrep(spec, "3/2").basis_labels == (1.5, 0.5, -0.5, -1.5)
    assert trivial_irrep(spec).n_spherical == 1
    with pytest.raises(StructuralError):
        spin_irrep(spec, -1)
    with pytest.raises(StructuralError):
        spin_irrep(spec, "1/3")


def test_su3_spherical_multiplicities(hopf):
    assert hopf.irrep("fundamental").n_spherical == 1
    assert adjoint_irrep(hopf.spec).n_spherical == 1
    assert faithful_irrep(hopf.spec).n_spherical == 1


def test_half_integer_spin_cannot_enter_expansion(coset_only):
    half = spin_irrep(coset_only.spec, "1/2")
    with pytest.raises(StructuralError, match="no spherical rows"):
        CoefficientField(half, np.zeros((2, 0)), 0)


def test_casimir(coset_only):
    for l in (1, 2, 3):
        irrep = spin_irrep(coset_only.spec, l)
        cas = np.einsum("aij,ajk->ik", irrep.J, irrep.J)
        np.testing.assert_allclose(cas, -l * (l + 1) * np.eye(2 * l + 1), atol=1e-12)


def test_coset_generator_square_spin1(coset_only):
    spin1 = coset_only.irrep("spin1")
    s = spin1.J[0] @ spin1.J[0] + spin1.J[1] @ spin1.J[1]
    # -(l(l+1) - m^2) for m = 0, 1, -1
    np.testing.assert_allclose(s, np.diag([-2.0, -1.0, -1.0]), atol=1e-14)


@pytest.mark.parametrize("name", ["coset_only", "hopf"])
def test_spherical_rows_invariant_under_isotropy(instances, name, rng):
    inst = instances[name]
    spec = inst.spec
    for irrep in _irreps(inst):
        V = irrep.spherical_rows
        for _ in range(3):
            c = np.zeros(spec.dim)
            c[list(spec.h_idx)] = rng.normal(size=len(spec.h_idx))
            c_g = rng.normal(size=spec.dim) * 0.5
            Dh = rep_matrix(irrep, c)
            Dg = rep_matrix(irrep, c_g)
            np.testing.assert_allclose(V @ Dh @ Dg, V @ Dg, atol=1e-12)


def test_homomorphism(hopf, rng):
    spec = hopf.spec
    for irrep in _irreps(hopf):
        a, b = rng.normal(size=(2, spec.dim)) * 0.3
        gab = group_exp(spec, a) @ group_exp(spec, b)
        np.testing.assert_allclose(rep_matrix(irrep, a) @ rep_matrix(irrep, b),
                                   rep_matrix(irrep, gab, spec), atol=1e-11)


def test_rep_matrix_validation(coset_only):
    spin1 = coset_only.irrep("spin1")
    with pytest.raises(StructuralError):
        rep_matrix(spin1, [0.1, 0.2])
    with pytest.raises(StructuralError):
        rep_matrix(spin1, np.eye(2))
    with pytest.raises(DomainError):
        rep_matrix(spin1, [np.nan, 0.0, 0.0])


def test_make_irrep_rejects_bad_generators(coset_only):
    spec = coset_only.spec
    J = spin_irrep(spec, 1).J.copy()
    with pytest.raises(StructuralError, match="commutation"):
        make_irrep("bad", 2.0 * J, spec)
    with pytest.raises(StructuralError, match="anti-Hermitian"):
        S = np.array([[1.0, 0.3, 0.0], [0.0, 1.0, 0.0], [0.2, 0.0, 2.0]])
        make_irrep("bad", S @ J @ np.linalg.inv(S), spec)
    with pytest.raises(StructuralError):
        make_irrep("bad", J[:2], spec)


@pytest.mark.parametrize("name", ["coset_only", "hopf"])
def test_derivative_identity(instances, name, rng):
    inst = instances[name]
    chart = inst.model.chart
    points = np.concatenate([np.zeros((1, chart.coset_dim)),
                             random_ball(rng, 4, chart.coset_dim, 0.8 * chart.radius_cutoff)])
    for irrep in _irreps(inst):
        for y in points:
            assert derivative_identity_check(irrep, chart, y, rows="spherical") < 1e-6
            assert derivative_identity_check(irrep, chart, y, rows="full") < 1e-6
    with pytest.raises(ValueError):
        derivative_identity_check(inst.irrep("trivial"), chart, points[0], rows="columns")


@pytest.mark.parametrize("name", ["coset_only", "hopf"])
def test_representation_suite(instances, name):
    inst = instances[name]
    for irrep in _irreps(inst):
        failed = [r for r in representation_suite(irrep, inst.model.chart, 10, 1) if not r.passed]
        assert not failed, failed


def test_synthesize_trivial_is_constant(coset_only, rng):
    triv = coset_only.irrep("trivial")
    coeffs = PeterWeylCoefficients((CoefficientField(triv, np.array([[2.5 - 1j]]), 0),))
    for y in random_ball(rng, 5, 2, 2.0):
        assert synthesize_initial(coeffs, np.zeros(0), y, coset_only.model.chart) == pytest.approx(2.5 - 1j)


def test_synthesize_spin1_zonal_is_adjoint_entry(coset_only, rng):
    # the m = 0 row of D^1 is the adjoint action on Q3: D_00(L_y) = Ad(L_y)_{33}
    spec = coset_only.spec
    spin1 = coset_only.irrep("spin1")
    coeffs = PeterWeylCoefficients((CoefficientField(spin1, np.array([[1.0], [0.0], [0.0]]), 0),))
    for y in random_ball(rng, 6, 2, 2.0):
        expected = adjoint_matrix(spec, group_exp(spec, spec.embed_coset(y[None])[0]))[2, 2]
        got = synthesize_initial(coeffs, np.zeros(0), y, coset_only.model.chart)
        assert got.real == pytest.approx(expected, abs=1e-13)
        assert abs(got.imag) < 1e-13


def test_synthesize_is_linear(flat_const, rng):
    fund = flat_const.irrep("fundamental")
    a, b = rng.normal(size=(2, 3, 1)) + 1j * rng.normal(size=(2, 3, 1))
    ca = PeterWeylCoefficients((CoefficientField(fund, a, 2),))
    cb = PeterWeylCoefficients((CoefficientField(fund, b, 2),))
    y = np.array([0.3, -0.2, 0.1, 0.4, 0.2])
    chart = flat_const.model.chart
    total = synthesize_initial(ca + cb, [0.1, 0.2], y, chart)
    assert total == pytest.approx(synthesize_initial(ca, [0.1, 0.2], y, chart)
                                  + synthesize_initial(cb, [0.1, 0.2], y, chart), abs=1e-13)


def test_coefficient_shape_errors(flat_const):
    fund = flat_const.irrep("fundamental")
    with pytest.raises(StructuralError, match="3x1"):
        CoefficientField(fund, [["1", "0"], ["0", "0"], ["0", "0"]], 2)
    field = CoefficientField(fund, [["x1"], ["0"], ["1j"]], 2)
    with pytest.raises(StructuralError, match="constant"):
        PeterWeylCoefficients((field,)) + PeterWeylCoefficients((field,))
    with pytest.raises(StructuralError, match="duplicate"):
        PeterWeylCoefficients((field, field))


@pytest.fixture(scope="module")
def sphere_quadrature():
    from kkreduce.config import load_instance

    inst = load_instance("coset_only")
    return inst, CosetQuadrature(inst.model.chart, np.pi, 24, 24)


def test_quadrature_volume(sphere_quadrature):
    _, quad = sphere_quadrature
    assert quad.volume == pytest.approx(4 * np.pi, rel=1e-12)


def test_expansion_round_trip(sphere_quadrature):
    inst, quad = sphere_quadrature
    irreps = [inst.irrep("trivial"), inst.irrep("spin1"), inst.irrep("spin2")]
    R1 = coset_rep_matrices(inst.irrep("spin1"), quad.chart, quad.nodes)
    R2 = coset_rep_matrices(inst.irrep("spin2"), quad.chart, quad.nodes)
    samples = 0.5 + 2.0 * R1[:, 0, 1] - (0.3 + 0.2j) * R2[:, 0, 4]
    res = expand_on_coset(samples, quad, irreps)
    assert res.aliasing_residual < 1e-12
    c = {f.label: f(np.zeros((1, 0)))[0] for f in res.coefficients.fields}
    assert c["trivial"][0, 0] == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(c["spin1"][:, 0], [0, 2.0, 0], atol=1e-12)
    np.testing.assert_allclose(c["spin2"][:, 0], [0, 0, 0, 0, -0.3 - 0.2j], atol=1e-12)


def test_expansion_of_constant(sphere_quadrature):
    inst, quad = sphere_quadrature
    res = expand_on_coset(np.full(quad.nodes.shape[0], 3.0), quad, [inst.irrep("trivial"), inst.irrep("spin1")])
    assert res.aliasing_residual < 1e-12
    assert res.coefficients.fields[0](np.zeros((1, 0)))[0, 0, 0] == pytest.approx(3.0)


def test_expansion_reports_aliasing(sphere_quadrature):
    inst, quad = sphere_quadrature
    samples = np.exp(quad.nodes[:, 0])  # not a function on the orbit
    res = expand_on_coset(samples, quad, [inst.irrep("trivial"), inst.irrep("spin1")])
    assert res.aliasing_residual > 0.1
    with pytest.raises(StructuralError):
        expand_on_coset(samples[:-1], quad, [inst.irrep("trivial")])
