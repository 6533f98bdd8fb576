import numpy as np
import pytest
from scipy.linalg import expm

from kkreduce.bundle_model import BundleModel, ConnectionField
from kkreduce.checks import generator_consistency
from kkreduce.errors import MetadataMismatch, StructuralError
from kkreduce.filtering import (
    FilterMatrix,
    ReducedGenerator,
    filter_step,
    ordered_exponential,
    reduced_generator_apply,
    spherical_leakage,
)
from kkreduce.representation import CoefficientField, coset_rep_matrices
from kkreduce.sde import SimulationParams, simulate_base


def test_spin1_drift_matrix(coset_only):
    gen = ReducedGenerator(coset_only.model, coset_only.irrep("spin1"), SimulationParams())
    np.testing.assert_allclose(gen.drift_matrix(np.zeros((1, 0)))[0], np.diag([-1.0, -0.5, -0.5]), atol=1e-14)
    scaled = ReducedGenerator(coset_only.model, coset_only.irrep("spin1"), SimulationParams(mu=2.0, kappa=0.5))
    np.testing.assert_allclose(scaled.drift_matrix(np.zeros((1, 0)))[0], 2.0 * np.diag([-1.0, -0.5, -0.5]),
                               atol=1e-14)


def test_drift_matrix_brute_force(coset_only):
    irrep = coset_only.irrep("spin2")
    gen = ReducedGenerator(coset_only.model, irrep, SimulationParams())
    J = irrep.J
    expected = 0.5 * (J[0] @ J[0] + J[1] @ J[1])
    np.testing.assert_allclose(gen.drift_matrix(np.zeros((1, 0)))[0], expected, atol=1e-14)
    # -(l(l+1) - m^2)/2 with m = 0, 2, 1, -1, -2
    np.testing.assert_allclose(np.diag(expected).real, [-3.0, -1.0, -2.5, -2.5, -1.0], atol=1e-14)


def test_point_base_filter_is_deterministic(coset_only):
    params = SimulationParams(t_b=1.0, dt=1e-3, n_paths=3, seed=1)
    gen = ReducedGenerator(coset_only.model, coset_only.irrep("spin1"), params)
    paths = simulate_base(coset_only.model, params, np.zeros(0))
    fm = ordered_exponential(gen, paths)
    lam = gen.drift_matrix(np.zeros((1, 0)))[0]
    euler = np.linalg.matrix_power(np.eye(3) + lam * params.dt, params.n_steps)
    for M in fm.M:
        np.testing.assert_allclose(M, euler, atol=1e-12)
        np.testing.assert_allclose(M, expm(lam), atol=1e-3)
    assert fm.t == pytest.approx(1.0)


def test_flat_const_one_step_by_hand(flat_const):
    model = flat_const.model
    irrep = flat_const.irrep("fundamental")
    params = SimulationParams(mu=1.1, kappa=0.9, dt=0.01)
    gen = ReducedGenerator(model, irrep, params)
    x = np.array([0.1, 0.2])
    dW = np.array([0.03, -0.05])
    dt = 0.01
    J = irrep.J
    coset = [7, 3, 4, 5, 6]
    g_inv = np.diag([1 / 0.8, 0.8, 0.8, 0.8, 0.8])
    A = np.array([0.6 * x[0] - 0.4 * x[1] + 0.3, 0.4 * x[0] + 0.5 * x[1] - 0.2])
    cas = sum(g_inv[a, b] * J[coset[a]] @ J[coset[b]] for a in range(5) for b in range(5))
    lam = 0.5 * params.mu2kappa * (cas - 1.1 * J[7] + (A @ A) * J[7] @ J[7])
    theta = [-params.sigma * A[n] * J[7] for n in range(2)]
    F = np.eye(3) + lam * dt + theta[0] * dW[0] + theta[1] * dW[1]
    M0 = np.eye(3) + 0.1j * np.arange(9).reshape(3, 3)
    np.testing.assert_allclose(gen.drift_matrix(x)[0], lam, atol=1e-7)
    np.testing.assert_allclose(gen.channel_noise_matrices(x)[0], np.array(theta), atol=1e-14)
    got = filter_step(gen, M0, x, dW, dt)
    np.testing.assert_allclose(got[0], F @ M0, atol=1e-9)
    got_col = filter_step(gen, M0, x, dW, dt, ordering="column")
    np.testing.assert_allclose(got_col[0], M0 @ F, atol=1e-9)


def test_expected_filter_matches_euler_product_for_constant_connection(flat_const):
    m = flat_const.model
    conn = ConnectionField.from_expressions([["0.3", "-0.2"]], 2)
    model = BundleModel(m.spec, m.chart, m.base, conn, m.gmetric)
    params = SimulationParams(t_b=0.5, dt=0.01, n_paths=20000, seed=21)
    gen = ReducedGenerator(model, flat_const.irrep("fundamental"), params)
    fm = ordered_exponential(gen, simulate_base(model, params, [0.0, 0.0]))
    lam = gen.drift_matrix(np.zeros(2))[0]
    # independent increments: E[prod (I + Lambda dt + Theta dW)] = (I + Lambda dt)^K
    expected = np.linalg.matrix_power(np.eye(3) + lam * params.dt, params.n_steps)
    mean = fm.M.mean(axis=0)
    se = fm.M.std(axis=0) / np.sqrt(params.n_paths)
    assert np.all(np.abs(mean - expected) <= 4 * se + 1e-12)
    np.testing.assert_allclose(expected, expm(0.5 * lam), atol=5e-3)


def test_filter_is_linear_in_the_initial_matrix(hopf, rng):
    params = SimulationParams(t_b=0.05, dt=0.01, n_paths=10, seed=2)
    gen = ReducedGenerator(hopf.model, hopf.irrep("fundamental"), params)
    paths = simulate_base(hopf.model, params, [0.3, -0.2])
    a, b = rng.normal(size=(2, 3, 3)) + 1j * rng.normal(size=(2, 3, 3))
    Ma = ordered_exponential(gen, paths, M0=a).M
    Mb = ordered_exponential(gen, paths, M0=b).M
    Mab = ordered_exponential(gen, paths, M0=2.0 * a - b).M
    np.testing.assert_allclose(Mab, 2.0 * Ma - Mb, atol=1e-12)
    N = ordered_exponential(gen, paths).M
    np.testing.assert_allclose(Ma, N @ a, atol=1e-12)


@pytest.mark.parametrize("name", ["flat_const", "hopf"])
def test_spherical_rows_do_not_leak(instances, name):
    inst = instances[name]
    params = SimulationParams(t_b=0.2, dt=0.01, n_paths=50, seed=4)
    gen = ReducedGenerator(inst.model, inst.irrep("fundamental"), params)
    fm = ordered_exponential(gen, simulate_base(inst.model, params, [0.3, -0.2]))
    assert spherical_leakage(fm.M, 1) < 1e-14
    assert spherical_leakage(np.eye(3)[None] + np.eye(3, k=1)[None], 1) == 1.0


def test_readout_matches_trace(hopf, rng):
    irrep = hopf.irrep("fundamental")
    y0 = np.array([-0.2, 0.3, 0.2, -0.1, 0.3])
    D0 = coset_rep_matrices(irrep, hopf.model.chart, y0[None])[0]
    M = rng.normal(size=(4, 3, 3)) + 1j * rng.normal(size=(4, 3, 3))
    C = rng.normal(size=(4, 3, 1)) + 0j
    row = FilterMatrix("fundamental", M, 1.0, "row", 1).readout(D0, C)
    col = FilterMatrix("fundamental", M, 1.0, "column", 1).readout(D0, C)
    np.testing.assert_allclose(row, [np.trace((M[p] @ D0)[:1] @ C[p]) for p in range(4)], atol=1e-13)
    np.testing.assert_allclose(col, [np.trace((D0 @ M[p])[:1] @ C[p]) for p in range(4)], atol=1e-13)


def test_shared_noise_contract(hopf):
    params = SimulationParams(t_b=0.02, dt=0.01, n_paths=4, seed=5)
    gen = ReducedGenerator(hopf.model, hopf.irrep("fundamental"), params)
    paths = simulate_base(hopf.model, params, [0.3, -0.2])
    ordered_exponential(gen, paths, expected_seed=5)
    with pytest.raises(MetadataMismatch):
        ordered_exponential(gen, paths, expected_seed=6)
    other = ReducedGenerator(hopf.model, hopf.irrep("fundamental"), params.replace(dt=0.005))
    with pytest.raises(MetadataMismatch):
        ordered_exponential(other, paths)


def test_shape_and_option_errors(hopf, coset_only):
    params = SimulationParams()
    gen = ReducedGenerator(hopf.model, hopf.irrep("fundamental"), params)
    with pytest.raises(StructuralError):
        filter_step(gen, np.zeros((2, 4, 4)), np.zeros((2, 2)), np.zeros((2, 2)), 0.01)
    with pytest.raises(ValueError):
        filter_step(gen, np.eye(3), np.zeros((1, 2)), np.zeros((1, 2)), 0.01, ordering="diagonal")
    with pytest.raises(StructuralError):
        ReducedGenerator(hopf.model, coset_only.irrep("spin1"), params)
    with pytest.raises(StructuralError):
        reduced_generator_apply(gen, CoefficientField(hopf.irrep("adjoint"), np.ones((8, 1)), 2), np.zeros(2))


def test_reduced_generator_on_zonal_function(coset_only):
    gen = ReducedGenerator(coset_only.model, coset_only.irrep("spin1"), SimulationParams())
    coeff = CoefficientField(coset_only.irrep("spin1"), np.array([[1.0], [0.0], [0.0]]), 0)
    out = reduced_generator_apply(gen, coeff, np.zeros(0))
    # the l = 1 harmonic is an eigenfunction of 1/2 Delta with eigenvalue -l(l+1)/2
    np.testing.assert_allclose(out[0], [[-1.0], [0.0], [0.0]], atol=1e-14)


@pytest.mark.parametrize("name,label", [("flat_const", "fundamental"), ("hopf", "fundamental"),
                                        ("hopf", "adjoint"), ("su2_flat", "spin1"), ("coset_only", "spin2")])
def test_reduced_generator_matches_bundle_laplacian(instances, name, label):
    inst = instances[name]
    res = generator_consistency(inst.model, inst.irrep(label), n_points=8, seed=1)
    assert res.passed, res


def test_column_ordering_fails_generator_consistency(flat_const):
    res = generator_consistency(flat_const.model, flat_const.irrep("fundamental"), n_points=8, seed=1,
                                ordering="column")
    assert not res.passed
    assert res.residual > 0.05
