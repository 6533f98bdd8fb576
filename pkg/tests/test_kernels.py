import numpy as np
import pytest

from kkreduce import kernels
from kkreduce._kernels_py import series_terms
from kkreduce.coset_geometry import frame_batch

from conftest import random_ball

BACKENDS = kernels.available_backends()


@pytest.fixture
def restore_backend():
    active = kernels.backend()
    yield
    kernels.use_backend(active)


def test_compiled_backend_is_default_when_built():
    assert "python" in BACKENDS
    if "cython" in BACKENDS:
        assert kernels.backend() == "cython"


def test_unknown_backend_raises(restore_backend):
    with pytest.raises(ValueError, match="fortran"):
        kernels.use_backend("fortran")


def test_switching(restore_backend):
    for name in BACKENDS:
        kernels.use_backend(name)
        assert kernels.backend() == name


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
@pytest.mark.parametrize("name", ["coset_only", "hopf"])
def test_backends_agree(instances, name, rng, restore_backend):
    chart = instances[name].model.chart
    Y = np.concatenate([np.zeros((1, chart.coset_dim)),
                        random_ball(rng, 200, chart.coset_dim, chart.safe_radius)])
    out = {}
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        out[backend] = frame_batch(chart, Y)
    for a, b in zip(out["python"], out["cython"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_singular_points_and_empty_coset(coset_only, backend, restore_backend):
    kernels.use_backend(backend)
    _, recip, det = frame_batch(coset_only.model.chart, np.array([[np.pi, 0.0], [0.1, 0.2]]))
    assert abs(det[0]) < 1e-12
    assert np.all(np.isfinite(recip[1]))
    e, r, d = kernels.frame_batch(np.zeros((0, 3, 3)), np.zeros(0, dtype=int), np.zeros((4, 0)))
    assert e.shape == (4, 3, 0) and r.shape == (4, 0, 0)
    assert np.all(d == 1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_points_are_independent_of_the_batch(hopf, rng, backend, restore_backend):
    kernels.use_backend(backend)
    chart = hopf.model.chart
    Y = random_ball(rng, 20, 5, 3.0)
    whole = frame_batch(chart, Y)
    single = frame_batch(chart, Y[7:8])
    for a, b in zip(whole, single):
        assert np.array_equal(a[7:8], b)


def test_series_terms():
    assert series_terms(0.0) == 1
    assert series_terms(np.inf) == 120
    k = series_terms(3.0)
    from math import factorial

    assert 3.0 ** (k + 1) / factorial(k + 2) < 1.1e-16
    assert 3.0 ** k / factorial(k + 1) >= 1.1e-16
