import json

import numpy as np
import pytest

from kkreduce.config import (
    config_hash,
    config_path,
    encode_complex_matrices,
    load_algebra,
    load_instance,
    load_run_config,
    shipped_configs,
    shipped_instances,
    sparse_structure_constants,
)
from kkreduce.errors import ExpressionError, StructuralError


def _toml_value(v):
    return json.dumps(v)


def write_su2_instance(path, coset_only, *, f=None, base="[base]\nkind = \"point\"\n", extra=""):
    spec = coset_only.spec
    f = spec.structure_constants if f is None else f
    text = (
        'name = "tiny"\n'
        "[algebra]\n"
        "dim = 3\nrep_dim = 2\nh = [2]\nkhat = []\nlbar = [0, 1]\nsafe_radius = 2.5\n"
        f"structure_constants = {_toml_value(sparse_structure_constants(f))}\n"
        f"generators = {_toml_value(encode_complex_matrices(spec.generators))}\n"
        f"{base}\n"
        "[[irreps]]\nlabel = \"spin1\"\nkind = \"spin\"\nspin = 1\n"
        f"{extra}"
    )
    path.write_text(text)
    return path


def test_shipped_files():
    assert shipped_instances() == ["coset_only", "flat_const", "hopf", "su2_flat"]
    assert shipped_configs() == ["coset_only", "flat_const", "hopf", "su2_flat", "trivial"]


@pytest.mark.parametrize("name", ["coset_only", "flat_const", "hopf", "su2_flat", "trivial"])
def test_shipped_configs_load(name, tmp_path):
    cfg = load_run_config(name, out=str(tmp_path))
    model = cfg.instance.model
    assert cfg.x0.shape == (model.base_dim,)
    assert cfg.y0.shape == (model.coset_dim,)
    assert cfg.coefficients.truncation
    assert cfg.out_dir == tmp_path
    assert cfg.params.n_steps > 0


def test_shipped_instance_structure(instances):
    hopf = instances["hopf"]
    assert hopf.spec.h_idx == (0, 1, 2)
    assert hopf.spec.khat_idx == (7,)
    assert hopf.spec.lbar_idx == (3, 4, 5, 6)
    assert set(hopf.irreps) == {"fundamental", "adjoint", "trivial"}
    assert instances["coset_only"].model.base_dim == 0
    assert instances["su2_flat"].model.gmetric.is_constant is False


def test_complex_matrix_and_structure_constant_round_trip(tmp_path, coset_only):
    path = write_su2_instance(tmp_path / "tiny.toml", coset_only)
    inst = load_instance(path)
    np.testing.assert_array_equal(inst.spec.generators, coset_only.spec.generators)
    np.testing.assert_array_equal(inst.spec.structure_constants, coset_only.spec.structure_constants)
    assert inst.name == "tiny"
    assert inst.path == path


def test_sparse_structure_constants_keep_only_ordered_pairs(hopf):
    records = sparse_structure_constants(hopf.spec.structure_constants)
    assert all(a < b for _, a, b, _ in records)
    assert len(records) == 27  # 9 nonzero f_ABC triples, three upper indices each


def test_missing_files_raise():
    with pytest.raises(StructuralError, match="not found"):
        load_instance("no_such_instance")
    with pytest.raises(StructuralError, match="not found"):
        config_path("no/such/config.toml")


def test_schema_errors(tmp_path, coset_only):
    bad = tmp_path / "bad.toml"
    bad.write_text("[algebra]\ndim = 3\n")
    with pytest.raises(StructuralError, match="generators"):
        load_instance(bad)
    bad.write_text("not = [valid")
    with pytest.raises(StructuralError):
        load_instance(bad)
    path = write_su2_instance(tmp_path / "kind.toml", coset_only, base="[base]\nkind = \"torus\"\n")
    with pytest.raises(StructuralError, match="torus"):
        load_instance(path)
    path = write_su2_instance(tmp_path / "dup.toml", coset_only,
                              extra="[[irreps]]\nlabel = \"spin1\"\nkind = \"trivial\"\n")
    with pytest.raises(StructuralError, match="duplicate"):
        load_instance(path)


def test_load_algebra_of_an_inconsistent_instance(tmp_path, coset_only):
    f = coset_only.spec.structure_constants.copy()
    f[2, 0, 1], f[2, 1, 0] = -1.0, 1.0
    path = write_su2_instance(tmp_path / "flipped.toml", coset_only, f=f)
    spec = load_algebra(path)
    assert spec.structure_constants[2, 0, 1] == -1.0
    with pytest.raises(StructuralError):
        load_instance(path)  # the spin irrep no longer satisfies the commutation relations


def test_expression_tables(tmp_path, coset_only):
    base = '[base]\nkind = "expressions"\nmetric = [["1 + x1**2", "0"], ["0", "1"]]\n'
    extra = '[fiber_metric]\nmatrix = [["2 + cos(x2)", "0"], ["0", "2 + cos(x2)"]]\n'
    inst = load_instance(write_su2_instance(tmp_path / "expr.toml", coset_only, base=base, extra=extra))
    X = np.array([[1.0, np.pi]])
    np.testing.assert_allclose(inst.model.base.h(X)[0], [[2.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(inst.model.gmetric.g(X)[0], np.eye(2))
    bad = '[base]\nkind = "expressions"\nmetric = [["1 + __import__(\'os\')", "0"], ["0", "1"]]\n'
    with pytest.raises(ExpressionError):
        load_instance(write_su2_instance(tmp_path / "evil.toml", coset_only, base=bad))


def _write_run(tmp_path, body):
    path = tmp_path / "run.toml"
    path.write_text('[run]\ninstance = "coset_only"\n' + body)
    return path


OBSERVABLE = """
[observable]
truncation = ["spin1"]
[[observable.coefficients]]
irrep = "spin1"
values = [["1"], ["0"], ["0"]]
"""


def test_run_config_overrides_and_hash(tmp_path, monkeypatch):
    monkeypatch.delenv("KKREDUCE_OUTPUT_DIR", raising=False)
    path = _write_run(tmp_path, "[simulation]\nt_b = 0.5\ndt = 0.01\nn_paths = 10\nseed = 3\n" + OBSERVABLE)
    a = load_run_config(path)
    assert a.hash == load_run_config(path).hash
    b = load_run_config(path, seed=4, n_paths=20, dt=0.005, unsimplified_drift=True, alt_ordering=True)
    assert (b.params.seed, b.params.n_paths, b.params.dt) == (4, 20, 0.005)
    assert b.drift == "unsimplified" and b.ordering == "column"
    assert a.drift == "simplified" and a.ordering == "row"
    assert a.hash != b.hash
    assert str(a.out_dir) == "results"
    monkeypatch.setenv("KKREDUCE_OUTPUT_DIR", str(tmp_path / "env"))
    assert load_run_config(path).out_dir == tmp_path / "env"
    assert load_run_config(path, out=str(tmp_path / "flag")).out_dir == tmp_path / "flag"


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_run_config_errors(tmp_path):
    path = _write_run(tmp_path, OBSERVABLE.replace('truncation = ["spin1"]', 'truncation = ["spin2"]'))
    with pytest.raises(StructuralError, match="truncation"):
        load_run_config(path)
    path = _write_run(tmp_path, OBSERVABLE.replace('"spin1"', '"spin7"'))
    with pytest.raises(StructuralError, match="spin7"):
        load_run_config(path)
    path = _write_run(tmp_path, "[simulation]\nwarp = 9\n" + OBSERVABLE)
    with pytest.raises(StructuralError, match="simulation"):
        load_run_config(path)
    path = _write_run(tmp_path, "[initial]\ny0 = [0.1]\n" + OBSERVABLE)
    with pytest.raises(StructuralError, match="initial"):
        load_run_config(path)
    path = _write_run(tmp_path, "[simulation]\ndt = 0.3\n" + OBSERVABLE)
    with pytest.raises(StructuralError, match="integer"):
        load_run_config(path)
    path = _write_run(tmp_path, OBSERVABLE.replace('[["1"], ["0"], ["0"]]', '[["1"], ["0"]]'))
    with pytest.raises(StructuralError, match="3x1"):
        load_run_config(path)
