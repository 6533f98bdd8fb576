"""Instance files and run configurations (TOML).

Instance file
-------------
An instance fixes the algebra, its decomposition, the bundle geometry and the
available irreps::

    name = "flat_const"
    description = "..."

    [algebra]
    name = "su3"
    dim = 8
    rep_dim = 3
    h = [0, 1, 2]              # 0-based generator indices of the isotropy algebra
    khat = [7]                 # structure-group directions
    lbar = [3, 4, 5, 6]        # remaining coset directions
    safe_radius = 3.5          # exponential chart is trusted for |y| < 0.9 * safe_radius
    # sparse structure constants f^C_{AB} as [C, A, B, value] with A < B
    # (the B < A entries follow by antisymmetry)
    structure_constants = [[2, 0, 1, 1.0], ...]
    # generators: dim matrices, row-major, every entry a [re, im] pair
    generators = [[[[0.0, 0.0], [0.0, -0.5], ...], ...], ...]
    # optional: inner_product = [[...]] (defaults to the normalized negative Killing form)

    [base]                     # kind = "point" | "flat" | "round_sphere" | "expressions"
    kind = "flat"
    dim = 2
    domain = [[-6.0, 6.0], [-6.0, 6.0]]
    # radius = 1.0                      (round_sphere)
    # metric = [["1 + x1**2", "0"], ...]  (expressions)

    [connection]               # kind = "zero" | "monopole" | "expressions"
    kind = "expressions"
    components = [["0.6*x1 - 0.4*x2 + 0.3", "0.4*x1 + 0.5*x2 - 0.2"]]
    # charge = 1.0                      (monopole)

    [fiber_metric]             # coset_dim x coset_dim table of numbers or expressions
    matrix = [[0.8, 0, 0, 0, 0], ...]

    [[irreps]]                 # kind = "spin" | "faithful" | "adjoint" | "trivial" | "matrices"
    label = "fundamental"
    kind = "matrices"
    matrices = [...]           # dim matrices in the [re, im] layout (for kind = "matrices")
    # spin = 1                          (for kind = "spin", su(2) only)

Expressions use the base coordinates ``x1 .. xn``, see :mod:`kkreduce.expressions`.

Run configuration
-----------------
::

    [run]
    instance = "flat_const.toml"     # relative to this file, or a shipped instance name
    out = "results"                  # output directory

    [simulation]
    mu = 1.0
    kappa = 1.0
    mass = 1.0
    t_a = 0.0
    t_b = 0.5
    dt = 1e-3
    n_paths = 10000
    seed = 20240611

    [initial]
    x0 = [0.1, 0.2]
    y0 = [0.3, -0.2, 0.1, 0.4, 0.2]

    [observable]
    truncation = ["fundamental"]
    record_times = [0.25, 0.5]           # optional decay-curve times
    [[observable.coefficients]]
    irrep = "fundamental"
    values = [["0.5 + 0.3*x1"], ["0.4*x2 - 0.2j"], ["1 + 0.2*x1*x2"]]

    [potential]                           # optional
    expression = "0.1*x1**2"

    [thresholds]
    z = 3.0
    generator_points = 20
    geometry_points = 100

    [flags]
    unsimplified_drift = false
    alt_ordering = false
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .bundle_model import BaseChart, BundleModel, ConnectionField, HorizontalAlgebraMetric
from .coset_geometry import CosetChart
from .errors import StructuralError
from .estimator import Potential
from .lie_algebra import LieAlgebraSpec
from .representation import (
    CoefficientField,
    IrrepSpec,
    PeterWeylCoefficients,
    adjoint_irrep,
    faithful_irrep,
    make_irrep,
    spin_irrep,
    trivial_irrep,
)
from .sde import SimulationParams

__all__ = [
    "Instance",
    "RunConfig",
    "config_hash",
    "config_path",
    "instance_path",
    "load_algebra",
    "load_instance",
    "load_run_config",
    "shipped_configs",
    "shipped_instances",
]

OUTPUT_DIR_ENV = "KKREDUCE_OUTPUT_DIR"


def _read_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise StructuralError(f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise StructuralError(f"{path}: invalid TOML ({exc})") from None


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise StructuralError(f"missing key {key!r} in [{where}]")
    return table[key]


def _complex_matrices(data, n: int, what: str) -> np.ndarray:
    """Parse a list of matrices written as rows of ``[re, im]`` pairs."""
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError):
        raise StructuralError(f"{what}: matrices must be nested lists of [re, im] pairs") from None
    if arr.ndim != 4 or arr.shape[0] != n or arr.shape[1] != arr.shape[2] or arr.shape[3] != 2:
        raise StructuralError(f"{what}: expected {n} square matrices of [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_complex_matrices(mats) -> list:
    """Inverse of the ``[re, im]`` matrix layout (used to write instance files)."""
    mats = np.asarray(mats, dtype=complex)
    return [[[[float(v.real), float(v.imag)] for v in row] for row in m] for m in mats]


def _structure_constants(records, n: int) -> np.ndarray:
    f = np.zeros((n, n, n))
    for rec in records:
        if len(rec) != 4:
            raise StructuralError(f"structure-constant record {rec!r} is not [C, A, B, value]")
        c, a, b = (int(v) for v in rec[:3])
        if not all(0 <= i < n for i in (a, b, c)):
            raise StructuralError(f"structure-constant record {rec!r} has an index outside 0..{n - 1}")
        if a == b:
            raise StructuralError(f"structure-constant record {rec!r} has A == B")
        f[c, a, b] = float(rec[3])
        f[c, b, a] = -float(rec[3])
    return f


def sparse_structure_constants(f: np.ndarray, tol: float = 0.0) -> list:
    """``[C, A, B, value]`` records with ``A < B`` (used to write instance files)."""
    n = f.shape[0]
    return [[c, a, b, float(f[c, a, b])] for c in range(n) for a in range(n) for b in range(a + 1, n)
            if abs(f[c, a, b]) > tol]


@dataclass(frozen=True, eq=False)
class Instance:
    """A loaded instance: algebra, chart, bundle model and irreps."""

    name: str
    description: str
    spec: LieAlgebraSpec
    model: BundleModel
    irreps: dict
    path: Path | None = None
    raw: dict = field(default_factory=dict)

    def irrep(self, label: str) -> IrrepSpec:
        try:
            return self.irreps[label]
        except KeyError:
            raise StructuralError(
                f"irrep {label!r} is not defined in instance {self.name!r}; available: {sorted(self.irreps)}"
            ) from None


def shipped_instances() -> list[str]:
    """Names of the instances shipped with the package."""
    root = resources.files("kkreduce") / "data" / "instances"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def instance_path(name_or_path, relative_to: Path | None = None) -> Path:
    """Resolve an instance reference: a file path, or the name of a shipped instance."""
    p = Path(name_or_path)
    candidates = [p] if p.is_absolute() else ([relative_to / p] if relative_to else []) + [p]
    for c in candidates:
        if c.is_file():
            return c
    name = p.name[:-5] if p.name.endswith(".toml") else p.name
    shipped = resources.files("kkreduce") / "data" / "instances" / f"{name}.toml"
    if shipped.is_file():
        return Path(str(shipped))
    raise StructuralError(f"instance file not found: {name_or_path}")


def config_path(name_or_path) -> Path:
    """Resolve a run configuration: a file path, or the name of a shipped configuration."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    name = p.name[:-5] if p.name.endswith(".toml") else p.name
    shipped = resources.files("kkreduce") / "data" / "configs" / f"{name}.toml"
    if not p.parent.parts and shipped.is_file():
        return Path(str(shipped))
    raise StructuralError(f"configuration file not found: {name_or_path}")


def shipped_configs() -> list[str]:
    """Names of the run configurations bundled with the package."""
    root = resources.files("kkreduce") / "data" / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _build_spec(alg: dict) -> tuple[LieAlgebraSpec, float]:
    n = int(_require(alg, "dim", "algebra"))
    gens = _complex_matrices(_require(alg, "generators", "algebra"), n, "[algebra] generators")
    if "rep_dim" in alg and gens.shape[1] != int(alg["rep_dim"]):
        raise StructuralError(f"[algebra] rep_dim = {alg['rep_dim']} but generators are {gens.shape[1]}x{gens.shape[1]}")
    f = _structure_constants(_require(alg, "structure_constants", "algebra"), n)
    ip = alg.get("inner_product")
    spec = LieAlgebraSpec(
        structure_constants=f,
        generators=gens,
        h_idx=tuple(_require(alg, "h", "algebra")),
        khat_idx=tuple(alg.get("khat", ())),
        lbar_idx=tuple(_require(alg, "lbar", "algebra")),
        inner_product=None if ip is None else np.array(ip, dtype=float),
        name=str(alg.get("name", "")),
    )
    radius = float(_require(alg, "safe_radius", "algebra"))
    return spec, radius


def _build_base(base: dict) -> BaseChart:
    kind = base.get("kind", "flat")
    dim = int(base.get("dim", 0 if kind == "point" else 2))
    domain = base.get("domain")
    if kind == "point":
        return BaseChart.point()
    if kind == "flat":
        return BaseChart.flat(dim, domain)
    if kind == "round_sphere":
        return BaseChart.round_sphere(float(base.get("radius", 1.0)), domain)
    if kind == "expressions":
        return BaseChart.from_expressions(_require(base, "metric", "base"), domain)
    raise StructuralError(f"unknown [base] kind {kind!r}")


def _build_connection(conn: dict, nk: int, nb: int) -> ConnectionField:
    kind = conn.get("kind", "zero")
    if kind == "zero":
        return ConnectionField.zero(nk, nb)
    if kind == "monopole":
        return ConnectionField.monopole(float(conn.get("charge", 1.0)))
    if kind == "expressions":
        return ConnectionField.from_expressions(_require(conn, "components", "connection"), nb)
    raise StructuralError(f"unknown [connection] kind {kind!r}")


def _build_irrep(entry: dict, spec: LieAlgebraSpec) -> IrrepSpec:
    label = str(_require(entry, "label", "irreps"))
    kind = entry.get("kind", "matrices")
    if kind == "spin":
        return spin_irrep(spec, entry.get("spin", 1), label)
    if kind == "faithful":
        return faithful_irrep(spec, label)
    if kind == "adjoint":
        return adjoint_irrep(spec, label)
    if kind == "trivial":
        return trivial_irrep(spec, label)
    if kind == "matrices":
        J = _complex_matrices(_require(entry, "matrices", "irreps"), spec.dim, f"irrep {label!r}")
        return make_irrep(label, J, spec)
    raise StructuralError(f"unknown irrep kind {kind!r}")


def load_algebra(path) -> LieAlgebraSpec:
    """Only the ``[algebra]`` table of an instance (used to diagnose broken instances)."""
    data = _read_toml(instance_path(path))
    return _build_spec(_require(data, "algebra", "<root>"))[0]


def load_instance(path) -> Instance:
    """Load and assemble an instance file (or shipped instance by name)."""
    path = instance_path(path)
    data = _read_toml(path)
    spec, radius = _build_spec(_require(data, "algebra", "<root>"))
    chart = CosetChart(spec, radius)
    base = _build_base(data.get("base", {"kind": "point"}))
    conn = _build_connection(data.get("connection", {}), len(spec.khat_idx), base.dim)
    fm = data.get("fiber_metric", {})
    matrix = fm.get("matrix", np.eye(spec.coset_dim).tolist())
    gmet = HorizontalAlgebraMetric.from_expressions(matrix, base.dim)
    name = str(data.get("name", path.stem))
    model = BundleModel(spec, chart, base, conn, gmet, name=name)
    irreps = {}
    for entry in data.get("irreps", []):
        ir = _build_irrep(entry, spec)
        if ir.label in irreps:
            raise StructuralError(f"duplicate irrep label {ir.label!r}")
        irreps[ir.label] = ir
    return Instance(name, str(data.get("description", "")), spec, model, irreps, path, data)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RunConfig:
    """Everything a command needs; built from a TOML file plus CLI overrides."""

    instance: Instance
    params: SimulationParams
    x0: np.ndarray
    y0: np.ndarray
    coefficients: PeterWeylCoefficients
    potential: Potential | None
    record_times: tuple
    out_dir: Path
    z_threshold: float = 3.0
    generator_points: int = 20
    geometry_points: int = 100
    unsimplified_drift: bool = False
    alt_ordering: bool = False
    path: Path | None = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def drift(self) -> str:
        return "unsimplified" if self.unsimplified_drift else "simplified"

    @property
    def ordering(self) -> str:
        return "column" if self.alt_ordering else "row"


def config_hash(raw: dict) -> str:
    """Stable short hash of a configuration (after overrides)."""
    blob = json.dumps(raw, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _coefficients(obs: dict, instance: Instance, base_dim: int) -> PeterWeylCoefficients:
    entries = obs.get("coefficients", [])
    truncation = obs.get("truncation")
    fields = []
    for entry in entries:
        label = str(_require(entry, "irrep", "observable.coefficients"))
        irrep = instance.irrep(label)
        values = _require(entry, "values", "observable.coefficients")
        fields.append(CoefficientField(irrep, values, base_dim))
    coeffs = PeterWeylCoefficients(tuple(fields))
    if truncation is not None:
        missing = [l for l in coeffs.truncation if l not in truncation]
        if missing:
            raise StructuralError(f"truncation {list(truncation)} does not cover coefficients for {missing}")
        for label in truncation:
            instance.irrep(label)
    return coeffs


def load_run_config(path, *, seed: int | None = None, n_paths: int | None = None, dt: float | None = None,
                    out: str | None = None, unsimplified_drift: bool | None = None,
                    alt_ordering: bool | None = None) -> RunConfig:
    """Load a run configuration, applying command-line overrides."""
    path = config_path(path)
    raw = _read_toml(path)
    sim = dict(raw.get("simulation", {}))
    if seed is not None:
        sim["seed"] = int(seed)
    if n_paths is not None:
        sim["n_paths"] = int(n_paths)
    if dt is not None:
        sim["dt"] = float(dt)
    raw["simulation"] = sim
    flags = dict(raw.get("flags", {}))
    if unsimplified_drift:
        flags["unsimplified_drift"] = True
    if alt_ordering:
        flags["alt_ordering"] = True
    raw["flags"] = flags
    run = raw.get("run", {})
    inst_ref = _require(run, "instance", "run")
    instance = load_instance(instance_path(inst_ref, path.parent))
    raw["run"] = dict(run, instance_sha256=hashlib.sha256(instance.path.read_bytes()).hexdigest())
    try:
        params = SimulationParams(**{k: sim[k] for k in sim})
    except TypeError as exc:
        raise StructuralError(f"[simulation]: {exc}") from None
    model = instance.model
    init = raw.get("initial", {})
    x0 = np.array(init.get("x0", [0.0] * model.base_dim), dtype=float).reshape(-1)
    y0 = np.array(init.get("y0", [0.0] * model.coset_dim), dtype=float).reshape(-1)
    if x0.shape != (model.base_dim,) or y0.shape != (model.coset_dim,):
        raise StructuralError(f"[initial] x0/y0 must have lengths {model.base_dim}/{model.coset_dim}")
    obs = raw.get("observable", {})
    coeffs = _coefficients(obs, instance, model.base_dim)
    pot_cfg = raw.get("potential", {})
    potential = None
    if "expression" in pot_cfg:
        potential = Potential.from_expression(pot_cfg["expression"], model.base_dim)
        if model.base_dim:
            potential.check_bounded(model.base.domain)
    thr = raw.get("thresholds", {})
    out_dir = out or os.environ.get(OUTPUT_DIR_ENV) or run.get("out", "results")
    out_path = Path(out_dir)  # relative paths resolve against the working directory
    z = float(thr.get("z", 3.0))
    if z <= 0:
        raise StructuralError("[thresholds] z must be positive")
    return RunConfig(
        instance=instance,
        params=params,
        x0=x0,
        y0=y0,
        coefficients=coeffs,
        potential=potential,
        record_times=tuple(float(t) for t in obs.get("record_times", ())),
        out_dir=out_path,
        z_threshold=z,
        generator_points=int(thr.get("generator_points", 20)),
        geometry_points=int(thr.get("geometry_points", 100)),
        unsimplified_drift=bool(flags.get("unsimplified_drift", False)),
        alt_ordering=bool(flags.get("alt_ordering", False)),
        path=path,
        raw=raw,
    )
