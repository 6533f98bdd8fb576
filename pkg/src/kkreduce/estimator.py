"""Monte Carlo estimators of the semigroup, full and reduced, and their comparison.

Both estimators return per-path samples alongside the summary statistics, so
that a comparison on shared seeds can exclude the union of the aborted paths
from both arms (:func:`harmonize`).

The optional Feynman-Kac weight is ``exp((1/(mu^2 kappa m)) int V(x_u) du)``
with the time integral evaluated by the trapezoid rule on the SDE grid. The
potential must be a function of the base coordinates only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bundle_model import BundleModel
from .errors import DomainError, ExpressionError, MetadataMismatch, StructuralError
from .expressions import Expression, variable_names
from .filtering import ORDERINGS, FilterMatrix, ReducedGenerator, filter_step
from .representation import PeterWeylCoefficients, coset_rep_matrices
from .sde import NoiseSource, SimulationParams, check_abort_rate, iterate_base, iterate_full

__all__ = [
    "ComparisonReport",
    "Potential",
    "SemigroupEstimate",
    "compare",
    "estimate_full",
    "estimate_reduced",
    "harmonize",
    "summarize",
]


# ---------------------------------------------------------------------------
# Potential
# ---------------------------------------------------------------------------

class Potential:
    """Group-invariant potential ``V(x)`` on the base.

    ``Potential.from_expression("0.3*x1**2", base_dim=2)``; expressions may
    only use the base coordinates ``x1..xn``: a potential that depends on the
    fiber is not invariant and is rejected.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], base_dim: int, source: str = ""):
        self._func = func
        self.base_dim = int(base_dim)
        self.source = source

    @classmethod
    def constant(cls, value: float, base_dim: int) -> "Potential":
        v = float(value)
        return cls(lambda X: np.full(np.shape(X)[0], v), base_dim, repr(v))

    @classmethod
    def from_expression(cls, source, base_dim: int) -> "Potential":
        try:
            expr = Expression(source, variable_names(base_dim))
        except ExpressionError as exc:
            if "unknown name" in str(exc):
                raise ExpressionError(
                    f"{exc}. The potential must be invariant under the group, i.e. a function of the "
                    f"base coordinates only; fiber-dependent potentials are not supported"
                ) from None
            raise
        if expr.is_complex:
            raise ExpressionError("the potential must be real")
        return cls(expr, base_dim, str(source))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.base_dim)
        return np.asarray(self._func(X), dtype=float).reshape(X.shape[0])

    def check_bounded(self, domain, n_samples: int = 4096, seed: int = 0, bound: float = 1e6) -> float:
        """Sample the domain box (infinite sides clipped to ``[-10, 10]``); return ``max |V|``."""
        domain = np.asarray(domain, dtype=float).reshape(self.base_dim, 2)
        lo = np.clip(domain[:, 0], -10.0, 10.0)
        hi = np.clip(domain[:, 1], -10.0, 10.0)
        X = np.random.default_rng([seed, 0x706F74]).uniform(lo, hi, size=(n_samples, self.base_dim))
        v = self(X)
        worst = float(np.max(np.abs(v))) if v.size else 0.0
        if not np.isfinite(worst) or worst > bound:
            raise DomainError(f"potential {self.source!r} is not bounded on the domain (max |V| = {worst:.3e})")
        return worst


class _PotentialIntegral:
    """Running trapezoid integral of ``V`` along the paths."""

    def __init__(self, potential: Potential | None, params: SimulationParams):
        self.potential = potential
        self.dt = params.dt
        self.prefactor = 1.0 / (params.mu2kappa * params.mass)
        self.total = None
        self._last = None

    def update(self, X: np.ndarray) -> None:
        if self.potential is None:
            return
        v = self.potential(X)
        if self._last is None:
            self.total = np.zeros_like(v)
        else:
            self.total = self.total + 0.5 * self.dt * (self._last + v)
        self._last = v

    def weight(self, n: int) -> np.ndarray | None:
        if self.potential is None:
            return None
        return np.exp(self.prefactor * self.total) if self.total is not None else np.ones(n)


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SemigroupEstimate:
    """Monte Carlo estimate with its per-path samples.

    ``samples`` holds one value per path (``nan`` for aborted paths);
    ``curve`` maps recorded times to ``(value, std_error)``.
    """

    value: complex | float
    std_error: float
    n_effective: int
    aborted_paths: int
    estimator: str
    metadata: dict = field(default_factory=dict)
    samples: np.ndarray | None = None
    curve: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.n_effective + self.aborted_paths

    @property
    def is_complex(self) -> bool:
        return isinstance(self.value, complex)

    @property
    def aborted(self) -> np.ndarray:
        return ~np.isfinite(self.samples)


def summarize(samples: np.ndarray) -> tuple[complex | float, float, int]:
    """Mean, standard error and count of the finite samples (fixed reduction order)."""
    s = np.asarray(samples)
    ok = np.isfinite(s)
    n = int(ok.sum())
    if n == 0:
        return float("nan"), float("nan"), 0
    v = s[ok]
    mean = v.sum() / n
    se = float(np.sqrt(np.sum(np.abs(v - mean) ** 2) / (n * (n - 1)))) if n > 1 else 0.0
    if np.iscomplexobj(mean):
        mean = complex(mean) if mean.imag != 0 else float(mean.real)
    else:
        mean = float(mean)
    return mean, se, n


def _metadata(model: BundleModel, params: SimulationParams, coeffs: PeterWeylCoefficients, x0, y0,
              potential: Potential | None, **flags) -> dict:
    meta = {
        "instance": model.name,
        "seed": params.seed,
        "n_paths": params.n_paths,
        "dt": params.dt,
        "t_a": params.t_a,
        "t_b": params.t_b,
        "mu": params.mu,
        "kappa": params.kappa,
        "mass": params.mass,
        "truncation": coeffs.truncation,
        "x0": tuple(np.asarray(x0, dtype=float).ravel().tolist()),
        "y0": tuple(np.asarray(y0, dtype=float).ravel().tolist()),
        "potential": potential.source if potential is not None else "",
    }
    meta.update(flags)
    return meta


def _record_steps(params: SimulationParams, record_times: Sequence[float] | None) -> dict[int, float]:
    if not record_times:
        return {}
    out = {}
    for t in record_times:
        k = (float(t) - params.t_a) / params.dt
        if abs(k - round(k)) > 1e-6 or not 0 <= round(k) <= params.n_steps:
            raise StructuralError(f"record time {t} is not on the simulation grid")
        out[int(round(k))] = float(t)
    return out


def _finish(samples_by_step: dict, record: dict, reason: np.ndarray, estimator: str, meta: dict,
            what: str) -> SemigroupEstimate:
    check_abort_rate(reason, what)
    final_step = max(samples_by_step)
    curve = []
    for k in sorted(samples_by_step):
        if k in record:
            s = np.where(reason == 0, samples_by_step[k], np.nan)
            v, se, _ = summarize(s)
            curve.append((record[k], v, se))
    samples = np.where(reason == 0, samples_by_step[final_step], np.nan)
    value, se, n = summarize(samples)
    return SemigroupEstimate(value, se, n, int(np.sum(reason != 0)), estimator, meta, samples, tuple(curve))


def estimate_full(model: BundleModel, params: SimulationParams, coeffs: PeterWeylCoefficients, x0, y0,
                  potential: Potential | None = None, *, drift: str = "simplified",
                  record_times: Sequence[float] | None = None,
                  noise: NoiseSource | None = None) -> SemigroupEstimate:
    """Sample mean of ``phi_0(x_T, y_T)`` times the potential weight over bundle paths.

    ``phi_0 = sum_lambda tr(V D^lambda(L_y B) C^lambda(x))`` is evaluated with
    the per-path basepoint ``B`` accumulated by chart re-centering.
    """
    record = _record_steps(params, record_times)
    irreps = coeffs.irreps
    integral = _PotentialIntegral(potential, params)
    out = {}
    state = None
    for state, _, _ in iterate_full(model, params, x0, y0, irreps=irreps, drift=drift, noise=noise):
        integral.update(state.x)
        if state.step in record or state.step == params.n_steps:
            out[state.step] = _readout_full(state, coeffs, integral)
    meta = _metadata(model, params, coeffs, x0, y0, potential, drift=drift)
    meta["recenter_events"] = len(state.recenter_events)
    return _finish(out, record, state.reason, "full", meta, "estimate_full")


def _readout_full(state, coeffs: PeterWeylCoefficients, integral: _PotentialIntegral) -> np.ndarray:
    n = state.x.shape[0]
    total = np.zeros(n, dtype=complex)
    for fieldc in coeffs.fields:
        D = state.group_reps(fieldc.label)
        r = fieldc.irrep.n_spherical
        total += np.einsum("pri,pir->p", D[:, :r, :], fieldc(state.x))
    w = integral.weight(n)
    return total if w is None else total * w


def estimate_reduced(model: BundleModel, params: SimulationParams, coeffs: PeterWeylCoefficients, x0, y0,
                     potential: Potential | None = None, *, ordering: str = "row",
                     record_times: Sequence[float] | None = None,
                     noise: NoiseSource | None = None) -> SemigroupEstimate:
    """Sample mean over base paths of ``sum_lambda tr(V N^lambda_T D^lambda(L_{y_a}) C^lambda(xi_T))``.

    The filter matrices are advanced with exactly the increments that drive
    the base process (shared noise).
    """
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}")
    record = _record_steps(params, record_times)
    y0 = np.asarray(y0, dtype=float).reshape(model.coset_dim)
    if np.linalg.norm(y0) >= model.chart.safe_radius:
        raise DomainError("initial fiber point outside the chart")
    gens = [ReducedGenerator(model, f.irrep, params) for f in coeffs.fields]
    D0 = {f.label: coset_rep_matrices(f.irrep, model.chart, y0[None])[0] for f in coeffs.fields}
    integral = _PotentialIntegral(potential, params)
    M = None
    X_prev = None
    out = {}
    step = 0
    reason = None
    for X, reason, dWb in iterate_base(model, params, x0, noise=noise):
        if M is None:
            M = {g.label: np.broadcast_to(np.eye(g.dim, dtype=complex), (X.shape[0], g.dim, g.dim)).copy()
                 for g in gens}
        else:
            step += 1
            for g in gens:
                if not g.irrep.is_trivial:
                    with np.errstate(all="ignore"):
                        M[g.label] = filter_step(g, M[g.label], X_prev, dWb, params.dt, ordering=ordering)
        X_prev = X
        integral.update(X)
        if step in record or step == params.n_steps:
            total = np.zeros(X.shape[0], dtype=complex)
            for f, g in zip(coeffs.fields, gens):
                fm = FilterMatrix(g.label, M[g.label], params.t_a + step * params.dt, ordering,
                                  f.irrep.n_spherical)
                total += fm.readout(D0[g.label], f(X))
            w = integral.weight(X.shape[0])
            out[step] = total if w is None else total * w
    bad = ~np.all([np.all(np.isfinite(M[g.label]), axis=(1, 2)) for g in gens], axis=0) if gens else False
    reason = np.where((reason == 0) & bad, 1, reason).astype(np.int8)
    meta = _metadata(model, params, coeffs, x0, y0, potential, ordering=ordering)
    return _finish(out, record, reason, "reduced", meta, "estimate_reduced")


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

#: Metadata keys that must agree for two estimates to be comparable.
COMPARABLE_KEYS = ("instance", "seed", "n_paths", "dt", "t_a", "t_b", "mu", "kappa", "mass", "truncation",
                   "x0", "y0", "potential")


@dataclass(frozen=True)
class ComparisonReport:
    z: float
    passed: bool
    threshold: float
    difference: float
    exact: bool
    n_common: int


def harmonize(a: SemigroupEstimate, b: SemigroupEstimate) -> tuple[SemigroupEstimate, SemigroupEstimate]:
    """Restrict two shared-seed estimates to the paths that survived in both."""
    if a.samples is None or b.samples is None or a.samples.shape != b.samples.shape:
        return a, b
    keep = np.isfinite(a.samples) & np.isfinite(b.samples)

    def restrict(e: SemigroupEstimate) -> SemigroupEstimate:
        s = np.where(keep, e.samples, np.nan)
        v, se, n = summarize(s)
        return dataclasses.replace(e, value=v, std_error=se, n_effective=n,
                                   aborted_paths=int(s.size - n), samples=s)

    return restrict(a), restrict(b)


def compare(a: SemigroupEstimate, b: SemigroupEstimate, threshold: float = 3.0, *,
            check_metadata: bool = True) -> ComparisonReport:
    """``z = |a - b| / sqrt(se_a^2 + se_b^2)``; passes iff ``z < threshold``.

    When both estimates carry per-path samples of the same ensemble, the
    union of their aborted paths is excluded from both first.
    """
    if check_metadata:
        diffs = [k for k in COMPARABLE_KEYS
                 if k in a.metadata and k in b.metadata and a.metadata[k] != b.metadata[k]]
        if diffs:
            raise MetadataMismatch(f"estimates are not comparable; differing metadata: {diffs}")
    a, b = harmonize(a, b)
    diff = abs(a.value - b.value)
    scale = np.hypot(a.std_error, b.std_error)
    exact = bool(diff <= 1e-12 * max(1.0, abs(a.value)))
    if scale > 0:
        z = float(diff / scale)
    else:
        z = 0.0 if exact else float("inf")
    return ComparisonReport(z, bool(z < threshold), float(threshold), float(diff), exact,
                            min(a.n_effective, b.n_effective))
