"""Stochastic processes on the bundle and on the orbit space.

The diffusion generated by ``1/2 mu^2 kappa Delta_G`` (Laplace-Beltrami
operator of the bundle metric) is integrated in Stratonovich form with the
Heun predictor-corrector scheme. In bundle coordinates ``z = (x, y)``

    dx = b_x dt + sigma X dw_base,
    dy = b_y dt + sigma (Y dw_fiber - e_khat A X dw_base),     sigma = mu sqrt(kappa),

with ``X X^T = h^{-1}`` (lower Cholesky factor) and the fiber factor
``Y = e_recip L``, ``L L^T = g^{-1}`` (so ``Y Y^T = gamma^{-1}``).

The Stratonovich drifts used in production are closed-form (no frame
derivatives are needed)::

    b_x = 1/2 mu^2 kappa [ (1/sqrt(hg)) d_n(h^{ni} sqrt(hg)) - X^j_n d_j X^i_n ]
    b_y = 1/2 mu^2 kappa [ (-div A + X^j_n d_j(X^i_n A_i))^khat e^alpha_khat
                           + e^alpha_a g^{cb} f^a_{h b} e^h_nu e^nu_c ]

They equal the Ito drift of the generator (the simplified form with the
``F``-tensor) minus ``1/2 sum_K V_K . d V_K``. The literal, unsimplified Ito
drift ``1/2 mu^2 kappa (1/sqrt G) d_B(sqrt G G^{AB})`` together with a
finite-difference Stratonovich correction is available for A/B testing
(``drift="unsimplified"``).

Noise is counter based: the increment for ``(seed, path, step, channel)`` is
a pure function of that key (see :class:`NoiseSource`).
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .bundle_model import BundleModel
from .coset_geometry import DEGENERATE_DET, frame_at, frame_batch
from .errors import (
    AbortRateWarning,
    ChartDomainError,
    DomainError,
    FactorizationError,
    MetadataMismatch,
    RunFailure,
    StructuralError,
)
from .representation import IrrepSpec, faithful_irrep, rep_matrices

__all__ = [
    "ABORT_REASONS",
    "BaseEnsemble",
    "BaseStepFields",
    "DiffusionPath",
    "FullEnsemble",
    "FullState",
    "NoiseSource",
    "SimulationParams",
    "check_abort_rate",
    "full_drift",
    "iterate_base",
    "iterate_full",
    "noise_factor",
    "simulate_base",
    "simulate_full",
    "step_stratonovich",
    "unimodular_term",
    "unsimplified_drift",
]

#: Abort reason codes stored per path (0 = alive).
ABORT_REASONS = {0: "alive", 1: "non-finite", 2: "left base domain", 3: "left chart", 4: "degenerate frame"}

WARN_ABORT_FRACTION = 0.01
FAIL_ABORT_FRACTION = 0.10


# ---------------------------------------------------------------------------
# Parameters and noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationParams:
    """Physical and numerical parameters of a run (dimensionless units)."""

    mu: float = 1.0
    kappa: float = 1.0
    mass: float = 1.0
    t_a: float = 0.0
    t_b: float = 1.0
    dt: float = 1e-3
    n_paths: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise StructuralError("mu must be positive")
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise StructuralError("kappa must be positive")
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise StructuralError("mass must be positive")
        if not self.t_b >= self.t_a:
            raise StructuralError("t_b must not precede t_a")
        if not self.dt > 0:
            raise StructuralError("dt must be positive")
        span = self.t_b - self.t_a
        steps = round(span / self.dt)
        if abs(steps * self.dt - span) > 1e-9 * max(1.0, span):
            raise StructuralError(f"(t_b - t_a)/dt = {span / self.dt} is not an integer")
        if int(self.n_paths) < 1:
            raise StructuralError("n_paths must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise StructuralError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_b - self.t_a) / self.dt))

    @property
    def mu2kappa(self) -> float:
        return self.mu ** 2 * self.kappa

    @property
    def sigma(self) -> float:
        return self.mu * np.sqrt(self.kappa)

    def times(self) -> np.ndarray:
        return self.t_a + self.dt * np.arange(self.n_steps + 1)

    def replace(self, **changes) -> "SimulationParams":
        return dataclasses.replace(self, **changes)


#: Channel offsets: base and fiber noises never share a key.
BASE_CHANNEL_OFFSET = 0
FIBER_CHANNEL_OFFSET = 1 << 20


class NoiseSource:
    """Counter-based Gaussian increments keyed by ``(seed, path, step, channel)``.

    For each ``(step, channel)`` a Philox stream is keyed by
    ``(seed, channel << 40 | step)``; the increment of path ``p`` is the
    ``p``-th standard normal of that stream (prefix stable: it does not
    depend on how many paths are drawn), scaled by ``sqrt(dt)``.

    With ``refine = r > 0`` the increment of step ``k`` is the sum of the
    ``2**r`` increments of steps ``k 2**r .. (k+1) 2**r - 1`` of the
    unrefined source on a grid ``2**r`` times finer: runs at ``dt`` and
    ``dt / 2**r`` then follow the same Brownian path (coupled runs for weak
    error studies).
    """

    def __init__(self, seed: int, refine: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise StructuralError("seed must be a 64-bit unsigned integer")
        if int(refine) < 0:
            raise StructuralError("refine must be non-negative")
        self.seed = seed
        self.refine = int(refine)

    def _generator(self, step: int, channel: int) -> np.random.Generator:
        if not 0 <= step < 2 ** 40 or not 0 <= channel < 2 ** 24:
            raise StructuralError("noise key out of range")
        key = np.array([self.seed, (channel << 40) | step], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def normals(self, step: int, channel: int, paths) -> np.ndarray:
        """Standard normals for ``paths`` (an int ``n`` meaning ``range(n)``, or a slice)."""
        if isinstance(paths, (int, np.integer)):
            paths = slice(0, int(paths))
        stop = paths.stop
        return self._generator(step, channel).standard_normal(stop)[paths]

    def increments(self, step: int, channels: Sequence[int], paths, dt: float) -> np.ndarray:
        """Wiener increments, shape ``(n_paths, len(channels))``."""
        if isinstance(paths, (int, np.integer)):
            paths = slice(0, int(paths))
        n = paths.stop - paths.start
        if not self.refine:
            out = np.empty((n, len(channels)))
            for k, ch in enumerate(channels):
                out[:, k] = self.normals(step, ch, paths)
            return out * np.sqrt(dt)
        sub = 1 << self.refine
        out = np.zeros((n, len(channels)))
        for k, ch in enumerate(channels):
            for j in range(step * sub, (step + 1) * sub):
                out[:, k] += self.normals(j, ch, paths)
        return out * np.sqrt(dt / sub)

    def base_increments(self, step: int, n_base: int, paths, dt: float) -> np.ndarray:
        return self.increments(step, [BASE_CHANNEL_OFFSET + k for k in range(n_base)], paths, dt)

    def fiber_increments(self, step: int, n_fiber: int, paths, dt: float) -> np.ndarray:
        return self.increments(step, [FIBER_CHANNEL_OFFSET + k for k in range(n_fiber)], paths, dt)

    def increment(self, path: int, step: int, channel: int, dt: float) -> float:
        """A single increment (pure function of the key)."""
        return float(self.increments(step, [channel], slice(path, path + 1), dt)[0, 0])


# ---------------------------------------------------------------------------
# Pointwise drift / noise formulas
# ---------------------------------------------------------------------------

def noise_factor(metric_inverse) -> np.ndarray:
    """Lower-triangular ``X`` with ``X X^T = metric_inverse``."""
    M = np.asarray(metric_inverse, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise StructuralError("noise_factor expects a square matrix")
    if not np.all(np.isfinite(M)):
        raise FactorizationError("noise_factor: non-finite matrix")
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(M).max(initial=0.0)):
        raise FactorizationError("noise_factor: matrix is not symmetric")
    ev = np.linalg.eigvalsh(M) if M.size else np.ones(1)
    if ev.min() <= 0:
        raise FactorizationError(
            f"noise_factor: matrix is not positive-definite (smallest eigenvalue {ev.min():.3e})", ev.min()
        )
    return np.linalg.cholesky(M) if M.size else M.copy()


def unimodular_term(frame, B) -> np.ndarray:
    """``B^beta_i f^A_{DC} phi^D_beta pi^C_A`` (vanishes for unimodular groups), shape (nb,)."""
    f = frame.spec.structure_constants
    return np.einsum("bi,ADC,Db,CA->i", np.asarray(B), f, frame.phi, frame.proj)


def full_drift(model: BundleModel, params: SimulationParams, x, y):
    """Ito drift of the bundle process in the simplified (F-tensor) form.

    Returns ``(drift_x, drift_y)``::

        drift_x = 1/2 mu^2 kappa (1/sqrt(hg)) d_n(h^{ni} sqrt(hg))
        drift_y = 1/2 mu^2 kappa [ -div(A)^khat e^alpha_khat
                                   - (gamma^{mu nu} + h A A e e) F^alpha_{mu nu} ]

    Also verifies that the discarded ``x``-drift term of the unsimplified
    form vanishes (``< 1e-8``).
    """
    x = np.asarray(x, dtype=float).reshape(1, model.base_dim)
    frame = frame_at(model.chart, y)
    met = model.metric(frame, x)
    c = 0.5 * params.mu2kappa
    bx = c * model.base_ito_drift(x)[0]
    nk = model.khat_dim
    eK = frame.e_recip[:, :nk]
    div = model.connection_divergence(x)[0]
    hBB = met.B @ (np.linalg.inv(met.h) if model.base_dim else met.h) @ met.B.T
    F = frame.F
    by = c * (-(eK @ div) - np.einsum("mn,amn->a", met.gamma_inv + hBB, F))
    discarded = unimodular_term(frame, met.B)
    if discarded.size and np.abs(discarded).max() > 1e-8:
        raise DomainError(f"unimodular drift term does not vanish ({np.abs(discarded).max():.2e})")
    return bx, by


# ---------------------------------------------------------------------------
# Batched fields used by the stepper
# ---------------------------------------------------------------------------

class BaseStepFields(NamedTuple):
    """Base drift/noise on a batch plus the pieces reused by the fiber part."""

    b: np.ndarray        # (N, nb) Stratonovich drift
    V: np.ndarray        # (N, nb, nb) sigma X
    Xf: np.ndarray       # (N, nb, nb) X^i_n
    A: np.ndarray        # (N, nk, nb)
    g_inv: np.ndarray    # (N, m, m)
    g_inv_factor: np.ndarray  # (N, m, m) lower Cholesky factor of g^{-1}
    u: np.ndarray        # (N, nk) -div A + X d(X A)


def base_step_fields(model: BundleModel, params: SimulationParams, X, *, with_fiber: bool = True) -> BaseStepFields:
    c = 0.5 * params.mu2kappa
    Xf = model.base.noise_factor(X)
    b = c * (model.base_ito_drift(X) - model.base_noise_correction(X))
    V = params.sigma * Xf
    if with_fiber:
        A = model.connection(X)
        g_inv = model.gmetric.g_inv(X)
        g_fac = model.gmetric.g_inv_factor(X)
        u = model.connection_noise_correction(X) - model.connection_divergence(X)
    else:
        A = g_inv = g_fac = u = None
    return BaseStepFields(b, V, Xf, A, g_inv, g_fac, u)


def _fiber_step_fields(model: BundleModel, params: SimulationParams, bf: BaseStepFields, Y):
    """Stratonovich fiber drift and noise coefficients; also returns det of the coframe."""
    spec = model.spec
    e_full, e_recip, det = frame_batch(model.chart, Y)
    nk = model.khat_dim
    c = 0.5 * params.mu2kappa
    eK = e_recip[:, :, :nk]
    H = list(spec.h_idx)
    cos = list(spec.coset_idx)
    drift = (eK @ bf.u[:, :, None])[:, :, 0]
    if H:
        m = len(cos)
        fH = spec.structure_constants[np.ix_(cos, H, cos)].reshape(m, len(H) * m)
        chc = e_full[:, H, :] @ e_recip                      # e^h_nu e^nu_c
        T = (chc @ bf.g_inv).reshape(-1, len(H) * m)         # [p, (h, b)]
        s = T @ fH.T                                         # f^a_{hb} e^h_c g^{cb}
        drift = drift + (e_recip @ s[:, :, None])[:, :, 0]
    b = c * drift
    VB = -params.sigma * (eK @ (bf.A @ bf.Xf))
    VF = params.sigma * (e_recip @ bf.g_inv_factor)
    return b, VB, VF, det


def _raw_fields(model: BundleModel, params: SimulationParams, X, e_recip, det):
    """``sqrt(G) G^{AB}``, the full noise matrix ``V^A_K`` and ``sqrt(G)`` on a batch.

    The frame (``e_recip``, ``det``) is passed in so that base-shifted points
    can reuse the frame of their fiber point.
    """
    nb, m = model.base_dim, model.coset_dim
    hi = model.base.h_inv(X)
    g_inv = model.gmetric.g_inv(X)
    A = model.connection(X)
    B = e_recip[:, :, : model.khat_dim] @ A
    gamma_inv = e_recip @ g_inv @ np.swapaxes(e_recip, 1, 2)
    sqrtG = model.sqrt_hg(X) * np.abs(det)
    D = nb + m
    Gi = np.empty((X.shape[0], D, D))
    Gi[:, :nb, :nb] = hi
    Gi[:, :nb, nb:] = -hi @ np.swapaxes(B, 1, 2)
    Gi[:, nb:, :nb] = -B @ hi
    Gi[:, nb:, nb:] = gamma_inv + B @ hi @ np.swapaxes(B, 1, 2)
    Xf = model.base.noise_factor(X)
    V = np.zeros((X.shape[0], D, D))
    V[:, :nb, :nb] = params.sigma * Xf
    V[:, nb:, :nb] = -params.sigma * (B @ Xf)
    V[:, nb:, nb:] = params.sigma * (e_recip @ model.gmetric.g_inv_factor(X))
    return Gi * sqrtG[:, None, None], V, sqrtG


def unsimplified_drift(model: BundleModel, params: SimulationParams, Z, step: float = 1e-5):
    """Literal Laplace-Beltrami drift: ``(b_ito, b_strat, V)`` (see :func:`_unsimplified`)."""
    return _unsimplified(model, params, Z, step)[:3]


def _unsimplified(model: BundleModel, params: SimulationParams, Z, step: float = 1e-5):
    """Literal Laplace-Beltrami drift by finite differences, in Ito and Stratonovich form.

    ``b_ito^A = 1/2 mu^2 kappa (1/sqrt G) d_B(sqrt G G^{AB})`` (the unsimplified
    drift, including the term that vanishes for unimodular groups) and
    ``b_strat = b_ito - 1/2 sum_K V^B_K d_B V^A_K``. Returns
    ``(b_ito, b_strat, V, det)`` for points ``Z`` of shape ``(N, nb + m)``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    N, D = Z.shape
    nb, m = model.base_dim, model.coset_dim
    X, Y = Z[:, :nb], Z[:, nb:]
    # frames at y and at y +- step e_a (x shifts reuse the centre frame)
    Ey = np.eye(m) * step
    Ys = np.concatenate([Y[None], Y[None] + Ey[:, None], Y[None] - Ey[:, None]]).reshape(-1, m)
    _, er, det = frame_batch(model.chart, Ys)
    er = er.reshape(1 + 2 * m, N, m, m)
    det = det.reshape(1 + 2 * m, N)
    Ex = np.eye(nb) * step
    Xs = np.concatenate([X[None], X[None] + Ex[:, None], X[None] - Ex[:, None]]).reshape((1 + 2 * nb) * N, nb)
    Wx, Vx, sg = _raw_fields(model, params, Xs, np.tile(er[0], (1 + 2 * nb, 1, 1)), np.tile(det[0], 1 + 2 * nb))
    Wy, Vy, _ = _raw_fields(model, params, np.tile(X, (2 * m, 1)),
                            er[1:].reshape(-1, m, m), det[1:].reshape(-1))
    W0, V0, sqrtG0 = Wx[:N], Vx[:N], sg[:N]
    Wx, Vx = Wx[N:].reshape(2, nb, N, D, D), Vx[N:].reshape(2, nb, N, D, D)
    Wy, Vy = Wy.reshape(2, m, N, D, D), Vy.reshape(2, m, N, D, D)
    dW = np.concatenate([Wx[0] - Wx[1], Wy[0] - Wy[1]]) / (2 * step)  # [B, p, A, C] = d_B W^{AC}
    dV = np.concatenate([Vx[0] - Vx[1], Vy[0] - Vy[1]]) / (2 * step)  # [B, p, A, K] = d_B V^A_K
    b_ito = 0.5 * params.mu2kappa * np.einsum("bpab->pa", dW) / sqrtG0[:, None]
    corr = 0.5 * np.einsum("pbk,bpak->pa", V0, dV)
    return b_ito, b_ito - corr, V0, det[0]


# ---------------------------------------------------------------------------
# State, stepping, ensembles
# ---------------------------------------------------------------------------

@dataclass
class FullState:
    """Mutable ensemble state of the bundle process.

    ``basepoints[label]`` holds representation matrices ``D(B_p)`` of the
    per-path basepoint ``B_p``; the group element represented by path ``p`` is
    ``L_{y_p} B_p``.
    """

    x: np.ndarray
    y: np.ndarray
    basepoints: dict
    reason: np.ndarray
    n_recenter: np.ndarray
    irreps: dict
    step: int = 0
    recenter_events: list = field(default_factory=list)

    @property
    def alive(self) -> np.ndarray:
        return self.reason == 0

    def group_reps(self, label: str) -> np.ndarray:
        """``D(L_y B)`` for every path in the irrep ``label``."""
        irrep = self.irreps[label]
        return _coset_reps(irrep, self.spec, self.y) @ self.basepoints[label]

    spec: object = None


def _coset_reps(irrep: IrrepSpec, spec, Y) -> np.ndarray:
    return rep_matrices(irrep, spec.embed_coset(Y))


def _mv(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product ``M[p] @ v[p]``."""
    return (M @ v[:, :, None])[:, :, 0]


def _heun_x(bf0: BaseStepFields, bf1: BaseStepFields, X, dWb, dt):
    return X + 0.5 * (bf0.b + bf1.b) * dt + _mv(0.5 * (bf0.V + bf1.V), dWb)


def _predict_x(bf0: BaseStepFields, X, dWb, dt):
    return X + bf0.b * dt + _mv(bf0.V, dWb)


def step_stratonovich(model: BundleModel, params: SimulationParams, x, y, dW_base, dW_fiber, dt,
                      drift: str = "simplified"):
    """One Heun step of the bundle process on a batch.

    Returns ``(x_new, y_new, det_min)`` where ``det_min`` is the smaller of the
    coframe determinants at the two stages (used for degeneracy detection).
    Chart re-centering and abort bookkeeping are handled by the ensemble
    drivers.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    dWb = np.atleast_2d(np.asarray(dW_base, dtype=float)).reshape(x.shape[0], model.base_dim)
    dWf = np.atleast_2d(np.asarray(dW_fiber, dtype=float)).reshape(y.shape[0], model.coset_dim)
    if drift == "simplified":
        bf0 = base_step_fields(model, params, x)
        by0, VB0, VF0, det0 = _fiber_step_fields(model, params, bf0, y)
        xp = _predict_x(bf0, x, dWb, dt)
        yp = y + by0 * dt + _mv(VB0, dWb) + _mv(VF0, dWf)
        bf1 = base_step_fields(model, params, xp)
        by1, VB1, VF1, det1 = _fiber_step_fields(model, params, bf1, yp)
        xn = _heun_x(bf0, bf1, x, dWb, dt)
        yn = y + 0.5 * (by0 + by1) * dt + _mv(0.5 * (VB0 + VB1), dWb) + _mv(0.5 * (VF0 + VF1), dWf)
        return xn, yn, np.minimum(np.abs(det0), np.abs(det1))
    if drift == "unsimplified":
        nb = model.base_dim
        z = np.concatenate([x, y], axis=1)
        dW = np.concatenate([dWb, dWf], axis=1)
        _, b0, V0, d0 = _unsimplified(model, params, z)
        zp = z + b0 * dt + _mv(V0, dW)
        _, b1, V1, d1 = _unsimplified(model, params, zp)
        zn = z + 0.5 * (b0 + b1) * dt + _mv(0.5 * (V0 + V1), dW)
        return zn[:, :nb], zn[:, nb:], np.minimum(np.abs(d0), np.abs(d1))
    raise ValueError("drift must be 'simplified' or 'unsimplified'")


def _broadcast_points(v, n: int, dim: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim <= 1:
        v = np.broadcast_to(v.reshape(1, dim) if dim else np.zeros((1, 0)), (n, dim))
    if v.shape != (n, dim):
        raise StructuralError(f"{what} must have shape ({dim},) or ({n}, {dim}), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{what} is not finite")
    return np.array(v, dtype=float)


def _path_slice(params: SimulationParams, paths) -> slice:
    if paths is None:
        return slice(0, params.n_paths)
    if not (0 <= paths.start < paths.stop <= params.n_paths):
        raise StructuralError("path range outside the ensemble")
    return paths


def _noise_for(params: SimulationParams, noise: NoiseSource | None) -> NoiseSource:
    if noise is None:
        return NoiseSource(params.seed)
    if noise.seed != params.seed:
        raise MetadataMismatch(f"noise source seed {noise.seed} differs from params.seed {params.seed}")
    return noise


def iterate_full(model: BundleModel, params: SimulationParams, x0, y0, *,
                 irreps: Sequence[IrrepSpec] = (), drift: str = "simplified",
                 paths: slice | None = None,
                 noise: NoiseSource | None = None) -> Iterator[tuple[FullState, np.ndarray | None, np.ndarray | None]]:
    """Generator over the steps of the bundle process.

    Yields ``(state, dW_base, dW_fiber)`` first for the initial state (with
    ``None`` increments) and then after each step with the increments that
    produced it. The state object is updated in place. ``noise`` defaults to
    ``NoiseSource(params.seed)``; its seed must equal ``params.seed``.
    """
    paths = _path_slice(params, paths)
    n = paths.stop - paths.start
    nb, m = model.base_dim, model.coset_dim
    X = _broadcast_points(x0, n, nb, "x0")
    Y = _broadcast_points(y0, n, m, "y0")
    chart = model.chart
    if np.any(np.linalg.norm(Y, axis=1) >= chart.safe_radius):
        raise ChartDomainError("initial fiber point outside the chart")
    if np.any(~model.base.contains(X)):
        raise DomainError("initial base point outside the domain")
    tracked = {"faithful": faithful_irrep(model.spec)}
    for irrep in irreps:
        tracked[irrep.label] = irrep
    basepoints = {k: np.broadcast_to(np.eye(ir.dim, dtype=complex), (n, ir.dim, ir.dim)).copy()
                  for k, ir in tracked.items()}
    state = FullState(X, Y, basepoints, np.zeros(n, dtype=np.int8), np.zeros(n, dtype=np.int64), tracked)
    state.spec = model.spec
    _recenter(state, chart, model.spec)
    yield state, None, None
    noise = _noise_for(params, noise)
    dt = params.dt
    for k in range(params.n_steps):
        dWb = noise.base_increments(k, nb, paths, dt)
        dWf = noise.fiber_increments(k, m, paths, dt)
        with np.errstate(all="ignore"):
            xn, yn, det = step_stratonovich(model, params, state.x, state.y, dWb, dWf, dt, drift)
        alive = state.reason == 0
        bad = alive & ~(np.all(np.isfinite(xn), axis=1) & np.all(np.isfinite(yn), axis=1))
        state.reason[bad] = 1
        alive &= ~bad
        out = alive & ~model.base.contains(np.where(np.isfinite(xn), xn, 0.0))
        state.reason[out] = 2
        alive &= ~out
        far = alive & (np.linalg.norm(yn, axis=1) >= chart.safe_radius)
        state.reason[far] = 3
        alive &= ~far
        degen = alive & ~(det >= DEGENERATE_DET)
        state.reason[degen] = 4
        alive &= ~degen
        state.x = np.where(alive[:, None], xn, state.x)
        state.y = np.where(alive[:, None], yn, state.y)
        state.step = k + 1
        _recenter(state, chart, model.spec)
        yield state, dWb, dWf


def _recenter(state: FullState, chart, spec) -> None:
    """Move paths with ``|y| > cutoff`` to ``y = 0`` by absorbing ``L_y`` into the basepoint."""
    need = (state.reason == 0) & (np.linalg.norm(state.y, axis=1) > chart.radius_cutoff)
    idx = np.flatnonzero(need)
    if idx.size == 0:
        return
    Ysel = state.y[idx]
    for label, irrep in state.irreps.items():
        state.basepoints[label][idx] = _coset_reps(irrep, spec, Ysel) @ state.basepoints[label][idx]
    state.y[idx] = 0.0
    state.n_recenter[idx] += 1
    state.recenter_events.extend((int(p), state.step) for p in idx)


def iterate_base(model: BundleModel, params: SimulationParams, x0, *, paths: slice | None = None,
                 noise: NoiseSource | None = None):
    """Generator over the steps of the orbit-space process ``xi``.

    Yields ``(x, reason, dW_base)`` (arrays updated each step; ``dW_base`` is
    ``None`` for the initial state).
    """
    paths = _path_slice(params, paths)
    n = paths.stop - paths.start
    nb = model.base_dim
    X = _broadcast_points(x0, n, nb, "x0")
    if np.any(~model.base.contains(X)):
        raise DomainError("initial base point outside the domain")
    reason = np.zeros(n, dtype=np.int8)
    yield X, reason, None
    noise = _noise_for(params, noise)
    dt = params.dt
    for k in range(params.n_steps):
        dWb = noise.base_increments(k, nb, paths, dt)
        with np.errstate(all="ignore"):
            bf0 = base_step_fields(model, params, X, with_fiber=False)
            xp = _predict_x(bf0, X, dWb, dt)
            bf1 = base_step_fields(model, params, xp, with_fiber=False)
            xn = _heun_x(bf0, bf1, X, dWb, dt)
        alive = reason == 0
        bad = alive & ~np.all(np.isfinite(xn), axis=1)
        reason[bad] = 1
        alive &= ~bad
        out = alive & ~model.base.contains(np.where(np.isfinite(xn), xn, 0.0))
        reason[out] = 2
        alive &= ~out
        X = np.where(alive[:, None], xn, X)
        yield X, reason, dWb


@dataclass(frozen=True, eq=False)
class DiffusionPath:
    """One recorded path: time grid, states, increments, re-centering steps."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray | None
    dW_base: np.ndarray
    dW_fiber: np.ndarray | None
    recenter_steps: tuple[int, ...]
    abort_reason: str


@dataclass(frozen=True, eq=False)
class BaseEnsemble:
    """Recorded orbit-space paths with their increments (for the filter)."""

    params: SimulationParams
    times: np.ndarray
    x: np.ndarray          # (P, K+1, nb)
    dW_base: np.ndarray    # (P, K, nb)
    reason: np.ndarray     # (P,)
    model_name: str = ""

    @property
    def seed(self) -> int:
        return self.params.seed

    @property
    def aborted(self) -> np.ndarray:
        return self.reason != 0

    def path(self, i: int) -> DiffusionPath:
        return DiffusionPath(self.times, self.x[i], None, self.dW_base[i], None, (),
                             ABORT_REASONS[int(self.reason[i])])


@dataclass(frozen=True, eq=False)
class FullEnsemble:
    """Recorded bundle paths."""

    params: SimulationParams
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dW_base: np.ndarray
    dW_fiber: np.ndarray
    reason: np.ndarray
    recenter_events: tuple
    final_state: FullState
    unimodular_residual: float
    model_name: str = ""

    @property
    def seed(self) -> int:
        return self.params.seed

    @property
    def aborted(self) -> np.ndarray:
        return self.reason != 0

    def path(self, i: int) -> DiffusionPath:
        steps = tuple(s for p, s in self.recenter_events if p == i)
        return DiffusionPath(self.times, self.x[i], self.y[i], self.dW_base[i], self.dW_fiber[i], steps,
                             ABORT_REASONS[int(self.reason[i])])


def check_abort_rate(reason: np.ndarray, what: str = "run") -> float:
    """Warn above 1% aborted paths, fail above 10%. Returns the fraction."""
    frac = float(np.mean(reason != 0)) if reason.size else 0.0
    if frac > FAIL_ABORT_FRACTION:
        counts = {ABORT_REASONS[int(c)]: int(np.sum(reason == c)) for c in np.unique(reason) if c}
        raise RunFailure(f"{what}: {100 * frac:.1f}% of paths aborted ({counts})")
    if frac > WARN_ABORT_FRACTION:
        warnings.warn(f"{what}: {100 * frac:.2f}% of paths aborted", AbortRateWarning, stacklevel=2)
    return frac


def unimodular_spot_check(model: BundleModel, seed: int, n_points: int = 100) -> float:
    """Max of the discarded drift term at random points of the charts."""
    rng = np.random.default_rng([seed, 0x756E69])
    m, nb = model.coset_dim, model.base_dim
    worst = 0.0
    if nb == 0 or model.khat_dim == 0:
        return 0.0
    lo = np.where(np.isfinite(model.base.domain[:, 0]), model.base.domain[:, 0], -1.0)
    hi = np.where(np.isfinite(model.base.domain[:, 1]), model.base.domain[:, 1], 1.0)
    for _ in range(n_points):
        x = rng.uniform(np.maximum(lo, -2.0), np.minimum(hi, 2.0))
        y = rng.normal(size=m)
        y *= model.chart.radius_cutoff * 0.95 * rng.random() / max(np.linalg.norm(y), 1e-12)
        frame = frame_at(model.chart, y)
        met = model.metric(frame, x)
        worst = max(worst, float(np.abs(unimodular_term(frame, met.B)).max(initial=0.0)))
    return worst


def simulate_full(model: BundleModel, params: SimulationParams, x0, y0, *,
                  irreps: Sequence[IrrepSpec] = (), drift: str = "simplified") -> FullEnsemble:
    """Simulate and record the bundle process for ``params.n_paths`` paths."""
    resid = unimodular_spot_check(model, params.seed)
    if resid > 1e-8:
        raise RunFailure(f"unimodular drift term does not vanish (max {resid:.2e})")
    xs, ys, dWbs, dWfs = [], [], [], []
    state = None
    for state, dWb, dWf in iterate_full(model, params, x0, y0, irreps=irreps, drift=drift):
        xs.append(state.x.copy())
        ys.append(state.y.copy())
        if dWb is not None:
            dWbs.append(dWb)
            dWfs.append(dWf)
    n, nb, m = state.x.shape[0], model.base_dim, model.coset_dim
    stack = lambda a, d: np.stack(a, axis=1) if a else np.zeros((n, 0, d))  # noqa: E731
    check_abort_rate(state.reason, "simulate_full")
    return FullEnsemble(params, params.times(), stack(xs, nb), stack(ys, m), stack(dWbs, nb), stack(dWfs, m),
                        state.reason.copy(), tuple(state.recenter_events), state, resid, model.name)


def simulate_base(model: BundleModel, params: SimulationParams, x0) -> BaseEnsemble:
    """Simulate and record the orbit-space process with its increments."""
    xs, dWbs = [], []
    reason = None
    for X, reason, dWb in iterate_base(model, params, x0):
        xs.append(X.copy())
        if dWb is not None:
            dWbs.append(dWb)
    n, nb = xs[0].shape
    dW = np.stack(dWbs, axis=1) if dWbs else np.zeros((n, 0, nb))
    check_abort_rate(reason, "simulate_base")
    return BaseEnsemble(params, params.times(), np.stack(xs, axis=1), dW, reason.copy(), model.name)
