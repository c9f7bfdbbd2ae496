"""SGD particle chain, mean-field drift and the synchronously coupled system.

Shapes
------
A particle configuration is an array ``theta`` of shape ``(N, D)``.  Every
kernel here also accepts extra leading axes ``(..., N, D)`` so that many
independent trials can be advanced at once; each leading index is an
independent system and only interacts with itself.

Time
----
SGD step ``k`` corresponds to rescaled time ``t = k / N``.  The mean-field
twins take one explicit Euler step of size ``1/N`` per SGD step, which with
``gamma = alpha / N`` reads ``theta_bar += gamma * G(theta_bar, mu_bar_t)``.
The reference ensemble approximating ``mu_bar_t`` is integrated on its own
grid ``h_ref`` and queried at the nearest grid time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .activation import ActivationModel, Regime
from .constants import Hyperparams, StabilityLedger
from .errors import ConfigError, InputError, PreconditionError, SimulationDivergence

DIVERGENCE_NORM = 1e12


# ---------------------------------------------------------------------------
# laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialLaw:
    """Initialisation law mu_0: uniform on a ball or isotropic Gaussian."""

    kind: str = "uniform_ball"
    radius: float = 1.0
    std: float = 1.0
    D: int = 1

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform_ball":
            g = rng.standard_normal((n, self.D))
            nrm = np.linalg.norm(g, axis=1, keepdims=True)
            nrm[nrm == 0] = 1.0
            return g / nrm * (self.radius * rng.random((n, 1)) ** (1.0 / self.D))
        if self.kind == "gaussian":
            return self.std * rng.standard_normal((n, self.D))
        raise InputError(f"unknown initial law {self.kind!r}")

    @property
    def support_radius(self) -> Optional[float]:
        return self.radius if self.kind == "uniform_ball" else None


@dataclass(frozen=True)
class DiscreteDataDistribution:
    """Finitely supported data law pi = sum_j p_j delta_(x_j, y_j)."""

    xs: np.ndarray
    ys: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        ps = np.asarray(self.ps, dtype=float).reshape(-1)
        if not (len(xs) == len(ys) == len(ps)) or len(ps) == 0:
            raise InputError("data atoms: xs, ys and ps must be nonempty with equal length")
        if np.any(ps <= 0):
            raise InputError("data atoms: every probability must be > 0")
        if abs(ps.sum() - 1.0) > 1e-12:
            raise InputError(f"data atoms: probabilities sum to {ps.sum():.15g}, not 1")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "ps", ps)
        object.__setattr__(self, "_cdf", np.cumsum(ps))

    @classmethod
    def from_atoms(cls, atoms) -> "DiscreteDataDistribution":
        """``atoms`` is an iterable of ``(x, y, p)``."""
        atoms = list(atoms)
        return cls(np.array([np.atleast_1d(a[0]) for a in atoms], dtype=float),
                   np.array([a[1] for a in atoms], dtype=float),
                   np.array([a[2] for a in atoms], dtype=float))

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def __len__(self):
        return len(self.ps)

    def check_bounds(self, A: float, data_radius: float) -> list[str]:
        errs = []
        if np.any(np.abs(self.ys) > A):
            errs.append(f"labels exceed A={A}")
        if np.any(np.linalg.norm(self.xs, axis=1) > data_radius + 1e-12):
            errs.append(f"inputs exceed data_radius={data_radius}")
        return errs

    def sample_indices(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        idx = np.searchsorted(self._cdf, u * self._cdf[-1], side="right")
        return np.minimum(idx, len(self.ps) - 1)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleEnsemble:
    """Particles ``theta`` (N, D) at integer ``step``; time = step * dt.

    For SGD ensembles ``dt = 1/N``; reference snapshots use their own grid.
    """

    theta: np.ndarray
    step: int = 0
    dt: Optional[float] = None

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.ndim != 2 or th.shape[0] < 1:
            raise InputError(f"ensemble theta must have shape (N, D) with N >= 1, got {th.shape}")
        object.__setattr__(self, "theta", th)
        if self.dt is None:
            object.__setattr__(self, "dt", 1.0 / th.shape[0])

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    @property
    def D(self) -> int:
        return self.theta.shape[1]

    @property
    def time(self) -> float:
        return self.step * self.dt

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.theta, axis=1)))


# ---------------------------------------------------------------------------
# one-step SGD map
# ---------------------------------------------------------------------------

def _check_dims(theta, x, model):
    if theta.shape[-1] != model.D:
        raise InputError(f"theta last axis must be D={model.D}, got {theta.shape}")
    if x.shape[-1] != model.d:
        raise InputError(f"x last axis must be d={model.d}, got {x.shape}")


def one_step_map(theta, z, model: ActivationModel, hp: Hyperparams) -> np.ndarray:
    """Phi(theta, z) = theta + gamma F_lambda(theta, z), every particle sharing ``z``.

    ``theta`` has shape (..., N, D); ``z = (x, y)`` with x of shape (..., d)
    and y of shape (...).
    """
    theta = np.asarray(theta, dtype=float)
    x, y = z
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dims(theta, x, model)
    return _phi(theta, x, y, model, hp.gamma, hp.lam)


def _phi(theta, x, y, model, gamma, lam):
    xb = x[..., None, :]
    s, g = model.value_and_grad_theta(theta, xb)
    # sorting makes the network output independent of particle order, bit for bit
    resid = y - np.sort(s, axis=-1).mean(axis=-1)
    return (1.0 - gamma * lam) * theta + (gamma * resid)[..., None, None] * g


def sgd_step(ens: ParticleEnsemble, z, model: ActivationModel, hp: Hyperparams) -> ParticleEnsemble:
    """One online SGD update of all N particles with the single sample ``z``."""
    if ens.N != hp.N:
        raise InputError(f"ensemble has N={ens.N} but hyperparameters have N={hp.N}")
    new = one_step_map(ens.theta, z, model, hp)
    norm = _max_norm(new)
    if not norm <= DIVERGENCE_NORM:
        raise SimulationDivergence(ens.step + 1, norm)
    return ParticleEnsemble(new, ens.step + 1, ens.dt)


def _max_norm(theta) -> float:
    sq = np.sum(theta * theta, axis=-1)
    return float(np.sqrt(np.max(sq)))


# ---------------------------------------------------------------------------
# mean-field drift
# ---------------------------------------------------------------------------

def mean_activations(atoms, data: DiscreteDataDistribution, model: ActivationModel) -> np.ndarray:
    """<sigma(., x_j), measure> for every data atom j; atoms has shape (M, D)."""
    atoms = np.asarray(atoms, dtype=float)
    return np.array([model.value(atoms, xj).mean() for xj in data.xs])


def drift_from_means(theta, means, data: DiscreteDataDistribution, model: ActivationModel, lam: float):
    """G_lambda(theta, mu) given the per-atom averages ``means`` = <sigma(., x_j), mu>.

    ``theta`` has shape (..., D); the sum over data atoms is exact and is
    accumulated atom by atom in a fixed order.
    """
    w = data.ps * (data.ys - means)
    out = -lam * theta
    for wj, xj in zip(w, data.xs):
        out = out + wj * model.grad_theta(theta, xj)
    return out


def meanfield_drift(theta_i, measure, data: DiscreteDataDistribution, model: ActivationModel,
                    hp: Hyperparams) -> np.ndarray:
    """G_lambda(theta_i, measure) with ``measure`` an ensemble or an (M, D) atom array."""
    atoms = measure.theta if isinstance(measure, ParticleEnsemble) else np.asarray(measure, dtype=float)
    if atoms.ndim != 2 or atoms.shape[0] == 0:
        raise InputError("measure must be a nonempty (M, D) atom array")
    theta_i = np.asarray(theta_i, dtype=float)
    if theta_i.shape[-1] != model.D or atoms.shape[1] != model.D:
        raise InputError(f"dimension mismatch: model D={model.D}")
    if data.d != model.d:
        raise InputError(f"data inputs have d={data.d}, model expects {model.d}")
    return drift_from_means(theta_i, mean_activations(atoms, data, model), data, model, hp.lam)


# ---------------------------------------------------------------------------
# reference ensemble for mu_bar_t
# ---------------------------------------------------------------------------

@dataclass
class ReferenceTrajectory:
    """Self-consistent Euler trajectory of ``M_ref`` particles.

    ``mean_activation[j]`` holds <sigma(., x_atom), mu_bar> at grid time j*h
    for every data atom, which is all the twins need.  Full particle
    snapshots are kept only at the grid indices in ``snapshots``.
    """

    h: float
    n_steps: int
    mean_activation: np.ndarray
    second_moment: np.ndarray
    max_norm: np.ndarray
    snapshots: dict = field(default_factory=dict)

    def index(self, t: float) -> int:
        j = int(round(t / self.h))
        if t < 0 or j > self.n_steps:
            raise ConfigError([f"reference trajectory covers [0, {self.n_steps * self.h:g}], requested t={t:g}"])
        return j

    @property
    def T(self) -> float:
        return self.n_steps * self.h

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    def means_at(self, t: float) -> np.ndarray:
        return self.mean_activation[self.index(t)]

    def snapshot(self, t: float) -> ParticleEnsemble:
        j = self.index(t)
        if j not in self.snapshots:
            raise ConfigError([f"no reference snapshot stored for t={t:g} (grid index {j})"])
        return ParticleEnsemble(self.snapshots[j], j, self.h)

    def ensembles(self) -> list[ParticleEnsemble]:
        return [ParticleEnsemble(th, j, self.h) for j, th in sorted(self.snapshots.items())]


def evolve_reference(seed, M_ref: int, h: float, T: float, data: DiscreteDataDistribution,
                     model: ActivationModel, hp: Hyperparams, init: Optional[InitialLaw] = None,
                     snapshot_times: Optional[Iterable[float]] = None,
                     theta0: Optional[np.ndarray] = None) -> ReferenceTrajectory:
    """Explicit Euler for the self-consistent system theta' = alpha G(theta, empirical).

    The initial ensemble is ``theta0`` if given, else ``M_ref`` i.i.d. draws
    from ``init`` using ``np.random.default_rng(seed)``.  Snapshots are stored
    at every grid time when ``snapshot_times`` is None.
    """
    if M_ref < 1 or not h > 0 or T < 0:
        raise InputError("evolve_reference requires M_ref >= 1, h > 0, T >= 0")
    if theta0 is None:
        if init is None:
            raise InputError("either init or theta0 is required")
        theta = init.sample(np.random.default_rng(seed), M_ref)
    else:
        theta = np.array(theta0, dtype=float).reshape(M_ref, model.D)
    n_steps = int(np.floor(T / h + 1e-9))
    if snapshot_times is None:
        keep = set(range(n_steps + 1))
    else:
        keep = {int(round(t / h)) for t in snapshot_times}
        if any(j > n_steps or j < 0 for j in keep):
            raise ConfigError([f"snapshot times must lie in [0, {T:g}]"])

    J = len(data)
    means = np.empty((n_steps + 1, J))
    m2 = np.empty(n_steps + 1)
    mx = np.empty(n_steps + 1)
    snaps = {}
    ah = hp.alpha * h
    for j in range(n_steps + 1):
        sq = np.sum(theta * theta, axis=-1)
        m2[j] = sq.mean()
        mx[j] = np.sqrt(sq.max())
        if not mx[j] <= DIVERGENCE_NORM:
            raise SimulationDivergence(j, float(mx[j]))
        means[j] = mean_activations(theta, data, model)
        if j in keep:
            snaps[j] = theta.copy()
        if j < n_steps:
            theta = theta + ah * drift_from_means(theta, means[j], data, model, hp.lam)
    return ReferenceTrajectory(h, n_steps, means, m2, mx, snaps)


# ---------------------------------------------------------------------------
# batched coupled simulation
# ---------------------------------------------------------------------------

@dataclass
class BatchState:
    theta: np.ndarray
    twin: Optional[np.ndarray]
    alive: np.ndarray
    fail_step: np.ndarray
    max_norm: np.ndarray
    step: int = 0


def simulate_batch(theta0, indices, data: DiscreteDataDistribution, model: ActivationModel,
                   hp: Hyperparams, reference: Optional[ReferenceTrajectory] = None,
                   measure_steps: Iterable[int] = (), on_measure=None) -> BatchState:
    """Advance B independent SGD systems (and their twins if ``reference``).

    ``theta0`` has shape (B, N, D); ``indices`` (B, K) are the data atoms
    consumed at steps 1..K.  ``on_measure(state)`` is called at every step in
    ``measure_steps`` (step 0 included if listed).  A system whose largest
    particle norm exceeds ``DIVERGENCE_NORM`` is marked dead at that step and
    frozen; the others continue unaffected.
    """
    theta = np.array(theta0, dtype=float)
    if theta.ndim != 3 or theta.shape[1] != hp.N or theta.shape[2] != model.D:
        raise InputError(f"theta0 must have shape (B, {hp.N}, {model.D}), got {theta.shape}")
    indices = np.asarray(indices)
    B, K = indices.shape
    measure = set(int(k) for k in measure_steps)
    state = BatchState(
        theta=theta,
        twin=theta.copy() if reference is not None else None,
        alive=np.ones(B, dtype=bool),
        fail_step=np.full(B, -1),
        max_norm=np.sqrt(np.max(np.sum(theta * theta, axis=-1), axis=-1)),
    )
    gamma, lam, N = hp.gamma, hp.lam, hp.N
    if 0 in measure and on_measure is not None:
        on_measure(state)
    for k in range(K):
        idx = indices[:, k]
        state.theta = _phi(state.theta, data.xs[idx], data.ys[idx], model, gamma, lam)
        if state.twin is not None:
            m = reference.means_at(k / N)
            state.twin = state.twin + gamma * drift_from_means(state.twin, m, data, model, lam)
        state.step = k + 1
        norms = np.sqrt(np.max(np.sum(state.theta * state.theta, axis=-1), axis=-1))
        bad = ~(norms <= DIVERGENCE_NORM) & state.alive
        if bad.any():
            state.alive &= ~bad
            state.fail_step[bad] = k + 1
            state.theta[bad] = 0.0
            if state.twin is not None:
                state.twin[bad] = 0.0
            norms[bad] = 0.0
        np.maximum(state.max_norm, np.where(state.alive, norms, 0.0), out=state.max_norm)
        if state.step in measure and on_measure is not None:
            on_measure(state)
    return state


@dataclass
class CoupledSystem:
    """SGD ensemble, its mean-field twins (same initial points) and the reference."""

    sgd: ParticleEnsemble
    meanfield: ParticleEnsemble
    reference: ReferenceTrajectory
    rng: np.random.Generator

    @classmethod
    def start(cls, theta0, reference: ReferenceTrajectory, seed) -> "CoupledSystem":
        th = np.array(theta0, dtype=float)
        return cls(ParticleEnsemble(th, 0), ParticleEnsemble(th.copy(), 0), reference,
                   np.random.default_rng(seed))


def evolve_coupled(cs: CoupledSystem, T: float, data: DiscreteDataDistribution,
                   model: ActivationModel, hp: Hyperparams, h: Optional[float] = None,
                   record_every: int = 1) -> list[CoupledSystem]:
    """Advance the pair by floor(N T) SGD steps; twins follow the frozen reference.

    Returns the coupled state every ``record_every`` steps (initial state
    included).  The twin Euler step is fixed at 1/N; passing another ``h``
    is an error.
    """
    N = hp.N
    if h is not None and abs(h - 1.0 / N) > 1e-15:
        raise InputError(f"twin Euler step is locked to 1/N={1.0 / N:g}, got h={h:g}")
    if cs.sgd.N != N:
        raise InputError(f"coupled system has N={cs.sgd.N}, hyperparameters N={N}")
    k0 = cs.sgd.step
    K = int(np.floor(N * T + 1e-9))
    if (k0 + K) / N > cs.reference.T + 1e-12:
        raise ConfigError([f"reference covers t <= {cs.reference.T:g}, coupled run needs {(k0 + K) / N:g}"])
    idx = data.sample_indices(cs.rng, K)
    theta, twin = cs.sgd.theta.copy(), cs.meanfield.theta.copy()
    out = [cs]
    gamma, lam = hp.gamma, hp.lam
    for k in range(K):
        j = idx[k]
        theta = _phi(theta, data.xs[j], data.ys[j], model, gamma, lam)
        twin = twin + gamma * drift_from_means(twin, cs.reference.means_at((k0 + k) / N), data, model, lam)
        norm = _max_norm(theta)
        if not norm <= DIVERGENCE_NORM:
            raise SimulationDivergence(k0 + k + 1, norm)
        if (k + 1) % record_every == 0 or k + 1 == K:
            out.append(replace(cs, sgd=ParticleEnsemble(theta, k0 + k + 1),
                               meanfield=ParticleEnsemble(twin, k0 + k + 1)))
    return out


# ---------------------------------------------------------------------------
# localization audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditReport:
    max_norm: float
    R_inf: float
    passed: bool
    worst_step: int
    worst_particle: int
    n_states: int


def _require_localization(ledger: StabilityLedger):
    if ledger.regime != Regime.LOCALIZED.value:
        raise PreconditionError("localization audit needs a localized-regime model")
    if not ledger.admissible_localization:
        if ledger.gamma * ledger.lam > 1:
            raise PreconditionError(f"gamma*lambda <= 1 violated (gamma*lambda={ledger.gamma * ledger.lam:g})")
        raise PreconditionError("lambda > M*c violated")


def localized_run_audit(trajectory, ledger: StabilityLedger) -> AuditReport:
    """Largest particle norm along ``trajectory`` versus R_inf (+1e-12 slack).

    ``trajectory`` yields ParticleEnsembles or (N, D) arrays; a generator is
    consumed in one pass.  A violated bound is reported, not raised.
    """
    _require_localization(ledger)
    best, best_step, best_i, n = -np.inf, -1, -1, 0
    for s, state in enumerate(trajectory):
        th = state.theta if isinstance(state, ParticleEnsemble) else np.asarray(state)
        step = state.step if isinstance(state, ParticleEnsemble) else s
        norms = np.linalg.norm(th, axis=-1)
        i = int(np.argmax(norms))
        if norms.flat[i] > best:
            best, best_step, best_i = float(norms.flat[i]), step, i
        n += 1
    if n == 0:
        raise InputError("empty trajectory")
    return AuditReport(best, ledger.R_inf, best <= ledger.R_inf + 1e-12, best_step, best_i, n)
