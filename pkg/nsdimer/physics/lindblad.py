import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from nsdimer.errors import NumericalError, UsageError
from nsdimer.physics.model import (
    DimerOperators,
    ModelParams,
    check_dimensions,
    hamiltonian_at,
    hamiltonian_bound,
    static_hamiltonian,
)

logger = logging.getLogger(__name__)

DEFAULT_DT_FRACTION = 5e-4
POSITIVITY_TOLERANCE = 1e-6
HERMITICITY_TOLERANCE = 1e-10


class IntegratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    # None means 5e-4 T
    dt: Optional[float] = Field(default=None, gt=0)
    transient_periods: int = Field(default=100, ge=0)
    max_steps: int = Field(default=10**9, ge=1)
    # upper limit on h times the generator's spectral bound; None takes dt as given
    stability_factor: Optional[float] = Field(default=0.5, gt=0, le=2.8)

    def steps_per_period(self, T: float, radius: float = 0.0) -> int:
        dt = self.dt if self.dt is not None else DEFAULT_DT_FRACTION * T
        n = max(1, round(T / dt))
        if self.stability_factor is not None and radius > 0:
            n = max(n, math.ceil(T * radius / self.stability_factor))
        return n

    def step(self, T: float, radius: float = 0.0) -> float:
        """Step length adjusted so that a period is an integer number of steps."""
        return T / self.steps_per_period(T, radius)


@dataclass
class DensityMatrix:
    data: np.ndarray
    time: float = 0.0

    @classmethod
    def from_pure(cls, psi: np.ndarray, time: float = 0.0) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=np.complex128)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), time)

    @classmethod
    def fock(cls, N: int, n: Optional[int] = None) -> "DensityMatrix":
        """|n><n|; defaults to all bosons on site 1."""
        n = N if n is None else n
        data = np.zeros((N + 1, N + 1), dtype=np.complex128)
        data[n, n] = 1.0
        return cls(data)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(scipy.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0])

    def diagonal(self) -> np.ndarray:
        return self.data.diagonal().real.copy()


def trace_distance(a, b) -> float:
    """1/2 ||a - b||_1 for Hermitian matrices."""
    diff = np.asarray(getattr(a, "data", a)) - np.asarray(getattr(b, "data", b))
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(scipy.linalg.eigvalsh(diff))))


@dataclass
class StateMonitor:
    """Worst positivity and Hermiticity seen by a propagation.

    Collects only; whoever owns the run decides when to log, so that monitors
    filled inside worker processes can be shipped back as plain messages.
    """

    label: str = ""
    worst_eigenvalue: float = math.inf
    worst_asymmetry: float = 0.0
    notes: List[str] = field(default_factory=list)

    def check_state(self, rho: np.ndarray):
        self.worst_eigenvalue = min(self.worst_eigenvalue, DensityMatrix(rho).min_eigenvalue())

    def check_asymmetry(self, rho: np.ndarray):
        asym = float(np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2)))))
        self.worst_asymmetry = max(self.worst_asymmetry, asym)

    def note(self, message: str):
        self.notes.append(message)

    @property
    def messages(self) -> List[str]:
        where = f" ({self.label})" if self.label else ""
        out = list(self.notes)
        if self.worst_eigenvalue < -POSITIVITY_TOLERANCE:
            out.append(f"positivity drift: smallest eigenvalue {self.worst_eigenvalue:.3e}{where}")
        if self.worst_asymmetry > HERMITICITY_TOLERANCE:
            out.append(f"Hermiticity drift: max |rho - rho^dag| = {self.worst_asymmetry:.3e} before re-symmetrization{where}")
        return out

    def emit(self, log: Optional[logging.Logger] = None):
        for message in self.messages:
            (log or logger).warning("%s", message)


def generator_bound(params: ModelParams, ops: DimerOperators) -> float:
    """Upper bound on the spectral radius of ``rho -> L_t(rho)`` over a period."""
    return 2.0 * hamiltonian_bound(params, ops) + 2.0 * params.rate * ops.jump_dag_jump.norm_bound()


class LindbladGenerator:
    """Banded right-hand side of the master equation.

    Written as ``G rho + rho G^dag + r V rho V^dag`` with the non-Hermitian
    ``G = -i H - (r/2) V^dag V`` and ``r = gamma / N``; only the diagonal of
    ``G`` depends on time.
    """

    def __init__(self, params: ModelParams, ops: DimerOperators):
        check_dimensions(params, ops)
        self.params = params
        self.ops = ops
        self.rate = params.rate
        self.radius = generator_bound(params, ops)
        self.g0 = -1j * static_hamiltonian(params, ops) - (0.5 * self.rate) * ops.jump_dag_jump
        self._g0_dag = self.g0.H
        self.imbalance_diag = ops.imbalance.bands[0].real.copy()
        self._jump = ops.jump
        self._jump_dag = ops.jump.H

    def _g_rho(self, rho: np.ndarray, shift: np.ndarray) -> np.ndarray:
        return self.g0.left(rho) + shift[:, None] * rho

    def __call__(self, rho: np.ndarray, t: float, hermitian: bool = False) -> np.ndarray:
        shift = (-1j * self.params.epsilon(t)) * self.imbalance_diag
        g_rho = self._g_rho(rho, shift)
        if hermitian:
            out = g_rho + np.conj(np.swapaxes(g_rho, -1, -2))
        else:
            out = g_rho + self._g0_dag.right(rho) + rho * np.conj(shift)
        if self.rate:
            out += self.rate * self._jump_dag.right(self._jump.left(rho))
        return out


def lindblad_rhs(params: ModelParams, ops: DimerOperators, rho, t: float) -> np.ndarray:
    rho = np.asarray(getattr(rho, "data", rho), dtype=np.complex128)
    check_dimensions(params, ops, rho)
    return LindbladGenerator(params, ops)(rho, t)


def lindblad_rhs_dense(params: ModelParams, ops: DimerOperators, rho, t: float) -> np.ndarray:
    """Reference right-hand side built from dense matrices."""
    rho = np.asarray(getattr(rho, "data", rho), dtype=np.complex128)
    h = hamiltonian_at(params, ops, t).toarray()
    v = ops.jump.toarray()
    vd = v.conj().T
    unitary = -1j * (h @ rho - rho @ h)
    return unitary + params.rate * (v @ rho @ vd - 0.5 * (vd @ v @ rho + rho @ vd @ v))


def rk4_propagate(
    generator: LindbladGenerator,
    rho: np.ndarray,
    t0: float,
    t1: float,
    config: IntegratorConfig,
    hermitian: bool = True,
    monitor: Optional[StateMonitor] = None,
) -> np.ndarray:
    """Classic fixed-step RK4 from t0 to t1; ``rho`` may be a stack of matrices.

    With ``hermitian`` the state is re-symmetrized after every step, which is
    only meaningful for Hermitian inputs. The step never exceeds
    ``stability_factor / generator.radius``.
    """
    span = t1 - t0
    if span < 0:
        raise UsageError(f"t_final={t1} precedes the state time {t0}")
    if span == 0:
        return rho.copy()
    T = generator.params.T
    per_period = config.steps_per_period(T, generator.radius)
    n_steps = max(1, round(span * per_period / T))
    if n_steps > config.max_steps:
        raise NumericalError(f"{n_steps} steps requested, limit is {config.max_steps}")
    if per_period > config.steps_per_period(T):
        logger.debug(
            "step capped by spectral bound %.4g: %d steps per period (N=%d)",
            generator.radius, per_period, generator.params.N,
        )
    h = span / n_steps

    rho = np.array(rho, dtype=np.complex128)
    for k in range(n_steps):
        t = t0 + k * h
        k1 = generator(rho, t, hermitian)
        k2 = generator(rho + (0.5 * h) * k1, t + 0.5 * h, hermitian)
        k3 = generator(rho + (0.5 * h) * k2, t + 0.5 * h, hermitian)
        k4 = generator(rho + h * k3, t + h, hermitian)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        checkpoint = (k + 1) % per_period == 0 or k + 1 == n_steps
        if hermitian:
            if checkpoint and monitor is not None:
                monitor.check_asymmetry(rho)
            rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
        if checkpoint and not np.all(np.isfinite(rho)):
            raise NumericalError(
                f"non-finite density matrix at t={t + h:.6g} (step {k + 1}/{n_steps})"
            )
    return rho


def evolve(
    params: ModelParams,
    ops: DimerOperators,
    rho0: DensityMatrix,
    config: IntegratorConfig,
    t_final: float,
    monitor: Optional[StateMonitor] = None,
) -> DensityMatrix:
    check_dimensions(params, ops, rho0.data)
    generator = LindbladGenerator(params, ops)
    data = rk4_propagate(generator, rho0.data, rho0.time, t_final, config, monitor=monitor)
    if monitor is not None:
        monitor.check_state(data)
    return DensityMatrix(data, t_final)


def iter_stroboscopic(
    params: ModelParams,
    ops: DimerOperators,
    rho0: DensityMatrix,
    config: IntegratorConfig,
    n_periods: int,
    monitor: Optional[StateMonitor] = None,
) -> Iterator[DensityMatrix]:
    """Yield rho(mT), m = 1..n_periods, counted after the transient window."""
    if n_periods < 1:
        raise UsageError(f"n_periods must be >= 1, got {n_periods}")
    check_dimensions(params, ops, rho0.data)
    generator = LindbladGenerator(params, ops)
    T = params.T
    start = rho0.time
    data = rho0.data
    if config.transient_periods:
        end = start + config.transient_periods * T
        data = rk4_propagate(generator, data, start, end, config, monitor=monitor)
        start = end
        logger.debug("transient of %d periods done (N=%d, U=%g)", config.transient_periods, params.N, params.U)

    state = DensityMatrix(data, start)
    for m in range(1, n_periods + 1):
        t_next = start + m * T
        data = rk4_propagate(generator, state.data, state.time, t_next, config, monitor=monitor)
        if monitor is not None:
            monitor.check_state(data)
        state = DensityMatrix(data, t_next)
        yield state


def stroboscopic_run(
    params: ModelParams,
    ops: DimerOperators,
    rho0: DensityMatrix,
    config: IntegratorConfig,
    n_periods: int,
) -> List[DensityMatrix]:
    """All snapshots of ``iter_stroboscopic``, with drift warnings logged at the end."""
    monitor = StateMonitor(label=f"N={params.N}, U={params.U:g}")
    snapshots = list(iter_stroboscopic(params, ops, rho0, config, n_periods, monitor))
    monitor.emit()
    return snapshots


def liouvillian_matrix(params: ModelParams, ops: DimerOperators, t: Optional[float] = None) -> np.ndarray:
    """Dense column-stacked generator: vec(L(rho)) = L vec(rho).

    ``t=None`` drops the modulation, i.e. the period-averaged generator.
    """
    check_dimensions(params, ops)
    eps = 0.0 if t is None else params.epsilon(t)
    h = (static_hamiltonian(params, ops) + eps * ops.imbalance).toarray()
    v = ops.jump.toarray()
    k = v.conj().T @ v
    eye = np.eye(ops.dim)
    # vec(A X B) = (B^T kron A) vec(X)
    gen = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    gen += params.rate * (np.kron(v.conj(), v) - 0.5 * np.kron(eye, k) - 0.5 * np.kron(k.T, eye))
    return gen


def averaged_steady_state(params: ModelParams, ops: DimerOperators) -> DensityMatrix:
    """Null vector of the period-averaged generator, normalized to unit trace."""
    gen = liouvillian_matrix(params, ops)
    vals, vecs = scipy.linalg.eig(gen)
    idx = int(np.argmin(np.abs(vals)))
    rho = vecs[:, idx].reshape(ops.dim, ops.dim, order="F")
    rho = rho / np.trace(rho)
    return DensityMatrix(0.5 * (rho + rho.conj().T))


def relax(
    params: ModelParams,
    ops: DimerOperators,
    config: IntegratorConfig,
    rho0: Optional[DensityMatrix] = None,
    periods: Optional[int] = None,
    monitor: Optional[StateMonitor] = None,
) -> DensityMatrix:
    """Propagate over ``periods`` (default: the transient window) from rho0.

    The default initial state |N><N| is immaterial after transients because
    the asymptotic state is unique.
    """
    rho0 = rho0 if rho0 is not None else DensityMatrix.fock(params.N)
    periods = config.transient_periods if periods is None else periods
    return evolve(params, ops, rho0, config, rho0.time + periods * params.T, monitor)
