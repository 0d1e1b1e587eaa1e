"""Quantum-jump unraveling of the dimer master equation.

Between jumps a wave function follows ``i psi' = H~ psi`` with
``H~ = H - (i/2)(gamma/N) V^dag V`` and is not renormalized; once its squared
norm falls to the trajectory's random threshold it jumps, ``psi -> V psi``,
and is normalized again. The rate prefactor gamma/N sits on both the decay
term and the jump operator so that ensemble averages solve the master
equation with the dissipator (gamma/N) D_V.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from nsdimer.errors import DarkStateJumpError, NumericalError, UsageError
from nsdimer.physics.banded import BandedOperator
from nsdimer.physics.lindblad import DensityMatrix, IntegratorConfig
from nsdimer.physics.model import (
    DimerOperators,
    ModelParams,
    check_dimensions,
    fock_state,
    hamiltonian_at,
    hamiltonian_bound,
    static_hamiltonian,
)

logger = logging.getLogger(__name__)

# no-jump evolution never raises the norm; growth beyond this in one step means RK4 is unstable
NORM_GROWTH_LIMIT = 1.001


class ObservableRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: int
    n: float
    e: float


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (master seed, trajectory index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, traj_id])))


def draw_threshold(rng: np.random.Generator) -> float:
    # uniform on (0, 1]
    return 1.0 - rng.random()


@dataclass
class TrajectoryState:
    psi: np.ndarray
    time: float
    norm_sq: float
    threshold: float
    rng: np.random.Generator = field(repr=False)
    seed: int = 0
    traj_id: int = 0
    n_jumps: int = 0

    @property
    def rng_stream(self) -> Tuple[int, int]:
        return (self.seed, self.traj_id)

    def normalized(self) -> np.ndarray:
        return self.psi / np.sqrt(self.norm_sq)


def new_trajectory(psi0: np.ndarray, seed: int, traj_id: int, time: float = 0.0) -> TrajectoryState:
    psi = np.asarray(psi0, dtype=np.complex128)
    psi = psi / np.linalg.norm(psi)
    rng = trajectory_rng(seed, traj_id)
    return TrajectoryState(
        psi=psi,
        time=time,
        norm_sq=1.0,
        threshold=draw_threshold(rng),
        rng=rng,
        seed=seed,
        traj_id=traj_id,
    )


def effective_hamiltonian(params: ModelParams, ops: DimerOperators, t: float) -> BandedOperator:
    h = hamiltonian_at(params, ops, t)
    if params.gamma == 0:
        return h
    return h - (0.5j * params.rate) * ops.jump_dag_jump


def trajectory_bound(params: ModelParams, ops: DimerOperators) -> float:
    """Upper bound on ``||H~(t)||`` over a period."""
    return hamiltonian_bound(params, ops) + 0.5 * params.rate * ops.jump_dag_jump.norm_bound()


class TrajectoryPropagator:
    """RK4 no-jump evolution plus the jump rule, for one parameter set.

    The step is capped by ``stability_factor`` over a bound on ``||H~||``. RK4
    on its own damps unitary evolution, so after each step the squared norm is
    reset to the value implied by the decay rate ``(gamma/N) <V^dag V>``,
    integrated with Simpson's rule over the step; at gamma = 0 this keeps
    the norm at 1.
    """

    def __init__(self, params: ModelParams, ops: DimerOperators, config: IntegratorConfig):
        check_dimensions(params, ops)
        self.params = params
        self.config = config
        self.bound = trajectory_bound(params, ops)
        self.h = config.step(params.T, self.bound)
        self.steps_per_period = config.steps_per_period(params.T, self.bound)
        # epsilon(0) = 0, so this is the static part of -i H~
        self._g0 = (-1j * effective_hamiltonian(params, ops, 0.0)).tocsr()
        self._imbalance = ops.imbalance.bands[0].real.copy()
        self._jump = ops.jump.tocsr()
        self._decay_op = (params.rate * ops.jump_dag_jump).tocsr()
        self._h0 = static_hamiltonian(params, ops).tocsr()
        self._site1 = ops.site1
        self._decays = params.gamma > 0

    def _deriv(self, psi: np.ndarray, t: float) -> np.ndarray:
        return self._g0 @ psi + ((-1j * self.params.epsilon(t)) * self._imbalance) * psi

    def _decay_rate(self, psi: np.ndarray) -> float:
        """Instantaneous ``-d ln||psi||^2 / dt``."""
        return float(np.vdot(psi, self._decay_op @ psi).real / np.vdot(psi, psi).real)

    def advance(self, state: TrajectoryState) -> TrajectoryState:
        """One RK4 step, then the jump test at the step end; updates ``state`` in place."""
        h = self.h
        t = state.time
        psi = state.psi
        k1 = self._deriv(psi, t)
        k2 = self._deriv(psi + (0.5 * h) * k1, t + 0.5 * h)
        mid = psi + (0.5 * h) * k2
        k3 = self._deriv(mid, t + 0.5 * h)
        k4 = self._deriv(psi + h * k3, t + h)
        new = psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        raw = float(np.vdot(new, new).real)
        if not (np.isfinite(raw) and 0.0 < raw <= NORM_GROWTH_LIMIT * state.norm_sq):
            raise NumericalError(
                f"trajectory {state.traj_id}: squared norm {state.norm_sq:.6g} -> {raw!r} over one step "
                f"at t={t + h:.6g}; the step is unstable, reduce dt or set integrator.stability_factor"
            )
        target = state.norm_sq
        if self._decays:
            decay = (h / 6.0) * (
                self._decay_rate(psi) + 4.0 * self._decay_rate(mid) + self._decay_rate(new)
            )
            target *= math.exp(-decay)
        new *= math.sqrt(target / raw)

        state.psi = new
        state.time = t + h
        state.norm_sq = float(np.vdot(new, new).real)
        if self._decays and state.norm_sq <= state.threshold:
            self._apply_jump(state)
        return state

    def _apply_jump(self, state: TrajectoryState):
        jumped = self._jump @ state.psi
        norm = float(np.linalg.norm(jumped))
        if not norm > np.finfo(float).tiny:
            raise DarkStateJumpError(
                f"trajectory {state.traj_id} jumped on a dark state at t={state.time:.6g}"
            )
        state.psi = jumped / norm
        state.norm_sq = 1.0
        state.threshold = draw_threshold(state.rng)
        state.n_jumps += 1

    def advance_periods(self, state: TrajectoryState, n_periods: int) -> TrajectoryState:
        start = state.time
        for m in range(1, n_periods + 1):
            for _ in range(self.steps_per_period):
                self.advance(state)
            # pin section times to exact multiples of T
            state.time = start + m * self.params.T
        return state

    def observe(self, state: TrajectoryState, m: int) -> ObservableRecord:
        psi = state.normalized()
        n = float(np.vdot(psi, self._site1 * psi).real)
        h_psi = self._h0 @ psi + self.params.epsilon(state.time) * (self._imbalance * psi)
        e = float(np.vdot(psi, h_psi).real)
        return ObservableRecord(m=m, n=n, e=e)


def step_trajectory(
    state: TrajectoryState,
    params: ModelParams,
    ops: DimerOperators,
    config: IntegratorConfig,
) -> TrajectoryState:
    check_dimensions(params, ops, state.psi)
    return TrajectoryPropagator(params, ops, config).advance(state)


@dataclass
class TrajectoryResult:
    traj_id: int
    records: List[ObservableRecord]
    psi: np.ndarray
    n_jumps: int


@dataclass
class EnsembleResult:
    records: List[List[ObservableRecord]]
    rho: DensityMatrix
    jumps: List[int]
    n_periods: int

    @property
    def mean_jumps_per_period(self) -> float:
        if not self.jumps or not self.n_periods:
            return 0.0
        return sum(self.jumps) / (len(self.jumps) * self.n_periods)


def _periods(t: float, T: float, name: str) -> int:
    count = t / T
    if t < 0 or abs(count - round(count)) > 1e-9 * max(1.0, count):
        raise UsageError(f"{name}={t} is not a non-negative multiple of the period {T}")
    return int(round(count))


def _run_one(
    params: ModelParams,
    ops: DimerOperators,
    config: IntegratorConfig,
    psi0: np.ndarray,
    seed: int,
    traj_id: int,
    n_relax: int,
    n_measure: int,
) -> TrajectoryResult:
    propagator = TrajectoryPropagator(params, ops, config)
    state = new_trajectory(psi0, seed, traj_id)
    propagator.advance_periods(state, n_relax)
    records = []
    for m in range(1, n_measure + 1):
        propagator.advance_periods(state, 1)
        records.append(propagator.observe(state, m))
    return TrajectoryResult(traj_id, records, state.normalized(), state.n_jumps)


def run_ensemble(
    params: ModelParams,
    ops: DimerOperators,
    n_traj: int,
    t_relax: float,
    t_measure: float,
    seed: int,
    config: Optional[IntegratorConfig] = None,
    psi0: Optional[np.ndarray] = None,
    n_jobs: int = 1,
) -> EnsembleResult:
    """Propagate ``n_traj`` independent trajectories.

    Each trajectory relaxes for ``t_relax`` and then records (n, e) at every
    period boundary of ``t_measure``. The sampled density matrix is the
    average of the normalized final wave functions, reduced in index order.
    """
    if n_traj < 1:
        raise UsageError(f"n_traj must be >= 1, got {n_traj}")
    config = config or IntegratorConfig()
    check_dimensions(params, ops)
    n_relax = _periods(t_relax, params.T, "t_relax")
    n_measure = _periods(t_measure, params.T, "t_measure")
    psi0 = fock_state(params.N, params.N) if psi0 is None else np.asarray(psi0, dtype=np.complex128)
    check_dimensions(params, ops, psi0)

    logger.info(
        "ensemble: %d trajectories, N=%d, U=%g, %d+%d periods, n_jobs=%d",
        n_traj, params.N, params.U, n_relax, n_measure, n_jobs,
    )
    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_one)(params, ops, config, psi0, seed, i, n_relax, n_measure)
        for i in range(n_traj)
    )

    rho = np.zeros((ops.dim, ops.dim), dtype=np.complex128)
    for res in results:
        rho += np.outer(res.psi, res.psi.conj())
    rho /= n_traj

    return EnsembleResult(
        records=[res.records for res in results],
        rho=DensityMatrix(rho, (n_relax + n_measure) * params.T),
        jumps=[res.n_jumps for res in results],
        n_periods=n_relax + n_measure,
    )
