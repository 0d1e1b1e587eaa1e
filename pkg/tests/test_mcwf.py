import math

import numpy as np
import pytest

from nsdimer.errors import DarkStateJumpError, NumericalError, UsageError
from nsdimer.physics.lindblad import DensityMatrix, IntegratorConfig, evolve, trace_distance
from nsdimer.physics.mcwf import (
    TrajectoryPropagator,
    effective_hamiltonian,
    new_trajectory,
    run_ensemble,
    step_trajectory,
    trajectory_rng,
)
from nsdimer.physics.model import ModelParams, build_operators, fock_state, hamiltonian_at, symmetric_state


@pytest.fixture
def small():
    params = ModelParams(N=3, U=0.2)
    return params, build_operators(3)


def test_streams_depend_only_on_seed_and_index():
    a = trajectory_rng(11, 4).random(5)
    b = trajectory_rng(11, 4).random(5)
    c = trajectory_rng(11, 5).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_ensemble_is_reproducible(small, coarse):
    params, ops = small
    runs = [
        run_ensemble(params, ops, 6, params.T, 3 * params.T, seed=7, config=coarse)
        for _ in range(2)
    ]
    assert runs[0].records == runs[1].records
    assert runs[0].jumps == runs[1].jumps
    np.testing.assert_array_equal(runs[0].rho.data, runs[1].rho.data)


def test_worker_count_does_not_change_results(small, coarse):
    params, ops = small
    serial = run_ensemble(params, ops, 4, 0.0, 2 * params.T, seed=3, config=coarse)
    parallel = run_ensemble(params, ops, 4, 0.0, 2 * params.T, seed=3, config=coarse, n_jobs=2)
    assert serial.records == parallel.records
    np.testing.assert_array_equal(serial.rho.data, parallel.rho.data)


def test_records_cover_measurement_window(small, coarse):
    params, ops = small
    result = run_ensemble(params, ops, 3, 2 * params.T, 4 * params.T, seed=1, config=coarse)
    assert result.n_periods == 6
    assert result.rho.time == pytest.approx(6 * params.T)
    for records in result.records:
        assert [r.m for r in records] == [1, 2, 3, 4]
        assert all(0.0 <= r.n <= params.N for r in records)
    assert result.mean_jumps_per_period == pytest.approx(sum(result.jumps) / 18)
    assert result.rho.trace() == pytest.approx(1.0)


def test_without_dissipation_trajectory_follows_master_equation():
    params = ModelParams(N=3, gamma=0.0, U=0.3)
    ops = build_operators(3)
    config = IntegratorConfig(transient_periods=0)
    result = run_ensemble(params, ops, 1, 0.0, 2 * params.T, seed=0, config=config)
    exact = evolve(params, ops, DensityMatrix.fock(3), config, 2 * params.T)
    assert result.jumps == [0]
    assert trace_distance(result.rho, exact) < 1e-5


def test_norm_decays_between_jumps(small, coarse):
    params, ops = small
    propagator = TrajectoryPropagator(params, ops, coarse)
    state = new_trajectory(fock_state(3, 3), seed=5, traj_id=0)
    state.threshold = 1e-9
    for _ in range(50):
        propagator.advance(state)
        assert 0 < state.norm_sq <= 1
        assert state.norm_sq == pytest.approx(float(np.vdot(state.psi, state.psi).real), abs=1e-12)
    assert state.norm_sq < 1
    assert state.n_jumps == 0


def test_jump_resets_norm_and_threshold(small, coarse):
    params, ops = small
    state = new_trajectory(fock_state(3, 3), seed=5, traj_id=0)
    state.threshold = 1.5
    step_trajectory(state, params, ops, coarse)
    assert state.n_jumps == 1
    assert state.norm_sq == 1.0
    assert np.linalg.norm(state.psi) == pytest.approx(1.0)
    assert 0 < state.threshold <= 1


def test_jump_on_dark_state_is_an_error(coarse):
    params = ModelParams(N=4, U=0.0, A=0.0)
    ops = build_operators(4)
    state = new_trajectory(symmetric_state(4), seed=0, traj_id=0)
    state.threshold = 1.5
    with pytest.raises(DarkStateJumpError):
        step_trajectory(state, params, ops, coarse)


def test_ensemble_average_approaches_master_equation():
    params = ModelParams(N=2, U=0.1)
    ops = build_operators(2)
    config = IntegratorConfig(dt=params.T / 400, transient_periods=0)
    result = run_ensemble(params, ops, 400, 0.0, params.T, seed=2024, config=config)
    exact = evolve(params, ops, DensityMatrix.fock(2), config, params.T)
    assert trace_distance(result.rho, exact) < 0.2


def test_invalid_windows(small, coarse):
    params, ops = small
    with pytest.raises(UsageError):
        run_ensemble(params, ops, 2, 1.5, params.T, seed=0, config=coarse)
    with pytest.raises(UsageError):
        run_ensemble(params, ops, 2, -params.T, params.T, seed=0, config=coarse)
    with pytest.raises(UsageError):
        run_ensemble(params, ops, 0, 0.0, params.T, seed=0, config=coarse)


def test_effective_hamiltonian_without_dissipation_is_hamiltonian():
    params = ModelParams(N=4, gamma=0.0)
    ops = build_operators(4)
    np.testing.assert_array_equal(
        effective_hamiltonian(params, ops, 1.1).toarray(), hamiltonian_at(params, ops, 1.1).toarray()
    )


def test_effective_hamiltonian_only_removes_norm(small):
    params, ops = small
    h = effective_hamiltonian(params, ops, 0.9).toarray()
    anti = (h - h.conj().T) / 2j
    assert np.max(np.linalg.eigvalsh(anti)) <= 1e-12


def test_effective_hamiltonian_for_two_bosons():
    params = ModelParams(N=2, J=1.0, U=0.3, A=1.5, gamma=0.2)
    ops = build_operators(2)
    r2 = math.sqrt(2)
    hop = np.array([[0, r2, 0], [r2, 0, r2], [0, r2, 0]])
    jump_dag_jump = np.array([[6, -2 * r2, -2], [-2 * r2, 4, -2 * r2], [-2, -2 * r2, 6]])
    # epsilon(T/4) = A; interaction prefactor 2U/N = U; decay prefactor (gamma/N)/2
    expected = -hop + 0.3 * np.diag([2, 0, 2]) + 1.5 * np.diag([2, 0, -2]) - 0.5j * 0.1 * jump_dag_jump
    np.testing.assert_allclose(effective_hamiltonian(params, ops, params.T / 4).toarray(), expected, atol=1e-12)


def test_unitary_trajectory_keeps_unit_norm_at_fifty_bosons():
    params = ModelParams(N=50, gamma=0.0)
    ops = build_operators(50)
    propagator = TrajectoryPropagator(params, ops, IntegratorConfig(transient_periods=0))
    state = new_trajectory(fock_state(50, 50), seed=0, traj_id=0)
    propagator.advance_periods(state, 1)
    assert abs(state.norm_sq - 1) < 1e-10
    assert abs(np.vdot(state.psi, state.psi).real - 1) < 1e-10


def test_step_respects_spectral_bound():
    params = ModelParams(N=50)
    propagator = TrajectoryPropagator(params, build_operators(50), IntegratorConfig())
    assert propagator.h * propagator.bound <= 0.5 + 1e-12
    assert propagator.steps_per_period * propagator.h == pytest.approx(params.T)


def test_dark_state_never_jumps(coarse):
    params = ModelParams(N=4, U=0.0, A=0.0, gamma=0.5)
    ops = build_operators(4)
    result = run_ensemble(
        params, ops, 5, 0.0, 20 * params.T, seed=3, config=coarse, psi0=symmetric_state(4)
    )
    assert result.jumps == [0] * 5
    assert trace_distance(result.rho, DensityMatrix.from_pure(symmetric_state(4))) < 1e-8


def test_unstable_step_is_reported():
    params = ModelParams(N=10, U=50.0)
    ops = build_operators(10)
    config = IntegratorConfig(dt=params.T, transient_periods=0, stability_factor=None)
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        run_ensemble(params, ops, 2, 0.0, 100 * params.T, seed=0, config=config)
