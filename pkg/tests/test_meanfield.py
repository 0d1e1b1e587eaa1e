import cmath
import math

import numpy as np
import pytest

from nsdimer.errors import PoleSingularityError, UsageError
from nsdimer.physics.lindblad import IntegratorConfig
from nsdimer.physics.meanfield import (
    MeanFieldState,
    SpinState,
    bloch_rhs,
    check_consistency,
    classical_bifurcation_diagram,
    classify_period,
    find_fixed_point,
    integrate_bloch,
    integrate_spin,
    locate_neimark_sacker,
    normalized_histogram,
    ns_multipliers,
    spin_rhs,
    stroboscopic_map,
)
from nsdimer.physics.model import ModelParams


@pytest.fixture
def undriven():
    return ModelParams(N=1, U=0.1, A=0.0)


def test_printed_spin_equations(undriven):
    out = spin_rhs(undriven, SpinState(0.1, 0.2, 0.3), 0.0)
    assert out.sx == pytest.approx(0.056)
    assert out.sy == pytest.approx(-0.56)
    assert out.sz == pytest.approx(-0.424)


def test_conservative_spin_equations(undriven):
    out = spin_rhs(undriven, SpinState(0.1, 0.2, 0.3), 0.0, form="conservative")
    assert out.sx == pytest.approx(0.056)
    assert out.sy == pytest.approx(-0.592)
    assert out.sz == pytest.approx(0.376)


def test_drive_enters_through_offset():
    params = ModelParams(N=1, U=0.0, gamma=0.0, J=0.0)
    out = spin_rhs(params, SpinState(0.3, 0.1, 0.0), params.T / 4)
    assert out.sx == pytest.approx(2 * params.A * 0.1)
    assert out.sy == pytest.approx(-2 * params.A * 0.3)


@pytest.mark.parametrize("form", ["printed", "conservative"])
def test_bloch_equations(undriven, form):
    dtheta, dphi = bloch_rhs(undriven, MeanFieldState(math.pi / 3, math.pi / 2), 0.0, form)
    assert dtheta == pytest.approx(-2.0)
    tunnel = -2 / math.sqrt(3) if form == "printed" else 0.0
    assert dphi == pytest.approx(tunnel + 0.2 - 0.8 / math.sqrt(3))


def test_symmetric_point_is_stationary(undriven):
    dtheta, dphi = bloch_rhs(undriven, MeanFieldState(math.pi / 2, 0.0), 1.0)
    assert dtheta == pytest.approx(0.0, abs=1e-14)
    assert dphi == pytest.approx(0.0, abs=1e-14)


def test_pole_is_guarded(undriven):
    with pytest.raises(PoleSingularityError):
        bloch_rhs(undriven, MeanFieldState(1e-8, 0.0), 0.0)
    with pytest.raises(PoleSingularityError):
        bloch_rhs(undriven, MeanFieldState(math.pi, 0.0), 0.0)


def test_conservative_flow_is_tangent_to_sphere(rng):
    params = ModelParams(N=1)
    for _ in range(10):
        s = SpinState(*rng.normal(size=3))
        rhs = spin_rhs(params, s, rng.uniform(0, params.T), form="conservative")
        assert np.dot(s.as_array(), rhs.as_array()) == pytest.approx(0.0, abs=1e-12)


def test_conservative_flow_keeps_spin_length():
    params = ModelParams(N=1)
    s0 = SpinState.from_bloch(MeanFieldState(2.0, 0.0))
    s = integrate_spin(params, s0, 0.0, IntegratorConfig(), 2, form="conservative")
    assert abs(s.norm_sq - 0.25) < 1e-8


def test_printed_flow_does_not_keep_spin_length():
    params = ModelParams(N=1, gamma=0.0)
    s = SpinState(0.1, 0.2, 0.3)
    rhs = spin_rhs(params, s, 0.0)
    assert abs(np.dot(s.as_array(), rhs.as_array())) > 0.1


def test_spin_integration_is_fourth_order():
    params = ModelParams(N=1)
    s0 = SpinState.from_bloch(MeanFieldState(2.0, 0.0))

    def run(steps):
        config = IntegratorConfig(dt=params.T / steps)
        return integrate_spin(params, s0, 0.0, config, 1).as_array()

    reference = run(3200)
    ratio = np.linalg.norm(run(200) - reference) / np.linalg.norm(run(400) - reference)
    assert 4 <= ratio <= 64


def test_bloch_integration_is_fourth_order():
    params = ModelParams(N=1, A=0.5, U=0.1)
    x0 = MeanFieldState(math.pi / 2 - 0.3, 0.4)

    def run(steps):
        config = IntegratorConfig(dt=params.T / steps, transient_periods=0)
        return integrate_bloch(params, x0, config, 1).as_array()

    reference = run(3200)
    ratio = np.linalg.norm(run(100) - reference) / np.linalg.norm(run(200) - reference)
    assert 12 <= ratio <= 20


def test_conservative_representations_agree():
    params = ModelParams(N=1, U=0.1, A=0.0)
    report = check_consistency(params, MeanFieldState(1.2, 0.4), IntegratorConfig(), form="conservative")
    assert report.consistent
    assert report.sup_error < 1e-5
    assert report.s2_drift < 1e-8


def test_printed_representations_disagree(caplog):
    params = ModelParams(N=1, U=0.1, A=0.0)
    report = check_consistency(params, MeanFieldState(1.2, 0.4), IntegratorConfig(), n_periods=1)
    assert not report.consistent
    assert "disagree" in caplog.text


def test_stroboscopic_iterates(undriven, coarse):
    iterates = stroboscopic_map(undriven, MeanFieldState(1.2, 0.4), coarse, 5)
    assert [x.time for x in iterates] == pytest.approx([m * undriven.T for m in range(1, 6)])
    assert all(0 <= x.phi < 2 * math.pi for x in iterates)
    with pytest.raises(UsageError):
        stroboscopic_map(undriven, MeanFieldState(1.2, 0.4), coarse, 0)


@pytest.mark.parametrize("form", ["printed", "conservative"])
def test_linearized_symmetric_point(form):
    params = ModelParams(N=1, U=0.0, A=0.0, T=3.0)
    config = IntegratorConfig()
    x_star = find_fixed_point(params, config, MeanFieldState(1.5, 0.1), form)
    assert x_star.theta == pytest.approx(math.pi / 2, abs=1e-8)
    assert min(x_star.phi, 2 * math.pi - x_star.phi) < 1e-8

    mu = sorted(ns_multipliers(params, config, x_star, form), key=lambda z: z.imag)
    expected = sorted(
        [cmath.exp((-0.4 + 2j) * 3.0), cmath.exp((-0.4 - 2j) * 3.0)], key=lambda z: z.imag
    )
    for got, want in zip(mu, expected):
        assert abs(got - want) < 1e-5
    assert abs(mu[0]) == pytest.approx(math.exp(-1.2), abs=1e-5)


def test_stable_branch_has_no_crossing(coarse):
    params = ModelParams(N=1, A=0.0)
    scan = locate_neimark_sacker(params, coarse, [0.0, 0.05], MeanFieldState(1.5, 0.1))
    assert [row.U for row in scan.rows] == [0.0, 0.05]
    assert all(row.max_modulus < 1 for row in scan.rows)
    assert scan.critical_U is None


def test_multipliers_vary_continuously_with_U(coarse):
    params = ModelParams(N=1)
    scan = locate_neimark_sacker(params, coarse, np.round(np.arange(0.0, 0.1 + 1e-9, 0.005), 6))
    assert len(scan.rows) == 21
    moduli = [row.max_modulus for row in scan.rows]
    assert max(abs(b - a) for a, b in zip(moduli, moduli[1:])) <= 0.1


def _states(points):
    return [MeanFieldState(theta, phi) for theta, phi in points]


def test_classify_period():
    cycle = [(1.0, 0.5), (1.2, 2.0), (0.8, 4.0)]
    assert classify_period(_states(cycle * 20)) == 3
    assert classify_period(_states([(1.0, 0.5)] * 10)) == 1
    drifting = [(1.0, 0.01 * k) for k in range(40)]
    assert classify_period(_states(drifting)) is None


def test_classify_period_across_azimuth_seam():
    cycle = [(1.0, 2 * math.pi - 1e-6), (1.5, 1.0)]
    shifted = [(1.0, 1e-6), (1.5, 1.0)]
    assert classify_period(_states((cycle + shifted) * 10)) == 2


def test_normalized_histogram_peaks_at_one():
    counts = normalized_histogram(np.array([0.1, 0.1, 0.1, 0.5]), bins=10)
    assert counts.max() == 1.0
    assert counts[5] == pytest.approx(1 / 3)
    assert not normalized_histogram(np.array([]), bins=4).any()


def test_bifurcation_columns_are_normalized(coarse):
    params = ModelParams(N=1, A=0.5)
    table, sections = classical_bifurcation_diagram(
        params, [0.05, 0.1], coarse, n_iterates=20, x0=MeanFieldState(1.2, 0.4), bins=50
    )
    assert table.u_values == [0.05, 0.1]
    assert len(table.bin_centers) == 50
    assert table.bin_centers[0] == pytest.approx(0.01)
    for column in table.columns:
        assert max(column) == 1.0
    assert [len(s) for s in sections] == [20, 20]
    assert table.failures == []
    assert len(list(table.rows())) == 100


def test_pole_hit_leaves_empty_column(coarse, caplog):
    params = ModelParams(N=1)
    table, sections = classical_bifurcation_diagram(
        params, [0.1], coarse, n_iterates=5, x0=MeanFieldState(1e-8, 0.0), bins=10
    )
    assert table.failures == [0.1]
    assert table.columns == [[0.0] * 10]
    assert sections == [[]]
    assert "U=0.1: trajectory reached a pole" in caplog.text


def test_empty_grid_is_rejected(coarse):
    with pytest.raises(UsageError):
        classical_bifurcation_diagram(ModelParams(N=1), [], coarse)
