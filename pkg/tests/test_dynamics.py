"""Tests for orbit integration, sections, and central-orbit stability."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from magbottle.dynamics import (
    OrbitState,
    central_orbit_monodromy,
    equatorial_turning_point,
    integrate,
    numerical_bifurcation_energy,
    poincare_section,
    section_seed_state,
)
from magbottle.errors import (
    EscapeDetected,
    NoBifurcationInRange,
    SeedOutsideCZVError,
)
from magbottle.model import build_builtin_model, critical_energy, parse_potential

# generic bound seed used for the drift and reversibility checks
SEED = OrbitState(0.9, 0.3, 0.2, 0.1)


# ---------------------------------------------------------------- integrate


def test_equatorial_plane_is_invariant():
    traj = integrate(OrbitState(0.5, 0.0, 0.2, 0.0), 50.0)
    assert np.abs(traj.states[:, 1]).max() == 0.0
    assert np.abs(traj.states[:, 3]).max() == 0.0


def test_energy_drift_stays_below_bound():
    # the headline integrator property: relative drift < 1e-10 over 1e4 units
    traj = integrate(SEED, 1.0e4, tol=1e-12, n_samples=2001)
    energies = traj.energies()
    drift = np.abs(energies - energies[0]).max() / abs(energies[0])
    assert drift < 1e-10


def test_backward_integration_recovers_initial_state():
    fwd = integrate(SEED, 40.0)
    f = fwd.final_state
    back = integrate(OrbitState(f.rho, f.z, -f.p_rho, -f.p_z), 40.0)
    b = back.final_state
    assert abs(b.rho - SEED.rho) < 1e-10
    assert abs(b.z - SEED.z) < 1e-10
    assert abs(b.p_rho + SEED.p_rho) < 1e-10
    assert abs(b.p_z + SEED.p_z) < 1e-10


def test_negative_time_runs_backward():
    fwd = integrate(SEED, 10.0)
    back = integrate(fwd.final_state, -10.0)
    assert back.times[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(back.final_state.as_array(), SEED.as_array(), atol=1e-10)


def test_axis_orbit_escapes_through_the_neck():
    # V(0, z) = 0, so an on-axis orbit feels no force and leaves the box
    with pytest.raises(EscapeDetected) as info:
        integrate(OrbitState(0.0, 0.5, 0.0, 1.0), 200.0)
    assert info.value.t == pytest.approx(19.5, abs=1e-6)
    assert abs(info.value.state[1]) >= 20.0 - 1e-6


def test_radial_escape_over_an_open_barrier():
    hilltop = parse_potential("0.5*rho^2 - 0.125*rho^4")
    with pytest.raises(EscapeDetected) as info:
        integrate(OrbitState(0.1, 0.0, 1.5, 0.0), 200.0, potential=hilltop)
    assert abs(info.value.state[0]) >= 20.0 - 1e-6


def test_trajectory_dense_output_matches_samples():
    traj = integrate(SEED, 5.0, n_samples=11)
    mid = traj.dense(traj.times[5])
    assert np.allclose(mid, traj.states[5], atol=1e-12)


# ----------------------------------------------------------------- sections


def test_seed_outside_zero_velocity_curve_is_rejected():
    with pytest.raises(SeedOutsideCZVError):
        section_seed_state(0.0, 1.0, 0.2)
    with pytest.raises(SeedOutsideCZVError):
        poincare_section([(0.0, 1.0)], 0.2, 3)


def test_seed_lift_conserves_energy():
    state = section_seed_state(0.25, 0.1, 0.1)
    assert state.rho == 0.0
    assert state.p_rho > 0.0
    assert state.energy() == pytest.approx(0.1, abs=1e-14)


def test_central_orbit_is_a_section_fixed_point():
    section = poincare_section([(0.0, 0.0)], 0.2, 6)
    assert len(section.points) == 6
    assert np.abs(section.points[:, 1:3]).max() < 1e-12


def test_quasiperiodic_seed_traces_a_closed_curve():
    section = poincare_section([(0.25, 0.0)], 0.1, 40)
    pts = section.for_seed(0)
    assert len(pts) == 40
    # in aspect-corrected coordinates the crossings wind consistently
    # around the fixed point and stay on a thin annulus
    z, pz = pts[:, 0], pts[:, 1]
    x, y = z, pz * (z.std() / pz.std())
    cross = x[:-1] * y[1:] - y[:-1] * x[1:]
    assert np.all(cross > 0.0) or np.all(cross < 0.0)
    radii = np.hypot(x, y)
    assert radii.max() / radii.min() < 1.2


def test_crossings_lie_on_the_section():
    section = poincare_section([(0.25, 0.0)], 0.1, 10)
    state = section_seed_state(0.25, 0.0, 0.1)
    traj = integrate(state, float(section.points[:, 3].max()) + 1.0)
    residuals = [abs(float(traj.dense(t)[0])) for t in section.points[:, 3]]
    assert max(residuals) < 1e-9


def test_section_points_conserve_energy():
    section = poincare_section([(0.25, 0.0), (0.1, 0.05)], 0.1, 8)
    V = build_builtin_model()
    for _, z, pz, _ in section.points:
        radicand = 2.0 * (0.1 - V.value(0.0, z)) - pz**2
        assert radicand > 0.0  # p_rho stays real on recorded crossings


# ---------------------------------------------------------------- monodromy


def test_turning_point_inverts_the_profile():
    rho_t = equatorial_turning_point(0.2)
    V = build_builtin_model()
    assert V.value(rho_t, 0.0) == pytest.approx(0.2, abs=1e-10)
    with pytest.raises(ValueError):
        equatorial_turning_point(0.0)
    with pytest.raises(ValueError):
        equatorial_turning_point(critical_energy(V) + 0.01)


def test_monodromy_is_symplectic():
    result = central_orbit_monodromy(0.2)
    assert abs(result.determinant - 1.0) < 1e-10
    assert abs(np.linalg.det(result.half_matrix) - 1.0) < 1e-10


def test_monodromy_trace_regression():
    # frozen from a tolerance-convergence study (stable to ten digits
    # across integrator tolerances 1e-8 .. 1e-13)
    result = central_orbit_monodromy(0.2)
    assert result.trace == pytest.approx(-1.981560010994, abs=1e-6)
    assert result.stable


def test_low_energy_orbit_is_barely_rotating():
    # as E -> 0 the transverse frequency vanishes and Tr M -> 2
    result = central_orbit_monodromy(1e-3)
    assert 1.9 < result.trace < 2.0


def test_period_matches_turning_point_quadrature():
    result = central_orbit_monodromy(0.2)
    V = build_builtin_model()
    rho_t = equatorial_turning_point(0.2)
    T, _ = quad(
        lambda r: 1.0 / math.sqrt(2.0 * (0.2 - V.value(r, 0.0))),
        -rho_t,
        rho_t,
        limit=200,
    )
    assert result.period == pytest.approx(2.0 * T, abs=1e-6)


def test_full_monodromy_is_half_matrix_squared():
    result = central_orbit_monodromy(0.15)
    assert np.allclose(result.matrix, result.half_matrix @ result.half_matrix)


# ------------------------------------------------------------- bifurcations


def test_one_third_bifurcation_energy():
    E = numerical_bifurcation_energy(3, 1)
    assert E == pytest.approx(0.097278663, abs=5e-6)


def test_one_half_bifurcation_energy():
    E = numerical_bifurcation_energy(2, 1)
    assert E == pytest.approx(0.188025815, abs=5e-6)


def test_stability_transition_energy():
    # the 1:1 case is the chaos threshold: Tr(M_half) first reaches -2 here
    E = numerical_bifurcation_energy(1, 1)
    assert E == pytest.approx(0.368815193, abs=5e-6)
    below = central_orbit_monodromy(E - 1e-3)
    above = central_orbit_monodromy(E + 1e-3)
    assert below.stable
    assert not above.stable


def test_bifurcation_energies_are_ordered():
    energies = [numerical_bifurcation_energy(m, 1) for m in (4, 3, 2, 1)]
    assert energies == sorted(energies)


def test_unreachable_rotation_number_raises():
    with pytest.raises(NoBifurcationInRange):
        numerical_bifurcation_energy(1, 2, bracket=(1e-3, 0.3), tol=1e-9)
