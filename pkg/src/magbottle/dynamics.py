"""Orbit integration, Poincare sections, and central-orbit stability.

The equations of motion follow from H = (p_rho^2 + p_z^2)/2 + V(rho, z) on
the meridian plane, with (rho, z) treated as Cartesian-like coordinates (the
admissible potentials are even in rho, so orbits pass smoothly through the
axis).  The surface of section is rho = 0 with p_rho > 0.

The central (equatorial) periodic orbit lives in the invariant plane
z = p_z = 0.  Its linear stability in the transverse direction is governed
by delta-z'' = -d2V/dz2(rho(t), 0) delta-z; the coefficient is even in rho
and therefore repeats with the half period, so the monodromy matrix over a
full period is the square of the half-period variational matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import EscapeDetected, NoBifurcationInRange, SeedOutsideCZVError
from .model import PotentialSpec, build_builtin_model, critical_energy

__all__ = [
    "OrbitState",
    "Trajectory",
    "SectionSet",
    "MonodromyResult",
    "integrate",
    "poincare_section",
    "central_orbit_monodromy",
    "numerical_bifurcation_energy",
    "equatorial_turning_point",
]

#: orbits beyond this |rho| or |z| count as escaped
ESCAPE_BOUND = 20.0

#: default integrator tolerance; the DOP853 relative tolerance is tol/10 and
#: the absolute tolerance tol/1000, calibrated so a tol of 1e-12 keeps the
#: relative energy drift below 1e-10 over 1e4 time units
DEFAULT_TOL = 1e-12
_RTOL_FACTOR = 0.1
_ATOL_FACTOR = 1e-3


@dataclass(frozen=True)
class OrbitState:
    """Phase-space point (rho, z, p_rho, p_z) at time t."""

    rho: float
    z: float
    p_rho: float
    p_z: float
    t: float = 0.0

    def as_array(self):
        return np.array([self.rho, self.z, self.p_rho, self.p_z])

    def energy(self, potential: PotentialSpec | None = None) -> float:
        V = build_builtin_model() if potential is None else potential
        return 0.5 * (self.p_rho**2 + self.p_z**2) + V.value(self.rho, self.z)


@dataclass
class Trajectory:
    """Sampled orbit with dense output.

    ``states`` has one row per sample, columns (rho, z, p_rho, p_z).
    ``dense(t)`` evaluates the interpolant at arbitrary times within
    [times[0], times[-1]].
    """

    times: np.ndarray
    states: np.ndarray
    dense: object
    potential: PotentialSpec

    def energies(self):
        rho, z, prho, pz = self.states.T
        return 0.5 * (prho**2 + pz**2) + self.potential.value(rho, z)

    @property
    def final_state(self) -> OrbitState:
        rho, z, prho, pz = self.states[-1]
        return OrbitState(rho, z, prho, pz, t=float(self.times[-1]))


@dataclass
class SectionSet:
    """Crossings of the rho = 0, p_rho > 0 surface of section.

    ``points`` has one row per crossing: (seed_index, z, p_z, t).
    """

    energy: float
    points: np.ndarray
    n_seeds: int

    def for_seed(self, index):
        rows = self.points[self.points[:, 0] == index]
        return rows[:, 1:3]


@dataclass
class MonodromyResult:
    """Linear stability of the central periodic orbit at one energy."""

    energy: float
    period: float
    matrix: np.ndarray
    half_matrix: np.ndarray = field(repr=False, default=None)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def stable(self) -> bool:
        return abs(self.trace) < 2.0


def _rhs_factory(potential: PotentialSpec):
    """Plain-float equations of motion, specialized to the potential."""
    rho_terms = []
    z_terms = []
    for (a, b), c in potential.as_dict().items():
        if a:
            rho_terms.append((a - 1, b, c * a))
        if b:
            z_terms.append((a, b - 1, c * b))

    def rhs(_t, y):
        rho, z, prho, pz = y
        frho = 0.0
        for a, b, c in rho_terms:
            frho += c * rho**a * z**b
        fz = 0.0
        for a, b, c in z_terms:
            fz += c * rho**a * z**b
        return (prho, pz, -frho, -fz)

    return rhs


def _escape_events(bound):
    def rho_escape(_t, y):
        return abs(y[0]) - bound

    def z_escape(_t, y):
        return abs(y[1]) - bound

    rho_escape.terminal = True
    z_escape.terminal = True
    return [rho_escape, z_escape]


def integrate(
    initial: OrbitState,
    T: float,
    tol: float = DEFAULT_TOL,
    potential: PotentialSpec | None = None,
    escape_bound: float = ESCAPE_BOUND,
    n_samples: int = 1000,
) -> Trajectory:
    """Integrate the orbit for time ``T`` (negative T integrates backward).

    Uses an adaptive 8th-order Runge-Kutta scheme (DOP853) with dense
    output; ``tol`` maps to relative tolerance, with the absolute tolerance
    two orders tighter.

    Raises
    ------
    EscapeDetected
        When |rho| or |z| exceeds ``escape_bound``.
    """
    V = build_builtin_model() if potential is None else potential
    sol = solve_ivp(
        _rhs_factory(V),
        (initial.t, initial.t + T),
        initial.as_array(),
        method="DOP853",
        rtol=tol * _RTOL_FACTOR,
        atol=tol * _ATOL_FACTOR,
        dense_output=True,
        events=_escape_events(escape_bound),
        t_eval=np.linspace(initial.t, initial.t + T, n_samples),
    )
    if sol.status == 1:  # terminated by an escape event
        times = np.concatenate([t for t in sol.t_events if t.size])
        t_esc = float(times.min())
        state = sol.sol(t_esc)
        raise EscapeDetected(t_esc, tuple(float(v) for v in state))
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    return Trajectory(times=sol.t, states=sol.y.T, dense=sol.sol, potential=V)


def section_seed_state(
    z: float, p_z: float, E: float, potential: PotentialSpec | None = None
) -> OrbitState:
    """Lift a section point (z, p_z) at energy E onto the section.

    Raises
    ------
    SeedOutsideCZVError
        If the point requires p_rho^2 < 0 at this energy.
    """
    V = build_builtin_model() if potential is None else potential
    radicand = 2.0 * (E - V.value(0.0, z)) - p_z**2
    if radicand <= 0.0:
        raise SeedOutsideCZVError(
            f"section point (z={z}, p_z={p_z}) is not accessible at E={E}"
        )
    return OrbitState(0.0, z, math.sqrt(radicand), p_z)


def poincare_section(
    seeds,
    E: float,
    n_crossings: int,
    tol: float = DEFAULT_TOL,
    potential: PotentialSpec | None = None,
    escape_bound: float = ESCAPE_BOUND,
    crossing_tol: float = 1e-12,
) -> SectionSet:
    """Record ``n_crossings`` section crossings for each (z, p_z) seed.

    Each crossing is a rho = 0 passage with p_rho > 0, localized on the
    dense output and polished until |rho| < ``crossing_tol``.

    Raises
    ------
    SeedOutsideCZVError
        For seeds outside the accessible section domain.
    EscapeDetected
        Propagated from the underlying integration.
    """
    V = build_builtin_model() if potential is None else potential
    rhs = _rhs_factory(V)
    rows = []
    for index, (z0, pz0) in enumerate(seeds):
        state = section_seed_state(z0, pz0, E, V)

        def crossing(_t, y):
            return y[0]

        crossing.terminal = False
        crossing.direction = 1.0
        events = _escape_events(escape_bound) + [crossing]
        # one in-plane revolution takes a few time units; budget generously
        t_max = 12.0 * (n_crossings + 2)
        sol = solve_ivp(
            rhs,
            (0.0, t_max),
            state.as_array(),
            method="DOP853",
            rtol=tol * _RTOL_FACTOR,
            atol=tol * _ATOL_FACTOR,
            dense_output=True,
            events=events,
        )
        if sol.status == 1:
            times = np.concatenate([t for t in sol.t_events[:2] if t.size])
            t_esc = float(times.min())
            raise EscapeDetected(t_esc, tuple(float(v) for v in sol.sol(t_esc)))
        for t_ev in sol.t_events[2][:n_crossings]:
            y = sol.sol(t_ev)
            # one Newton polish of the crossing time on the interpolant
            if abs(y[0]) > crossing_tol and y[2] != 0.0:
                t_ev = t_ev - y[0] / y[2]
                y = sol.sol(t_ev)
            rows.append((index, y[1], y[3], t_ev))
    points = np.array(rows, dtype=float) if rows else np.empty((0, 4))
    return SectionSet(energy=E, points=points, n_seeds=len(list(seeds)))


def equatorial_turning_point(E: float, potential: PotentialSpec | None = None):
    """Inner-branch turning radius of the equatorial orbit: V(rho, 0) = E."""
    V = build_builtin_model() if potential is None else potential
    e_crit = critical_energy(V)
    if not 0.0 < E < e_crit:
        raise ValueError(f"energy {E} outside the bound range (0, {e_crit:.6g})")
    profile = {a: c for (a, b), c in V.as_dict().items() if b == 0}
    deriv = {a: a * c for a, c in profile.items()}

    def dprofile(rho):
        return sum(c * rho ** (a - 1) for a, c in deriv.items())

    # the barrier radius bounds the inner branch
    rho_hi = 1.0
    while dprofile(rho_hi) > 0.0:
        rho_hi *= 1.5
        if rho_hi > 1e6:
            break
    rho_barrier = (
        brentq(dprofile, 1e-9, rho_hi) if dprofile(rho_hi) <= 0.0 else rho_hi
    )
    return brentq(lambda rho: V.value(rho, 0.0) - E, 1e-12, rho_barrier)


def central_orbit_monodromy(
    E: float,
    tol: float = DEFAULT_TOL,
    potential: PotentialSpec | None = None,
) -> MonodromyResult:
    """Monodromy matrix of the transverse (z, p_z) variations at energy E.

    Integrates the in-plane orbit from its turning point (rho_max, 0)
    together with two variational columns until p_rho returns to zero
    (half a period, by the rho -> -rho symmetry of the libration); the full
    monodromy matrix is the square of the half-period matrix because the
    variational coefficient d2V/dz2(rho(t), 0) is even in rho.
    """
    V = build_builtin_model() if potential is None else potential
    rho_max = equatorial_turning_point(E, V)
    rho_terms = [(a - 1, c * a) for (a, b), c in V.as_dict().items() if b == 0 and a]
    zz_terms = [(a, 2.0 * c) for (a, b), c in V.as_dict().items() if b == 2]

    def rhs(_t, y):
        rho, prho, dz1, dp1, dz2, dp2 = y
        force = 0.0
        for a, c in rho_terms:
            force += c * rho**a
        curv = 0.0
        for a, c in zz_terms:
            curv += c * rho**a
        return (prho, -force, dp1, -curv * dz1, dp2, -curv * dz2)

    def half_turn(_t, y):
        return y[1]

    half_turn.terminal = True
    half_turn.direction = 1.0  # p_rho rises back through zero at -rho_max
    sol = solve_ivp(
        rhs,
        (0.0, 1e4),
        np.array([rho_max, 0.0, 1.0, 0.0, 0.0, 1.0]),
        method="DOP853",
        rtol=tol * _RTOL_FACTOR,
        atol=tol * _ATOL_FACTOR,
        events=[half_turn],
    )
    if not sol.t_events[0].size:
        raise RuntimeError(f"no half period found at E={E}")
    t_half = float(sol.t_events[0][0])
    y = sol.y_events[0][0]
    half = np.array([[y[2], y[4]], [y[3], y[5]]])
    return MonodromyResult(
        energy=E, period=2.0 * t_half, matrix=half @ half, half_matrix=half
    )


def _half_trace(E, tol, potential):
    return float(np.trace(central_orbit_monodromy(E, tol, potential).half_matrix))


def numerical_bifurcation_energy(
    m1: int,
    m2: int,
    potential: PotentialSpec | None = None,
    bracket=(1e-3, 0.55),
    tol: float = 1e-11,
    xtol: float = 1e-10,
) -> float:
    """Energy where the transverse rotation number reaches m2/m1.

    The rotation number of small oscillations about the central orbit is
    theta/(2 pi) with cos(theta/2) = Tr(M_half)/2, single-valued below the
    1:1 transition, so the resonance condition m1 m2-fold is
    Tr(M_half)(E) = 2 cos(pi m2/m1).  The 1:1 case lands exactly on the
    stability transition energy.

    Raises
    ------
    NoBifurcationInRange
        If the target trace is not reached inside ``bracket``.
    """
    target = 2.0 * math.cos(math.pi * m2 / m1)

    def f(E):
        return _half_trace(E, tol, potential) - target

    # Tr(M_half) leaves (-2, 2) beyond the 1:1 transition and comes back at
    # higher energy (the orbit re-stabilizes), so scan for the first sign
    # change instead of trusting the interval endpoints.
    lo, hi = bracket
    grid = np.linspace(lo, hi, 34)
    f_left = f(float(grid[0]))
    for left, right in zip(grid, grid[1:]):
        if f_left == 0.0:
            return float(left)
        f_right = f(float(right))
        if f_left > 0.0 > f_right or f_left < 0.0 < f_right:
            return float(brentq(f, float(left), float(right), xtol=xtol))
        f_left = f_right
    raise NoBifurcationInRange(
        f"rotation number {m2}/{m1} not reached for E in [{lo}, {hi}]"
    )
