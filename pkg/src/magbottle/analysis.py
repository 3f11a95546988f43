"""Remainder norms, optimal-order scans, and normal-form bifurcations.

The truncated normal form leaves a remainder whose weighted norm measures
how well the formal integral is conserved near a section point with
in-plane energy E - dE and transverse energy dE.  Scanning the norm over
the normalization order r locates the optimal order r_opt where the
asymptotic series is best truncated; its scaling with dE carries the
power-law and exponentially-small signatures.

The normal form also predicts where the equatorial orbit bifurcates: the
m1:m2 resonance occurs at the action where m2 * omega_1,eq = m1 * omega_2
holds between the series-derived frequencies.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import FlatMinimumWarning, MultipleRootsWarning, NoRootError, RangeError
from .model import PreparedHamiltonian, critical_energy
from .normform import equatorial_energy_series, extract_omega2_squared, normalize
from .polyalg import _bk_orders, _exponents

__all__ = [
    "RemainderNormTable",
    "AsymptoticFit",
    "BifurcationResult",
    "RemainderProfile",
    "capture_remainder_profile",
    "remainder_norm",
    "optimal_order_scan",
    "bifurcation_energy",
    "chaos_threshold_convergence",
    "DEFAULT_DELTA_E_GRID",
]

#: log-uniform dE grid, 1e-5 .. 1e-1 at 5 points per decade
DEFAULT_DELTA_E_GRID = tuple(float(v) for v in np.logspace(-5.0, -1.0, 21))

#: fits are restricted to dE at or below this threshold
FIT_DELTA_E_MAX = 1e-3

#: reference scale of the exponential law
DELTA_E_0 = 1e-3


def _aggregate_slice(poly, lo, hi):
    """Compress orders [lo, hi] of ``poly`` to norm inputs.

    The norm weight of a term depends only on (k1+l1)/2, k2, (k2+l2)/2 and
    its order, so terms are binned accordingly: returns arrays
    (s, d1, k2, d2, weight) with weight the summed |coefficient|.
    """
    part = poly.restrict_bk(lo, hi)
    if part.nterms == 0:
        empty = np.empty(0)
        return empty.astype(int), empty.astype(int), empty.astype(int), empty.astype(int), empty
    k1, l1, k2, l2 = _exponents(part._keys)
    s = _bk_orders(part._keys)
    d1 = (k1.astype(int) + l1) // 2
    d2 = (k2.astype(int) + l2) // 2
    packed = ((s.astype(np.int64) * 256 + d1) * 256 + k2) * 256 + d2
    uniq, inverse = np.unique(packed, return_inverse=True)
    weight = np.bincount(inverse, weights=np.abs(part._coeffs))
    d2u = uniq % 256
    k2u = (uniq // 256) % 256
    d1u = (uniq // 256**2) % 256
    su = uniq // 256**3
    return su.astype(int), d1u.astype(int), k2u.astype(int), d2u.astype(int), weight


class RemainderProfile:
    """Per-order remainder data captured during one normalization run.

    For each order r in 1..r_max the profile stores the aggregated terms
    of orders r+1..N of H^(r), which is what the norm of R^(r,N) sums.
    ``omega2sq`` maps the estimated action to the transverse frequency
    squared (a series in the nonresonant mode, the constant (omega2*)^2 in
    the resonant mode).
    """

    def __init__(self, mode, omega_ref, omega2sq, N, slices):
        self.mode = mode
        self.omega_ref = omega_ref
        self._omega2sq = omega2sq
        self.N = N
        self._slices = slices

    @property
    def orders(self):
        return sorted(self._slices)

    def norm(self, r, N, E, delta_E, beta=0.0):
        """Weighted norm of R^(r,N) at section parameters (E, dE, beta)."""
        if r not in self._slices:
            raise RangeError(f"order {r} not captured (have 1..{max(self._slices)})")
        if not r < N <= self.N:
            raise RangeError(f"need r < N <= {self.N}, got r={r}, N={N}")
        if not 0.0 <= delta_E < E:
            raise RangeError(f"need 0 <= delta_E < E, got delta_E={delta_E}, E={E}")
        s, d1, k2, d2, w = self._slices[r]
        action = (E - delta_E) / self.omega_ref
        spread = 2.0 * delta_E / (1.0 + beta**2 * self._omega2sq(action) * action)
        keep = s <= N
        terms = (
            w[keep]
            * action ** d1[keep]
            * float(abs(beta)) ** k2[keep]
            * spread ** d2[keep]
        )
        return float(terms.sum())


def _series_value(items, action):
    return sum(c * action**n for n, c in items)


def _constant_value(value, action):
    return value


def _omega2sq_from_series(series):
    return functools.partial(_series_value, tuple(sorted(series.items())))


def capture_remainder_profile(
    prepared: PreparedHamiltonian, N: int = 20
) -> RemainderProfile:
    """Normalize to order N-1 and capture every R^(r,N) along the way."""
    slices = {}

    def snap(r, ham):
        slices[r] = _aggregate_slice(ham, r + 1, N)

    state = normalize(prepared, r_max=N - 1, r_trunc=N, step_callback=snap)
    if prepared.mode == "resonant":
        omega2_star = prepared.resonance.omega2
        omega2sq = functools.partial(_constant_value, omega2_star**2)
        omega_ref = prepared.resonance.omega1
    else:
        omega2sq = _omega2sq_from_series(extract_omega2_squared(state))
        omega_ref = prepared.omega10
    return RemainderProfile(prepared.mode, omega_ref, omega2sq, N, slices)


def remainder_norm(state, r, N, E, delta_E, beta=0.0) -> float:
    """Weighted norm of the order r+1..N remainder of a normalized state.

    The state must be normalized exactly to r: earlier orders of the
    transformation history are not recoverable from a deeper state (use
    ``capture_remainder_profile`` for whole-scan work).

    Raises
    ------
    RangeError
        On r != state.r, N out of (r, r_trunc], or delta_E outside [0, E).
    """
    if r != state.r:
        raise RangeError(f"state is normalized to r={state.r}, not r={r}")
    if not r < N <= state.r_trunc:
        raise RangeError(f"need r < N <= {state.r_trunc}, got N={N}")
    if not 0.0 <= delta_E < E:
        raise RangeError(f"need 0 <= delta_E < E, got delta_E={delta_E}, E={E}")
    if state.mode == "resonant":
        res = state.prepared.resonance
        omega2sq = lambda action: res.omega2**2  # noqa: E731
        omega_ref = res.omega1
    else:
        omega2sq = _omega2sq_from_series(extract_omega2_squared(state))
        omega_ref = state.prepared.omega10
    profile = RemainderProfile(
        state.mode,
        omega_ref,
        omega2sq,
        N,
        {r: _aggregate_slice(state.hamiltonian, r + 1, N)},
    )
    return profile.norm(r, N, E, delta_E, beta)


@dataclass
class RemainderNormTable:
    """Norm curves r -> ||R^(r,N)|| per dE at fixed (mode, E, beta)."""

    mode: str
    energy: float
    beta: float
    N: int
    rows: list = field(default_factory=list)  # (delta_E, r, N, norm)

    def curve(self, delta_E):
        """The r -> norm mapping for one dE value."""
        return {r: v for dE, r, _N, v in self.rows if dE == delta_E}


@dataclass(frozen=True)
class AsymptoticFit:
    """Optimal orders per dE and the two fitted scaling laws.

    ``alpha`` is the power-law exponent of r_opt ~ dE^(-alpha);
    ``d`` the stretched-exponent of ||R_opt|| ~ exp(-(dE0/dE)^d).  Both
    fits are least squares on log-transformed data over dE <= fit_max.
    """

    r_opt: dict
    optimal_norms: dict
    alpha: float
    alpha_rms: float
    d: float
    d_rms: float
    delta_E_0: float
    fit_max: float


def _log_fit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    rms = float(np.sqrt(np.mean((np.polyval([slope, intercept], x) - y) ** 2)))
    return float(slope), rms


def optimal_order_scan(
    profile: RemainderProfile,
    E: float,
    beta: float = 0.0,
    delta_E_grid=DEFAULT_DELTA_E_GRID,
    fit_max: float = FIT_DELTA_E_MAX,
):
    """Locate r_opt per dE and fit the two asymptotic laws.

    Returns (RemainderNormTable, AsymptoticFit).  Emits
    FlatMinimumWarning when a minimum sits at the last captured order,
    i.e. the scan cannot certify it as interior.
    """
    N = profile.N
    table = RemainderNormTable(mode=profile.mode, energy=E, beta=beta, N=N)
    r_opt = {}
    optimal_norms = {}
    for dE in delta_E_grid:
        curve = {}
        for r in profile.orders:
            value = profile.norm(r, N, E, dE, beta)
            curve[r] = value
            table.rows.append((float(dE), int(r), int(N), float(value)))
        best = min(curve, key=curve.get)
        if best == max(profile.orders):
            warnings.warn(
                f"remainder minimum at the last scanned order r={best} "
                f"for delta_E={dE:g}; the optimum is not bracketed",
                FlatMinimumWarning,
                stacklevel=2,
            )
        r_opt[float(dE)] = int(best)
        optimal_norms[float(dE)] = float(curve[best])
    fit_dEs = sorted(dE for dE in r_opt if dE <= fit_max)
    log_dE = np.log([dE for dE in fit_dEs])
    alpha_slope, alpha_rms = _log_fit(log_dE, np.log([r_opt[dE] for dE in fit_dEs]))
    d_slope, d_rms = _log_fit(
        log_dE, np.log(np.abs(np.log([optimal_norms[dE] for dE in fit_dEs])))
    )
    fit = AsymptoticFit(
        r_opt=r_opt,
        optimal_norms=optimal_norms,
        alpha=-alpha_slope,
        alpha_rms=alpha_rms,
        d=-d_slope,
        d_rms=d_rms,
        delta_E_0=DELTA_E_0,
        fit_max=fit_max,
    )
    return table, fit


@dataclass(frozen=True)
class BifurcationResult:
    """An m1:m2 resonance of the equatorial orbit located on the series."""

    m1: int
    m2: int
    I1_star: float
    omega1: float
    omega2: float
    energy: float


def _series_functions(energy_series, omega2_series):
    def Z_eq(I):
        return sum(c * I**n for n, c in energy_series.items())

    def omega1_eq(I):
        return sum(n * c * I ** (n - 1) for n, c in energy_series.items())

    def omega2sq(I):
        return sum(c * I**n for n, c in omega2_series.items())

    return Z_eq, omega1_eq, omega2sq


def _action_ceiling(Z_eq, omega1_eq, e_crit):
    """Largest action the series can be trusted on: the equatorial energy
    reaching the escape threshold or the series turning over, whichever
    comes first."""
    I = 1e-3
    while omega1_eq(I) > 0.0 and Z_eq(I) < e_crit and I < 1e3:
        I *= 1.05
    return I


def _solve_resonance(energy_series, omega2_series, m1, m2, e_crit):
    Z_eq, omega1_eq, omega2sq = _series_functions(energy_series, omega2_series)

    def detune(I):
        return m2 * omega1_eq(I) - m1 * math.sqrt(omega2sq(I))

    I_hi = _action_ceiling(Z_eq, omega1_eq, e_crit)
    grid = np.linspace(1e-6, I_hi, 512)
    values = np.array([detune(I) for I in grid])
    flips = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)[0]
    if flips.size == 0:
        raise NoRootError(
            f"no {m1}:{m2} resonance of the equatorial orbit for "
            f"I1 in [0, {I_hi:.4g}]"
        )
    if flips.size > 1:
        warnings.warn(
            f"{flips.size} sign changes of the {m1}:{m2} resonance "
            "condition; returning the smallest root",
            MultipleRootsWarning,
            stacklevel=3,
        )
    i = int(flips[0])
    I_star = brentq(detune, grid[i], grid[i + 1], xtol=1e-14)
    return BifurcationResult(
        m1=int(m1),
        m2=int(m2),
        I1_star=float(I_star),
        omega1=float(omega1_eq(I_star)),
        omega2=float(math.sqrt(omega2sq(I_star))),
        energy=float(Z_eq(I_star)),
    )


def bifurcation_energy(state, m1: int, m2: int) -> BifurcationResult:
    """Action, frequencies, and energy of the m1:m2 equatorial resonance.

    Solves m2 * omega_1,eq(I1) = m1 * omega_2(I1) on the series of a
    nonresonant state by bracketed root-finding over [0, I_max], with
    I_max set by the equatorial energy reaching the escape threshold.

    Raises
    ------
    NoRootError
        If the resonance condition has no sign change below I_max.
    """
    e_series = equatorial_energy_series(state)
    w_series = extract_omega2_squared(state)
    e_crit = critical_energy(state.prepared.potential)
    return _solve_resonance(e_series, w_series, m1, m2, e_crit)


def _truncated(series, n_max):
    return {n: c for n, c in series.items() if n <= n_max}


def chaos_threshold_convergence(state, orders, reference_energy=None):
    """1:1 transition estimate per normalization order.

    Reuses one deep nonresonant state: the normal-form coefficients of
    order s are final once s <= r, so the order-r estimate solves the
    series truncated to r.  Returns rows (r, energy, error) with error
    relative to ``reference_energy`` (None leaves it None).
    """
    e_series = equatorial_energy_series(state)
    w_series = extract_omega2_squared(state)
    e_crit = critical_energy(state.prepared.potential)
    rows = []
    for r in orders:
        if r > state.r:
            raise RangeError(f"state is normalized to r={state.r}, cannot report r={r}")
        result = _solve_resonance(
            _truncated(e_series, r + 1), _truncated(w_series, r), 1, 1, e_crit
        )
        error = None
        if reference_energy is not None:
            error = float(result.energy - reference_energy)
        rows.append((int(r), float(result.energy), error))
    return rows
