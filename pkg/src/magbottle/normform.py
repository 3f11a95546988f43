"""Recursive Lie-series normalization of prepared Hamiltonians.

Each step r splits the book-keeping-order-r part of the working Hamiltonian
into its normal-form component (terms inside the kernel set) and the rest,
solves the homological equation ``{Z_0, chi_r} = -Htilde_r`` for a generator,
and pushes the Hamiltonian through ``exp(L_chi_r)``.  After ``r_max`` steps
the orders 0..r_max hold the normal form Z and the higher orders hold the
remainder.

Two kernel sets are supported: the nonresonant set built on the nilpotent
quadratic part ``i w10 q1 p1 + p2^2/2`` (bidiagonal block solve by backward
substitution) and the resonant set for an m1:m2 periodic-orbit resonance
(diagonal per-monomial solve with a small-divisor guard).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InconsistentBlockError,
    ModeError,
    NonRealIntegralError,
    OrderOverflowError,
    SmallDivisorError,
)
from .model import PreparedHamiltonian
from .polyalg import (
    CanonicalPolynomial,
    _exponents,
    lie_transform,
    poisson_bracket,
)

__all__ = [
    "DEFAULT_ORDER",
    "DEFAULT_TRUNC",
    "KernelSet",
    "NormalizationState",
    "solve_homological_nonresonant",
    "solve_homological_resonant",
    "normalize",
    "extract_omega2_squared",
    "equatorial_energy_series",
]

DEFAULT_ORDER = 15
DEFAULT_TRUNC = 20

#: absolute tolerance on the consistency entry of a k=l block
BLOCK_TOL = 1e-12
#: resonant solver refuses divisors below this magnitude
DIVISOR_FLOOR = 1e-9

_MINUS_I_POW = (1.0 + 0.0j, -1.0j, -1.0 + 0.0j, 1.0j)


class KernelSet:
    """Predicate selecting the monomials kept in the normal form.

    The nonresonant variant keeps terms with k1 = l1 that either carry no
    p2 (when k1 + l1 > 0) or are exactly p2^2 (when k1 + l1 = 0).  The
    resonant variant for an m1:m2 resonance keeps terms with
    (k1 - l1) m1 + (k2 - l2) m2 = 0.
    """

    __slots__ = ("variant", "m1", "m2")

    def __init__(self, variant, m1=0, m2=0):
        if variant not in ("nonresonant", "resonant"):
            raise ValueError(f"unknown kernel variant {variant!r}")
        self.variant = variant
        self.m1 = int(m1)
        self.m2 = int(m2)

    @classmethod
    def nonresonant(cls):
        return cls("nonresonant")

    @classmethod
    def resonant(cls, m1, m2):
        if m1 <= 0 or m2 <= 0:
            raise ValueError("resonance indices must be positive integers")
        return cls("resonant", m1, m2)

    def mask(self, k1, l1, k2, l2):
        """Vectorized predicate over exponent arrays."""
        if self.variant == "nonresonant":
            trans = (k1 + l1 > 0) & (l2 == 0)
            axis = (k1 + l1 == 0) & (k2 == 0) & (l2 == 2)
            return (k1 == l1) & (trans | axis)
        return (k1 - l1) * self.m1 + (k2 - l2) * self.m2 == 0

    def __call__(self, key):
        k1, l1, k2, l2 = (int(e) for e in key)
        if self.variant == "nonresonant":
            if k1 != l1:
                return False
            if k1 + l1 == 0:
                return k2 == 0 and l2 == 2
            return l2 == 0
        return (k1 - l1) * self.m1 + (k2 - l2) * self.m2 == 0

    def __repr__(self):
        if self.variant == "nonresonant":
            return "KernelSet.nonresonant()"
        return f"KernelSet.resonant({self.m1}, {self.m2})"


def _partition(poly, kernel):
    """Split ``poly`` into (kernel part, complement) preserving truncation."""
    if poly.nterms == 0:
        return poly, poly
    mask = kernel.mask(*_exponents(poly._keys))
    inside = CanonicalPolynomial(
        poly._keys[mask],
        poly._coeffs[mask],
        poly.trunc_order,
        poly.degree_cap,
        _canonical=True,
    )
    outside = CanonicalPolynomial(
        poly._keys[~mask],
        poly._coeffs[~mask],
        poly.trunc_order,
        poly.degree_cap,
        _canonical=True,
    )
    return inside, outside


def solve_homological_nonresonant(
    htilde: CanonicalPolynomial, omega10: float, r: int
) -> CanonicalPolynomial:
    """Generator chi_r with ``{Z_0, chi_r} = -Htilde_r`` in nonresonant mode.

    ``Z_0 = i w10 q1 p1 + p2^2/2`` acts block-diagonally on the (k1, l1)
    exponent pairs: within a block the q2-ladder gives a bidiagonal system
    with diagonal ``i (l1 - k1) w10`` and subdiagonal from ``p2^2/2``, solved
    by backward substitution.  In a k1 = l1 block the diagonal vanishes; the
    free coefficient is set to zero and the top entry must vanish, which is
    guaranteed when the kernel predicate removed every pure-q2 term.

    Raises
    ------
    InconsistentBlockError
        If a k1 = l1 block has a pure-q2 entry above ``BLOCK_TOL``.
    """
    if htilde.nterms == 0:
        return CanonicalPolynomial.zero(htilde.trunc_order, htilde.degree_cap)
    keys = htilde._keys
    coeffs = htilde._coeffs
    k1, l1, k2, l2 = _exponents(keys)
    degree = int(2 * r + 2)
    if not np.all(k1 + l1 + k2 + l2 == degree):
        raise ValueError(f"terms of order {r} must have polynomial degree {degree}")
    out = []
    block_ids = (k1.astype(np.int64) << 8) | l1.astype(np.int64)
    for block in np.unique(block_ids):
        sel = block_ids == block
        k = int(block >> 8)
        l = int(block & 0xFF)
        span = degree - k - l
        h = np.zeros(span + 1, dtype=np.complex128)
        h[k2[sel]] = coeffs[sel]
        b = np.zeros(span + 1, dtype=np.complex128)
        if k != l:
            c = 1j * (l - k) * omega10
            b[span] = -h[span] / c
            for n in range(span - 1, -1, -1):
                b[n] = ((n + 1) * b[n + 1] - h[n]) / c
        else:
            if abs(h[span]) > BLOCK_TOL:
                raise InconsistentBlockError(
                    f"k=l block ({k},{l}) at order {r} has pure-q2 entry "
                    f"{abs(h[span]):.3e} (tol {BLOCK_TOL:g}); a term outside "
                    "the admissible class reached the solver"
                )
            for n in range(span):
                b[n + 1] = h[n] / (n + 1)
        for n in range(span + 1):
            if b[n] != 0.0:
                out.append(((k, l, n, span - n), b[n], r))
    return CanonicalPolynomial.from_terms(
        out, trunc_order=htilde.trunc_order, degree_cap=htilde.degree_cap
    )


def solve_homological_resonant(
    htilde: CanonicalPolynomial,
    omega1: float,
    omega2: float,
    m1: int,
    m2: int,
    divisor_floor: float = DIVISOR_FLOOR,
) -> CanonicalPolynomial:
    """Generator chi_r with ``{Z_0, chi_r} = -Htilde_r`` in resonant mode.

    ``Z_0 = i w1 q1 p1 + i w2 q2 p2`` is diagonal on monomials, so each
    coefficient is divided by ``i ((k1-l1) w1 + (k2-l2) w2)``.

    Raises
    ------
    SmallDivisorError
        If a divisor magnitude falls below ``divisor_floor``, reporting the
        offending exponent key.
    """
    if htilde.nterms == 0:
        return CanonicalPolynomial.zero(htilde.trunc_order, htilde.degree_cap)
    k1, l1, k2, l2 = _exponents(htilde._keys)
    dk1 = k1.astype(np.int64) - l1
    dk2 = k2.astype(np.int64) - l2
    if np.any(dk1 * m1 + dk2 * m2 == 0):
        raise ValueError(
            f"terms inside the {m1}:{m2} kernel must not reach the resonant solver"
        )
    divisor = dk1 * omega1 + dk2 * omega2
    small = np.abs(divisor) < divisor_floor
    if np.any(small):
        i = int(np.argmax(small))
        key = (int(k1[i]), int(l1[i]), int(k2[i]), int(l2[i]))
        raise SmallDivisorError(key, float(divisor[i]), divisor_floor)
    return CanonicalPolynomial(
        htilde._keys.copy(),
        htilde._coeffs / (1j * divisor),
        htilde.trunc_order,
        htilde.degree_cap,
        _canonical=True,
    )


@dataclass
class NormalizationState:
    """Result of ``r`` normalization steps.

    ``hamiltonian`` is the full transformed Hamiltonian H^(r) truncated at
    ``r_trunc``; orders 0..r form the normal form and orders r+1..r_trunc
    the remainder.  ``residuals`` holds per-step pairs (infinity norm of
    ``{Z_0, chi_r} + Htilde_r``, infinity norm of ``Htilde_r``).
    """

    prepared: PreparedHamiltonian
    r: int
    r_trunc: int
    hamiltonian: CanonicalPolynomial
    generators: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def mode(self):
        return self.prepared.mode

    @property
    def kernel(self):
        if self.mode == "nonresonant":
            return KernelSet.nonresonant()
        res = self.prepared.resonance
        return KernelSet.resonant(res.m1, res.m2)

    @property
    def Z(self):
        """Normal-form parts per book-keeping order, list of length r+1."""
        return [self.hamiltonian.bk_part(s) for s in range(self.r + 1)]

    @property
    def normal_form(self):
        """Orders 0..r of the transformed Hamiltonian as one polynomial."""
        return self.hamiltonian.restrict_bk(0, self.r)

    @property
    def remainder(self):
        """Orders r+1..r_trunc of the transformed Hamiltonian."""
        return self.hamiltonian.restrict_bk(self.r + 1, self.r_trunc)


def normalize(
    prepared: PreparedHamiltonian,
    r_max: int,
    r_trunc: int = DEFAULT_TRUNC,
    step_callback=None,
    divisor_floor: float = DIVISOR_FLOOR,
) -> NormalizationState:
    """Run ``r_max`` normalization steps, truncating at order ``r_trunc``.

    After each step the order-r slice is replaced by its exact kernel part:
    the transform cancels the non-kernel terms only to rounding, and the
    leftover dust would otherwise pollute the normal form.  The per-step
    cancellation quality is recorded in ``state.residuals``.

    ``step_callback(r, hamiltonian)``, when given, observes the working
    Hamiltonian after each step; it must not mutate it.

    Raises
    ------
    OrderOverflowError
        If ``r_max > r_trunc``.
    """
    if r_max < 0:
        raise ValueError(f"r_max must be non-negative, got {r_max}")
    if r_max > r_trunc:
        raise OrderOverflowError(
            f"normalization order {r_max} exceeds truncation order {r_trunc}"
        )
    if prepared.mode == "nonresonant":
        kernel = KernelSet.nonresonant()
    else:
        res = prepared.resonance
        kernel = KernelSet.resonant(res.m1, res.m2)
    ham = prepared.poly.copy(trunc_order=r_trunc)
    z0 = ham.bk_part(0)
    state = NormalizationState(
        prepared=prepared, r=0, r_trunc=r_trunc, hamiltonian=ham
    )
    for r in range(1, r_max + 1):
        order_part = ham.bk_part(r)
        inside, htilde = _partition(order_part, kernel)
        if htilde.nterms:
            if prepared.mode == "nonresonant":
                chi = solve_homological_nonresonant(htilde, prepared.omega10, r)
            else:
                chi = solve_homological_resonant(
                    htilde,
                    prepared.resonance.omega1,
                    prepared.resonance.omega2,
                    prepared.resonance.m1,
                    prepared.resonance.m2,
                    divisor_floor,
                )
            residual = poisson_bracket(z0, chi) + htilde
            state.residuals.append((residual.max_abs(), htilde.max_abs()))
            ham = lie_transform(ham, chi)
            # replace the order-r slice with its exact kernel part
            ham = ham.restrict_bk(0, r - 1) + inside + ham.restrict_bk(r + 1, r_trunc)
        else:
            chi = CanonicalPolynomial.zero(r_trunc, ham.degree_cap)
            state.residuals.append((0.0, 0.0))
        state.generators.append(chi)
        state.r = r
        state.hamiltonian = ham
        if step_callback is not None:
            step_callback(r, ham)
    return state


def _real_series_coefficient(gamma, n):
    """Real c with c * i^n = gamma, for coefficients of (i q1 p1)^n terms."""
    c = gamma * _MINUS_I_POW[n % 4]
    if abs(c.imag) > 1e-10 * max(1.0, abs(c)):
        raise NonRealIntegralError(
            f"coefficient {gamma} at action power {n} is not real after "
            "de-complexification"
        )
    return float(c.real)


def extract_omega2_squared(state: NormalizationState) -> dict:
    """Transverse frequency series: w2^2(I1) = sum_n w_n I1^n, n = 1..r.

    Reads the I1^n q2^2 coefficients of the nonresonant normal form, where
    I1 = i q1 p1, and doubles them.

    Raises
    ------
    ModeError
        If the state is resonant; the resonant normal form has no
        single-frequency q2^2 ladder.
    """
    if state.mode != "nonresonant":
        raise ModeError("omega2^2 extraction requires a nonresonant normal form")
    series = {}
    for n in range(1, state.r + 1):
        gamma = state.hamiltonian.coefficient(n, n, 2, 0, bk=n)
        series[n] = 2.0 * _real_series_coefficient(gamma, n)
    return series


def equatorial_energy_series(state: NormalizationState) -> dict:
    """Equatorial energy Z(I1) = sum_n e_n I1^n, n = 1..r+1.

    Reads the pure-action terms of the nonresonant normal form (q2 = p2 = 0).

    Raises
    ------
    ModeError
        If the state is resonant.
    """
    if state.mode != "nonresonant":
        raise ModeError("equatorial series extraction requires a nonresonant state")
    series = {}
    for n in range(1, state.r + 2):
        gamma = state.hamiltonian.coefficient(n, n, 0, 0, bk=n - 1)
        series[n] = _real_series_coefficient(gamma, n)
    return series
