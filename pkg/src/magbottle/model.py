"""Magnetic-bottle potentials and their complexified Hamiltonians.

The model is planar motion in the meridian plane of an axisymmetric
magnetic bottle with zero angular momentum:

    H(rho, z, p_rho, p_z) = (p_rho^2 + p_z^2)/2 + V(rho, z)

with a polynomial potential V.  This module owns the potential
representation (:class:`PotentialSpec`), a text parser for user-supplied
potentials, and the two canonical preparations consumed by the normal-form
pipeline:

* :func:`complexify_nonresonant` rotates the elliptic (rho, p_rho) pair to
  complex variables so the quadratic part becomes ``i w10 q1 p1 + p2^2/2``
  and grades each degree-(2s+2) block with book-keeping order ``s``.
* :func:`prepare_resonant` additionally complexifies the (z, p_z) pair at a
  resonant frequency ``w2*`` and moves the detuning terms to book-keeping
  order 1, so the order-0 part is ``i w1* q1 p1 + i w2* q2 p2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidFrequencyError,
    MissingQuadraticError,
    NonPolynomialError,
    ParseError,
    UnsupportedPotentialError,
)
from .polyalg import CanonicalPolynomial

_IPOW = (1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j)

_BUILTIN_TERMS = {
    (2, 0): 0.5,
    (2, 2): 0.5,
    (4, 0): -0.125,
    (2, 4): 0.125,
    (4, 2): -0.0625,
    (6, 0): 1.0 / 128.0,
}


class PotentialSpec:
    """Polynomial potential ``V(rho, z) = sum c[a, b] rho^a z^b``.

    Parameters
    ----------
    terms : mapping
        ``{(a, b): c}`` with integer exponents ``a, b >= 0``.  Zero
        coefficients are dropped.
    source : str
        ``"builtin"`` or ``"parsed"``.
    """

    __slots__ = ("_terms", "source")

    def __init__(self, terms, source="parsed"):
        cleaned = {}
        for (a, b), c in terms.items():
            a, b = int(a), int(b)
            if a < 0 or b < 0:
                raise NonPolynomialError(f"negative exponent in rho^{a}*z^{b}")
            c = float(c)
            if c != 0.0:
                cleaned[(a, b)] = c
        self._terms = dict(sorted(cleaned.items()))
        self.source = source

    def as_dict(self):
        """Return ``{(a, b): c}`` for the non-zero monomials."""
        return dict(self._terms)

    def coefficient(self, a, b):
        """Coefficient of ``rho^a z^b`` (0.0 if absent)."""
        return self._terms.get((int(a), int(b)), 0.0)

    @property
    def max_degree(self):
        return max((a + b for a, b in self._terms), default=0)

    def value(self, rho, z):
        """Evaluate V; broadcasts over array inputs."""
        return self._accumulate(rho, z, lambda a, b, c, r, zz: c * r**a * zz**b)

    def partial_rho(self, rho, z):
        """dV/drho; broadcasts over array inputs."""
        return self._accumulate(
            rho, z, lambda a, b, c, r, zz: c * a * r ** (a - 1) * zz**b if a else None
        )

    def partial_z(self, rho, z):
        """dV/dz; broadcasts over array inputs."""
        return self._accumulate(
            rho, z, lambda a, b, c, r, zz: c * b * r**a * zz ** (b - 1) if b else None
        )

    def partial_zz(self, rho, z):
        """d2V/dz2; broadcasts over array inputs."""
        return self._accumulate(
            rho,
            z,
            lambda a, b, c, r, zz: c * b * (b - 1) * r**a * zz ** (b - 2)
            if b >= 2
            else None,
        )

    def _accumulate(self, rho, z, term):
        rho = np.asarray(rho, dtype=float)
        z = np.asarray(z, dtype=float)
        out = np.zeros(np.broadcast(rho, z).shape)
        for (a, b), c in self._terms.items():
            contrib = term(a, b, c, rho, z)
            if contrib is not None:
                out = out + contrib
        return float(out) if out.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, PotentialSpec):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(tuple(self._terms.items()))

    def __repr__(self):
        return f"PotentialSpec({potential_to_text(self)!r}, source={self.source!r})"


def build_builtin_model() -> PotentialSpec:
    """The magnetic-bottle potential with B0 = 2 and beta1 = 1.

    V = rho^2/2 + rho^2 z^2/2 - rho^4/8 + rho^2 z^4/8 - rho^4 z^2/16
        + rho^6/128.
    """
    return PotentialSpec(_BUILTIN_TERMS, source="builtin")


def potential_to_text(spec: PotentialSpec) -> str:
    """Render a potential in the grammar accepted by :func:`parse_potential`.

    Terms are sorted by total degree, then by rho power, and coefficients
    use shortest-round-trip floats, so parsing the result reproduces the
    spec exactly.
    """
    parts = []
    for (a, b), c in sorted(spec.as_dict().items(), key=lambda kv: (sum(kv[0]), kv[0])):
        factors = [repr(abs(c))]
        for name, e in (("rho", a), ("z", b)):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        piece = "*".join(factors)
        if not parts:
            parts.append(piece if c > 0 else f"-{piece}")
        else:
            parts.append(f"{'+' if c > 0 else '-'} {piece}")
    return " ".join(parts) if parts else "0"


_NUMBER_RE = re.compile(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_INT_RE = re.compile(r"\d+")


class _Parser:
    """Recursive-descent parser producing ``{(a, b): coeff}`` dictionaries.

    Grammar (whitespace insignificant)::

        expr   := ['+'|'-'] term (('+'|'-') term)*
        term   := factor (('*'|'/') factor)*
        factor := atom ['^' ['-'] integer]
        atom   := number | 'rho' | 'z' | '(' expr ')'

    Division is only defined by a non-zero constant, and exponents must be
    non-negative integers; violations raise :class:`NonPolynomialError`.
    """

    def __init__(self, text):
        self.text = text
        self.pos = 0

    def parse(self):
        poly = self._expr()
        self._skip_ws()
        if self.pos != len(self.text):
            self._fail(f"unexpected character {self.text[self.pos]!r}")
        return poly

    # ------------------------------------------------------------- plumbing

    def _line_col(self, pos):
        line = self.text.count("\n", 0, pos) + 1
        col = pos - self.text.rfind("\n", 0, pos)
        return line, col

    def _fail(self, message, pos=None):
        line, col = self._line_col(self.pos if pos is None else pos)
        raise ParseError(message, line=line, col=col)

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self):
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    # -------------------------------------------------------------- grammar

    def _expr(self):
        sign = 1.0
        ch = self._peek()
        if ch in ("+", "-"):
            sign = -1.0 if ch == "-" else 1.0
            self.pos += 1
        poly = _pscale(self._term(), sign)
        while True:
            ch = self._peek()
            if ch not in ("+", "-"):
                return poly
            self.pos += 1
            rhs = self._term()
            poly = _padd(poly, _pscale(rhs, -1.0 if ch == "-" else 1.0))

    def _term(self):
        poly = self._factor()
        while True:
            ch = self._peek()
            if ch == "*":
                self.pos += 1
                poly = _pmul(poly, self._factor())
            elif ch == "/":
                self.pos += 1
                divisor = self._factor()
                if set(divisor) - {(0, 0)}:
                    raise NonPolynomialError(
                        "division by an expression containing rho or z"
                    )
                value = divisor.get((0, 0), 0.0)
                if value == 0.0:
                    raise NonPolynomialError("division by zero")
                poly = _pscale(poly, 1.0 / value)
            else:
                return poly

    def _factor(self):
        poly = self._atom()
        if self._peek() == "^":
            self.pos += 1
            exponent = self._exponent()
            result = {(0, 0): 1.0}
            for _ in range(exponent):
                result = _pmul(result, poly)
            poly = result
        return poly

    def _exponent(self):
        self._skip_ws()
        start = self.pos
        negative = False
        if self.pos < len(self.text) and self.text[self.pos] in "+-":
            negative = self.text[self.pos] == "-"
            self.pos += 1
        match = _INT_RE.match(self.text, self.pos)
        if match is None:
            self._fail("expected an integer exponent after '^'", pos=start)
        self.pos = match.end()
        if self.pos < len(self.text) and self.text[self.pos] == ".":
            raise NonPolynomialError(f"fractional exponent near offset {start}")
        value = int(match.group())
        if negative:
            raise NonPolynomialError(f"negative exponent -{value}")
        if value > 127:
            self._fail(f"exponent {value} too large", pos=start)
        return value

    def _atom(self):
        ch = self._peek()
        if ch == "":
            self._fail("unexpected end of input")
        if ch == "(":
            self.pos += 1
            poly = self._expr()
            if self._peek() != ")":
                self._fail("expected ')'")
            self.pos += 1
            return poly
        if ch in ("+", "-"):
            sign = -1.0 if ch == "-" else 1.0
            self.pos += 1
            return _pscale(self._factor(), sign)
        match = _NUMBER_RE.match(self.text, self.pos)
        if match is not None:
            self.pos = match.end()
            return {(0, 0): float(match.group())}
        match = _NAME_RE.match(self.text, self.pos)
        if match is not None:
            name = match.group()
            if name == "rho":
                self.pos = match.end()
                return {(1, 0): 1.0}
            if name == "z":
                self.pos = match.end()
                return {(0, 1): 1.0}
            self._fail(f"unknown symbol {name!r}")
        self._fail(f"unexpected character {ch!r}")


def _padd(u, v):
    out = dict(u)
    for key, c in v.items():
        out[key] = out.get(key, 0.0) + c
    return out


def _pscale(u, s):
    return {key: c * s for key, c in u.items()}


def _pmul(u, v):
    out = {}
    for (a1, b1), c1 in u.items():
        for (a2, b2), c2 in v.items():
            key = (a1 + a2, b1 + b2)
            out[key] = out.get(key, 0.0) + c1 * c2
    return out


def parse_potential(text: str) -> PotentialSpec:
    """Parse a potential expression such as ``"0.5*rho^2 - 1/8*rho^4"``.

    Raises
    ------
    ParseError
        On malformed syntax, with 1-based line and column.
    NonPolynomialError
        On negative or fractional exponents, or division by anything other
        than a non-zero constant.
    """
    if not text.strip():
        raise ParseError("empty potential expression")
    return PotentialSpec(_Parser(text).parse(), source="parsed")


def critical_energy(spec: PotentialSpec) -> float:
    """Energy of the lowest barrier of the equatorial profile V(rho, 0).

    Returns ``inf`` when the profile has no local maximum at rho > 0 (a
    globally confining potential).  For the builtin model this is 16/27 at
    rho = sqrt(8/3).
    """
    profile = {a: c for (a, b), c in spec.as_dict().items() if b == 0}
    if not profile:
        return math.inf
    deg = max(profile)
    dcoeffs = np.zeros(deg)  # d/drho, highest power first
    for a, c in profile.items():
        if a >= 1:
            dcoeffs[deg - a] = a * c
    roots = np.roots(dcoeffs)
    barrier = math.inf
    for root in roots:
        if abs(root.imag) > 1e-9 or root.real <= 1e-12:
            continue
        rho = float(root.real)
        curvature = sum(
            c * a * (a - 1) * rho ** (a - 2) for a, c in profile.items() if a >= 2
        )
        if curvature < 0.0:
            barrier = min(barrier, spec.value(rho, 0.0))
    return barrier


@dataclass(frozen=True)
class Resonance:
    """Parameters of an m1:m2 resonance of the equatorial orbit.

    ``I1_star`` is the action of the resonant equatorial orbit, ``omega1``
    and ``omega2`` the in-plane and transverse frequencies there.
    """

    m1: int
    m2: int
    I1_star: float
    omega1: float
    omega2: float


@dataclass(frozen=True)
class PreparedHamiltonian:
    """A complexified, book-keeping-graded Hamiltonian ready to normalize."""

    poly: CanonicalPolynomial
    mode: str
    omega10: float
    potential: PotentialSpec
    resonance: Resonance | None = None


def _validated_frequency(spec: PotentialSpec) -> float:
    for (a, b), _c in spec.as_dict().items():
        if a % 2 or b % 2:
            raise UnsupportedPotentialError(
                f"monomial rho^{a}*z^{b} has an odd power; the model must be "
                "even in rho and in z"
            )
        if a == 0:
            raise UnsupportedPotentialError(
                f"monomial z^{b} does not vanish on the magnetic axis rho=0"
            )
    c20 = spec.coefficient(2, 0)
    if c20 <= 0.0:
        raise MissingQuadraticError(
            "potential needs a rho^2 term with positive coefficient to define "
            "the elliptic frequency"
        )
    return math.sqrt(2.0 * c20)


def _rho_binomial(a, scale):
    """Coefficients of (q1 + i p1)^a scaled: list of (j, coeff) with j = p1 power."""
    return [(j, scale * math.comb(a, j) * _IPOW[j % 4]) for j in range(a + 1)]


def complexify_nonresonant(spec: PotentialSpec) -> PreparedHamiltonian:
    """Rotate (rho, p_rho) to complex canonical variables and grade by degree.

    The substitution rho = (q1 + i p1)/sqrt(2 w10), p_rho =
    sqrt(w10/2) (i q1 + p1) with w10 = sqrt(2 c20) turns the quadratic part
    into exactly ``i w10 q1 p1 + p2^2 / 2``; the variables (z, p_z) are kept
    real as (q2, p2).  A term of polynomial degree 2s+2 receives
    book-keeping order s.
    """
    omega10 = _validated_frequency(spec)
    trunc = max((spec.max_degree - 2) // 2, 0)
    terms = [
        ((1, 1, 0, 0), 1j * omega10, 0),
        ((0, 0, 0, 2), 0.5, 0),
    ]
    for (a, b), c in spec.as_dict().items():
        if (a, b) == (2, 0):
            continue
        bk = (a + b - 2) // 2
        scale = c * (2.0 * omega10) ** (-a / 2.0)
        for j, coeff in _rho_binomial(a, scale):
            terms.append(((a - j, j, b, 0), coeff, bk))
    poly = CanonicalPolynomial.from_terms(terms, trunc_order=trunc)
    return PreparedHamiltonian(
        poly=poly, mode="nonresonant", omega10=omega10, potential=spec
    )


def prepare_resonant(
    spec: PotentialSpec,
    m1: int,
    m2: int,
    I1_star: float,
    omega1: float,
    omega2: float,
) -> PreparedHamiltonian:
    """Complexify both degrees of freedom around an m1:m2 resonance.

    The (z, p_z) pair is complexified at the transverse frequency
    ``omega2`` of the resonant equatorial orbit.  The order-0 part is
    exactly ``i omega1 q1 p1 + i omega2 q2 p2``; the detuning terms
    ``-i (omega1 - w10) q1 p1`` and ``-(omega2^2) z^2 / 2`` are graded at
    book-keeping order 1 alongside the degree-4 block, so at order r the
    polynomial degrees 2, 4, ..., 2r+2 coexist.  Summing all orders (the
    book-keeping parameter set to 1) recovers the original Hamiltonian.
    """
    if omega2 <= 0.0 or omega1 <= 0.0:
        raise InvalidFrequencyError(
            f"resonant frequencies must be positive, got omega1={omega1}, "
            f"omega2={omega2}"
        )
    omega10 = _validated_frequency(spec)
    trunc = max((spec.max_degree - 2) // 2, 1)
    terms = [
        ((1, 1, 0, 0), 1j * omega1, 0),
        ((0, 0, 1, 1), 1j * omega2, 0),
        # detuning, book-keeping order 1
        ((1, 1, 0, 0), -1j * (omega1 - omega10), 1),
        ((0, 0, 2, 0), -omega2 / 4.0, 1),
        ((0, 0, 1, 1), -1j * omega2 / 2.0, 1),
        ((0, 0, 0, 2), omega2 / 4.0, 1),
    ]
    for (a, b), c in spec.as_dict().items():
        if (a, b) == (2, 0):
            continue
        bk = (a + b - 2) // 2
        scale = c * (2.0 * omega10) ** (-a / 2.0) * (2.0 * omega2) ** (-b / 2.0)
        for j1, c1 in _rho_binomial(a, scale):
            for j2, c2 in _rho_binomial(b, 1.0):
                terms.append(((a - j1, j1, b - j2, j2), c1 * c2, bk))
    poly = CanonicalPolynomial.from_terms(terms, trunc_order=trunc)
    return PreparedHamiltonian(
        poly=poly,
        mode="resonant",
        omega10=omega10,
        potential=spec,
        resonance=Resonance(
            m1=int(m1), m2=int(m2), I1_star=I1_star, omega1=omega1, omega2=omega2
        ),
    )
