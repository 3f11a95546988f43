"""Formal integrals in original variables and their section level sets.

The normalization produces a quantity conserved by the truncated normal
form in the transformed variables (i q1 p1 nonresonant, i(m1 q1 p1 +
m2 q2 p2) resonant).  Pulling it back through the inverse Lie transforms
and the complexification yields a polynomial Phi(rho, z, p_rho, p_z) that
is approximately conserved by the original flow.  Restricted to the
surface of section rho = 0, p_rho = +sqrt(2(E - V(0,z)) - p_z^2), its
level sets are the theoretical invariant curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NonRealIntegralError, SeedOutsideCZVError
from .model import PotentialSpec, Resonance
from .polyalg import CanonicalPolynomial, evaluate, compose, lie_transform

__all__ = [
    "FormalIntegral",
    "GridSpec",
    "SectionLevelSet",
    "LevelComponent",
    "back_transform",
    "section_levels",
    "level_set_components",
]

#: imaginary residue allowed on back-transformed coefficients, relative to
#: the largest coefficient magnitude (absolute below magnitude one)
IMAG_TOL = 1e-11


@dataclass(frozen=True)
class FormalIntegral:
    """Truncated integral series expressed in (rho, z, p_rho, p_z).

    ``poly`` reuses the four exponent slots as (rho, p_rho, z, p_z); all
    coefficients are real.  ``order`` is the normalization order the
    series was pulled back from.
    """

    poly: CanonicalPolynomial
    mode: str
    order: int
    resonance: Resonance | None = None

    def evaluate(self, rho, z, p_rho, p_z):
        """Value of the integral at phase-space points (broadcasting)."""
        values = evaluate(self.poly, rho, p_rho, z, p_z)
        return float(values.real) if np.isscalar(values) else values.real


@dataclass(frozen=True)
class GridSpec:
    """Rectangular (z, p_z) evaluation grid for the surface of section."""

    z_min: float
    z_max: float
    pz_min: float
    pz_max: float
    n_z: int = 400
    n_pz: int = 400

    @classmethod
    def from_energy(cls, E: float, n: int = 400) -> "GridSpec":
        """Box sized to the section's accessible momenta at energy E.

        |p_z| is bounded by sqrt(2E) on the section; the z extent has no
        such hard bound (the potential vanishes on the axis), so the box
        is padded to a few momentum widths, which covers the bounded
        orbits at the energies of interest.
        """
        pz_b = 1.02 * math.sqrt(2.0 * E)
        z_b = 2.4 * math.sqrt(2.0 * E)
        return cls(-z_b, z_b, -pz_b, pz_b, n, n)

    def axes(self):
        return (
            np.linspace(self.z_min, self.z_max, self.n_z),
            np.linspace(self.pz_min, self.pz_max, self.n_pz),
        )


@dataclass(frozen=True)
class SectionLevelSet:
    """Scalar field Phi_sect over one grid plus one seed's contour level.

    ``values[i, j]`` is the field at (z_axis[i], pz_axis[j]); points with
    ``valid[i, j]`` False lie outside the energetically allowed region and
    hold NaN.
    """

    energy: float
    seed: tuple
    level: float
    z_axis: np.ndarray
    pz_axis: np.ndarray
    values: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class LevelComponent:
    """One connected component of a discretized level set."""

    size: int
    encircles_center: bool


def _inverse_substitutions(omega1, omega2, trunc, cap):
    """Polynomials mapping (q1, p1, q2, p2) to the real variables.

    The output reuses the exponent slots as (rho, p_rho, z, p_z).  A None
    ``omega2`` means the second pair was never complexified and passes
    through as (z, p_z).
    """

    def pair(omega, hi_slot, lo_slot):
        sa = math.sqrt(2.0 * omega) / 2.0
        sb = math.sqrt(2.0 / omega) / 2.0
        q = [(hi_slot, sa, 0), (lo_slot, -1j * sb, 0)]
        p = [(lo_slot, sb, 0), (hi_slot, -1j * sa, 0)]
        return q, p

    def build(terms):
        return CanonicalPolynomial.from_terms(
            [(slot, c, bk) for slot, c, bk in terms], trunc_order=trunc, degree_cap=cap
        )

    q1, p1 = pair(omega1, (1, 0, 0, 0), (0, 1, 0, 0))
    if omega2 is None:
        q2 = [((0, 0, 1, 0), 1.0, 0)]
        p2 = [((0, 0, 0, 1), 1.0, 0)]
    else:
        q2, p2 = pair(omega2, (0, 0, 1, 0), (0, 0, 0, 1))
    return [build(q1), build(p1), build(q2), build(p2)]


def back_transform(state) -> FormalIntegral:
    """Pull the conserved seed of the normal form to original variables.

    Applies ``exp(-L_chi_1) o ... o exp(-L_chi_r)`` (innermost first) to
    the conserved quadratic, truncates at book-keeping order r, and
    substitutes the inverse complexification.  Coefficients must come out
    real up to the arithmetic noise floor.

    Raises
    ------
    NonRealIntegralError
        If a substituted coefficient keeps an imaginary part above the
        tolerance (a transform defect, not a data problem).
    """
    prepared = state.prepared
    if state.mode == "resonant":
        res = prepared.resonance
        seed = [((1, 1, 0, 0), 1j * res.m1, 0), ((0, 0, 1, 1), 1j * res.m2, 0)]
        omega2 = res.omega2
    else:
        res = None
        seed = [((1, 1, 0, 0), 1j, 0)]
        omega2 = None
    phi = CanonicalPolynomial.from_terms(seed, trunc_order=max(state.r, 1))
    for chi in reversed(state.generators):
        phi = lie_transform(phi, chi, inverse=True)
    phi = phi.restrict_bk(0, state.r)
    subs = _inverse_substitutions(
        prepared.omega10, omega2, phi.trunc_order, phi.degree_cap
    )
    real_phi = compose(phi, subs)
    floor = IMAG_TOL * max(1.0, real_phi.max_abs())
    cleaned = []
    for key, coeff, bk in real_phi.term_items():
        if abs(coeff.imag) >= floor:
            raise NonRealIntegralError(
                f"coefficient of {tuple(key)} has imaginary part {coeff.imag:.3e}"
            )
        cleaned.append((tuple(key), coeff.real, bk))
    poly = CanonicalPolynomial.from_terms(
        cleaned, trunc_order=real_phi.trunc_order, degree_cap=real_phi.degree_cap
    )
    return FormalIntegral(poly=poly, mode=state.mode, order=state.r, resonance=res)


def _section_terms(integral: FormalIntegral):
    """Collapse Phi to section form: [(m, a, b, c)] with p_rho^(2m) z^a pz^b.

    Only rho-free monomials survive on the section, and those carry even
    p_rho powers for the admissible (reflection-symmetric) models.
    """
    collected = {}
    for key, coeff, _bk in integral.poly.term_items():
        if key.k1:
            continue
        if key.l1 % 2:
            raise ValueError(
                "integral has odd p_rho powers on the section; the model "
                "lacks the assumed reflection symmetry"
            )
        index = (key.l1 // 2, key.k2, key.l2)
        collected[index] = collected.get(index, 0.0) + coeff.real
    return [(m, a, b, c) for (m, a, b), c in collected.items()]


def _section_field(integral, E, z_vals, pz_vals, potential):
    """Evaluate Phi_sect on the meshgrid of the given axes."""
    Z, PZ = np.meshgrid(z_vals, pz_vals, indexing="ij")
    radicand = 2.0 * (E - potential.value(0.0, Z)) - PZ**2
    valid = radicand > 0.0
    G = np.where(valid, radicand, 0.0)
    values = np.zeros_like(G)
    for m, a, b, c in _section_terms(integral):
        values += c * G**m * Z**a * PZ**b
    values[~valid] = np.nan
    return values, valid


def section_levels(
    integral: FormalIntegral,
    E: float,
    seeds,
    grid: GridSpec | None = None,
    potential: PotentialSpec | None = None,
) -> list:
    """Level sets of the section-restricted integral at energy E.

    For each seed (z0, pz0) the contour level is the integral's value at
    the lifted point; the field itself is shared across seeds.

    Raises
    ------
    SeedOutsideCZVError
        For seeds outside the energetically allowed section domain.
    """
    from .model import build_builtin_model

    V = build_builtin_model() if potential is None else potential
    box = GridSpec.from_energy(E) if grid is None else grid
    z_vals, pz_vals = box.axes()
    values, valid = _section_field(integral, E, z_vals, pz_vals, V)
    out = []
    for z0, pz0 in seeds:
        radicand = 2.0 * (E - V.value(0.0, z0)) - pz0**2
        if radicand <= 0.0:
            raise SeedOutsideCZVError(
                f"section seed (z={z0}, p_z={pz0}) is not accessible at E={E}"
            )
        level = float(
            integral.evaluate(0.0, z0, math.sqrt(radicand), pz0)
        )
        out.append(
            SectionLevelSet(
                energy=E,
                seed=(float(z0), float(pz0)),
                level=level,
                z_axis=z_vals,
                pz_axis=pz_vals,
                values=values,
                valid=valid,
            )
        )
    return out


def level_set_components(level_set: SectionLevelSet) -> list:
    """Connected components of the discretized contour Phi_sect = level.

    Grid cells where the sign of (Phi_sect - level) changes between valid
    neighbors are marked and labeled with 8-connectivity.  A component
    counts as encircling the center when its pixel angles leave no gap of
    a quarter turn or more around the section's central fixed point; the
    non-encircling components are the resonance islands.
    """
    F = level_set.values - level_set.level
    sign = np.sign(F)
    v = level_set.valid
    mask = np.zeros(F.shape, dtype=bool)
    flip_z = v[:-1, :] & v[1:, :] & (sign[:-1, :] * sign[1:, :] <= 0.0)
    flip_pz = v[:, :-1] & v[:, 1:] & (sign[:, :-1] * sign[:, 1:] <= 0.0)
    mask[:-1, :] |= flip_z
    mask[1:, :] |= flip_z
    mask[:, :-1] |= flip_pz
    mask[:, 1:] |= flip_pz
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    components = []
    for lab in range(1, n + 1):
        iz, ipz = np.nonzero(labels == lab)
        z = level_set.z_axis[iz]
        pz = level_set.pz_axis[ipz]
        keep = np.hypot(z, pz) > 1e-9
        angles = np.sort(np.arctan2(pz[keep], z[keep]))
        if angles.size >= 8:
            gaps = np.diff(angles)
            wrap = angles[0] + 2.0 * math.pi - angles[-1]
            encircles = max(gaps.max(), wrap) < math.pi / 2.0
        else:
            encircles = False
        components.append(LevelComponent(size=int(iz.size), encircles_center=encircles))
    return components
