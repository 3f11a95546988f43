"""Tests for the sparse graded polynomial algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magbottle.errors import NonNilpotentGenerator
from magbottle.polyalg import (
    PRUNE_TOL,
    CanonicalPolynomial as CP,
    coefficient_distance,
    compose,
    evaluate,
    from_records,
    lie_transform,
    poisson_bracket,
    to_records,
)

from oracles import sympy_bracket

TOL = 1e-11


def make(terms, trunc=30, cap=None):
    return CP.from_terms(terms, trunc_order=trunc, degree_cap=cap)


def ungraded_dict(poly):
    """Collapse bk orders: {(k1,l1,k2,l2): coeff}."""
    out = {}
    for key, c, _bk in poly.term_items():
        out[tuple(key)] = out.get(tuple(key), 0.0) + c
    return out


# ----------------------------------------------------------------- structure


def test_from_terms_merges_duplicates_and_prunes():
    p = make(
        [
            ((1, 0, 0, 0), 1.0, 0),
            ((1, 0, 0, 0), 2.0, 0),
            ((0, 1, 0, 0), 1e-15, 0),
        ]
    )
    assert p.nterms == 1
    assert p.coefficient(1, 0, 0, 0) == pytest.approx(3.0)


def test_same_exponents_different_bk_are_distinct_terms():
    p = make([((1, 1, 0, 0), 1.0, 0), ((1, 1, 0, 0), -0.25, 1)])
    assert p.nterms == 2
    assert p.coefficient(1, 1, 0, 0, bk=0) == 1.0
    assert p.coefficient(1, 1, 0, 0, bk=1) == -0.25
    assert p.coefficient(1, 1, 0, 0) == pytest.approx(0.75)


def test_exponent_validation():
    with pytest.raises(ValueError):
        make([((-1, 0, 0, 0), 1.0, 0)])
    with pytest.raises(ValueError):
        make([((200, 0, 0, 0), 1.0, 0)])
    with pytest.raises(ValueError):
        make([((0, 0, 0, 0), 1.0, -1)])


def test_trunc_discards_on_build_and_multiply():
    p = make([((1, 0, 0, 0), 1.0, 3)], trunc=2)
    assert p.nterms == 0
    a = make([((1, 0, 0, 0), 1.0, 1)], trunc=2)
    prod = a * a  # bk 2, kept
    assert prod.nterms == 1 and prod.max_bk() == 2
    assert (prod * a).nterms == 0  # bk 3, dropped


def test_degree_cap_discards():
    a = make([((2, 2, 0, 0), 1.0, 0)], trunc=10, cap=6)
    b = make([((2, 0, 2, 0), 1.0, 0)], trunc=10, cap=6)
    assert (a * b).nterms == 0
    assert (a * make([((0, 1, 0, 0), 1.0, 0)], trunc=10, cap=6)).nterms == 1


def test_multiply_bk_is_additive():
    a = make([((1, 0, 0, 0), 2.0, 1)])
    b = make([((0, 0, 1, 0), 3.0, 2)])
    ((key, c, bk),) = list((a * b).term_items())
    assert tuple(key) == (1, 0, 1, 0)
    assert c == 6.0
    assert bk == 3


def test_prune_threshold_after_subtraction():
    a = make([((1, 1, 0, 0), 1.0, 0)])
    b = make([((1, 1, 0, 0), 1.0 - 5e-15, 0)])
    assert (a - b).nterms == 0
    assert PRUNE_TOL == 1e-14


def test_derivative():
    p = make([((2, 0, 1, 3), 1.5, 1)])
    d = p.derivative(3)
    ((key, c, bk),) = list(d.term_items())
    assert tuple(key) == (2, 0, 1, 2) and c == 4.5 and bk == 1
    assert p.derivative(1).nterms == 0


# ------------------------------------------------------------------ brackets


def test_bracket_matches_symbolic_differentiation():
    f = {(2, 1, 0, 0): 1.0 + 0.5j, (0, 0, 2, 1): -0.75, (1, 1, 1, 1): 2.0j}
    g = {(1, 0, 1, 2): 0.5, (0, 2, 0, 0): 1.0 - 1.0j, (1, 1, 0, 0): 3.0}
    expected = sympy_bracket(f, g)
    got = ungraded_dict(
        poisson_bracket(
            make([(k, c, 0) for k, c in f.items()]),
            make([(k, c, 0) for k, c in g.items()]),
        )
    )
    keys = set(expected) | set(got)
    for key in keys:
        assert got.get(key, 0.0) == pytest.approx(expected.get(key, 0.0), abs=1e-12)


def test_bracket_quadratic_part_action():
    # {i w q1 p1 + p2^2/2, m} = i(l1-k1) w m - k2 (shift k2->k2-1, l2->l2+1)
    w = 1.37
    z0 = make([((1, 1, 0, 0), 1j * w, 0), ((0, 0, 0, 2), 0.5, 0)])
    for k1, l1, k2, l2 in ((2, 1, 3, 1), (0, 4, 2, 0), (1, 1, 0, 2), (3, 0, 1, 1)):
        m = make([((k1, l1, k2, l2), 1.0, 1)])
        got = ungraded_dict(poisson_bracket(z0, m))
        expected = {}
        if l1 != k1:
            expected[(k1, l1, k2, l2)] = 1j * (l1 - k1) * w
        if k2 > 0:
            expected[(k1, l1, k2 - 1, l2 + 1)] = -float(k2)
        assert set(got) == set(expected)
        for key in expected:
            assert got[key] == pytest.approx(expected[key], abs=1e-13)


coeff_st = st.sampled_from(
    [1.0, -1.0, 0.5, -0.25, 1.0j, -0.5j, 1.0 + 1.0j, 2.0 - 0.5j]
)
key_st = st.tuples(
    st.integers(0, 2), st.integers(0, 2), st.integers(0, 2), st.integers(0, 2)
)
poly_st = st.lists(st.tuples(key_st, coeff_st), min_size=0, max_size=4).map(
    lambda ts: make([(k, c, 0) for k, c in ts], trunc=99)
)


@settings(max_examples=60, deadline=None)
@given(poly_st, poly_st)
def test_bracket_antisymmetry(f, g):
    assert coefficient_distance(poisson_bracket(f, g), -poisson_bracket(g, f)) < TOL


@settings(max_examples=60, deadline=None)
@given(poly_st, poly_st, poly_st)
def test_bracket_jacobi(f, g, h):
    total = (
        poisson_bracket(f, poisson_bracket(g, h))
        + poisson_bracket(g, poisson_bracket(h, f))
        + poisson_bracket(h, poisson_bracket(f, g))
    )
    assert total.max_abs() < TOL


@settings(max_examples=60, deadline=None)
@given(poly_st, poly_st, poly_st)
def test_bracket_leibniz(f, g, h):
    lhs = poisson_bracket(f, g * h)
    rhs = poisson_bracket(f, g) * h + g * poisson_bracket(f, h)
    assert coefficient_distance(lhs, rhs) < TOL


@settings(max_examples=60, deadline=None)
@given(poly_st, poly_st, poly_st)
def test_bracket_bilinearity(f, g, h):
    lhs = poisson_bracket(f + g.scale(2.5), h)
    rhs = poisson_bracket(f, h) + poisson_bracket(g, h).scale(2.5)
    assert coefficient_distance(lhs, rhs) < TOL


# ------------------------------------------------------------- Lie transform


chi_st = st.lists(st.tuples(key_st, coeff_st), min_size=1, max_size=3).map(
    lambda ts: make([(k, c, 1) for k, c in ts], trunc=8)
)
graded_poly_st = st.lists(
    st.tuples(key_st, coeff_st, st.integers(0, 2)), min_size=0, max_size=4
).map(lambda ts: make([(k, c, bk) for k, c, bk in ts], trunc=8))


@settings(max_examples=40, deadline=None)
@given(graded_poly_st, chi_st)
def test_lie_transform_roundtrip(f, chi):
    # rounding residue scales with the forward image, which unit-size random
    # generators can pump well past |f| itself
    fwd = lie_transform(f, chi)
    back = lie_transform(fwd, chi, inverse=True)
    assert coefficient_distance(back, f) < TOL * max(1.0, fwd.max_abs())


def test_lie_transform_canonicity():
    # transformed coordinate pairs keep {q1', p1'} = 1, {q1', q2'} = 0
    chi = make(
        [((2, 1, 0, 1), 0.3, 1), ((1, 0, 2, 0), -0.2j, 1), ((0, 2, 1, 1), 0.15, 2)],
        trunc=7,
    )
    coords = [
        make([((1, 0, 0, 0), 1.0, 0)], trunc=7),
        make([((0, 1, 0, 0), 1.0, 0)], trunc=7),
        make([((0, 0, 1, 0), 1.0, 0)], trunc=7),
        make([((0, 0, 0, 1), 1.0, 0)], trunc=7),
    ]
    new = [lie_transform(c, chi) for c in coords]
    pairs = {(0, 1): 1.0, (2, 3): 1.0, (0, 2): 0.0, (0, 3): 0.0, (1, 3): 0.0}
    for (i, j), expected in pairs.items():
        br = poisson_bracket(new[i], new[j])
        const = br.coefficient(0, 0, 0, 0)
        assert const == pytest.approx(expected, abs=TOL)
        assert (br - make([((0, 0, 0, 0), expected, 0)], trunc=7)).max_abs() < TOL


def test_lie_transform_rejects_bk0_generator():
    chi = make([((1, 1, 0, 0), 1.0, 0)])
    f = make([((1, 0, 0, 0), 1.0, 0)])
    with pytest.raises(NonNilpotentGenerator):
        lie_transform(f, chi)


def test_lie_transform_identity_for_zero_generator():
    f = make([((1, 2, 3, 0), 2.0, 1)])
    out = lie_transform(f, CP.zero(f.trunc_order))
    assert coefficient_distance(out, f) == 0.0


# ------------------------------------------------------- compose / evaluate


def test_compose_matches_pointwise_evaluation():
    rng = np.random.default_rng(7)
    f = make([((2, 0, 1, 0), 1.5, 0), ((0, 1, 0, 2), -2.0j, 1), ((1, 1, 1, 1), 0.3, 2)])
    subs = [
        make([((1, 0, 0, 0), 0.6, 0), ((0, 1, 0, 0), 0.5j, 0)]),
        make([((0, 1, 0, 0), 1.0, 0), ((0, 0, 0, 0), -0.1, 0)]),
        make([((0, 0, 1, 0), 2.0, 0)]),
        make([((0, 0, 0, 1), 1.0, 0), ((0, 0, 1, 0), 0.25j, 0)]),
    ]
    fc = compose(f, subs)
    for _ in range(5):
        pt = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        inner = [evaluate(s, *pt) for s in subs]
        assert evaluate(fc, *pt) == pytest.approx(evaluate(f, *inner), rel=1e-12)


def test_compose_keeps_term_bk():
    f = make([((1, 0, 0, 0), 1.0, 2)])
    subs = [
        make([((0, 0, 1, 0), 1.0, 0)]),
        make([((0, 1, 0, 0), 1.0, 0)]),
        make([((0, 0, 1, 0), 1.0, 0)]),
        make([((0, 0, 0, 1), 1.0, 0)]),
    ]
    ((_, _, bk),) = list(compose(f, subs).term_items())
    assert bk == 2


def test_evaluate_broadcasts():
    f = make([((1, 0, 1, 0), 2.0, 0), ((0, 0, 0, 0), 1.0, 0)])
    z = np.linspace(0.0, 1.0, 7)
    vals = evaluate(f, z, 0.0, 3.0, 0.0)
    assert vals.shape == (7,)
    assert vals[-1] == pytest.approx(7.0)
    assert evaluate(f, 0.5, 0.0, 3.0, 0.0) == pytest.approx(4.0)


# -------------------------------------------------------------- serialization


def test_records_roundtrip_and_ordering():
    f = make(
        [
            ((0, 1, 0, 0), 1.0 - 2.0j, 1),
            ((1, 0, 0, 0), 0.5, 0),
            ((0, 0, 2, 0), 3.0, 2),
            ((0, 0, 2, 0), 1.0, 1),
        ],
        trunc=9,
    )
    records = to_records(f)
    keys = [(r["k1"], r["l1"], r["k2"], r["l2"], r["bk"]) for r in records]
    assert keys == sorted(keys)
    g = from_records(records, trunc_order=9)
    assert coefficient_distance(f, g) == 0.0


def test_multiply_is_deterministic():
    a = make([((1, 0, 1, 0), 1.0 + 1e-9j, 1), ((0, 1, 0, 1), -0.5, 2)], trunc=12)
    b = make([((2, 1, 0, 0), 0.7, 1), ((0, 0, 1, 1), 1.1j, 3)], trunc=12)
    p1 = (a * b).as_dict()
    p2 = (a * b).as_dict()
    assert p1 == p2  # bitwise identical


def test_restrict_bk_partition():
    f = make([((1, 1, 0, 0), 1.0, 0), ((2, 2, 0, 0), 2.0, 1), ((0, 0, 4, 2), 3.0, 2)])
    low = f.restrict_bk(0, 1)
    high = f.bk_part(2)
    assert low.nterms == 2 and high.nterms == 1
    assert coefficient_distance(low + high, f) == 0.0
