import itertools
import math
import time
from fractions import Fraction

import pytest
import sympy
from hypothesis import given, strategies as st

from systola.errors import InvalidLatticeError, PreconditionError
from systola.fixtures import (HeisenbergFixture, ProductFixture, exact_min_norm_sq, fiber_grid, heisenberg_quantities,
                              lattice_grid, product_quantities)
from systola.systolic import verify

A2 = ((1, Fraction(1, 2)), (Fraction(1, 2), 1))
Z2 = ((1, 0), (0, 1))
A3 = ((2, 1, 1), (1, 2, 1), (1, 1, 2))
D4 = ((2, -1, 0, 0), (-1, 2, -1, -1), (0, -1, 2, 0), (0, -1, 0, 2))
HERMITE_SQ = {2: sympy.Rational(4, 3), 3: sympy.Integer(2), 4: sympy.Integer(4)}


def sym_gram(gram):
    return sympy.Matrix([[sympy.Rational(str(x)) for x in row] for row in gram])


def brute_min_sq(gram, box=3):
    g = sym_gram(gram)
    best = None
    for v in itertools.product(range(-box, box + 1), repeat=g.rows):
        if any(v):
            x = sympy.Matrix(v)
            val = (x.T * g * x)[0]
            best = val if best is None else min(best, val)
    return best


def oracle_heisenberg(gram, t):
    # both sides squared, symbolically
    lam_sq = brute_min_sq(gram)
    t = sympy.Rational(str(t))
    lhs = lam_sq ** 2 * sympy.Min(t ** 2, lam_sq)
    rhs = HERMITE_SQ[2] * sym_gram(gram).det() * t ** 2
    return lhs, rhs


def oracle_product(gram, v):
    b = len(gram)
    v = sympy.Rational(str(v))
    return v ** 2 * brute_min_sq(gram) ** b, HERMITE_SQ[b] * sym_gram(gram).det() * v ** 2


def test_exact_min_norm_matches_brute_force():
    for gram in lattice_grid() + [A3, D4]:
        assert sympy.Rational(str(exact_min_norm_sq(gram))) == brute_min_sq(gram, box=2)


def test_heisenberg_grid():
    start = time.perf_counter()
    for i, gram in enumerate(lattice_grid()):
        for t in fiber_grid():
            q = heisenberg_quantities(HeisenbergFixture.make(gram, t))
            lhs, rhs = oracle_heisenberg(gram, t)
            assert sympy.Rational(str(q["lhs11_sq"])) == lhs
            assert sympy.Rational(str(q["rhs11_sq"])) == rhs
            assert q["holds"]
            critical = i < 2
            assert q["equality"] == (critical and t <= 1)
            if not q["equality"]:
                assert q["lhs11_sq"] < q["rhs11_sq"]
    assert time.perf_counter() - start < 5.0  # symbolic oracle included


def test_fixture_grid_runtime():
    start = time.perf_counter()
    for gram in lattice_grid():
        for t in fiber_grid():
            heisenberg_quantities(HeisenbergFixture.make(gram, t))
            product_quantities(ProductFixture.make(gram, t))
    assert time.perf_counter() - start < 1.0


def test_product_grid():
    for i, gram in enumerate(lattice_grid()):
        for v in fiber_grid():
            q = product_quantities(ProductFixture.make(gram, v))
            lhs, rhs = oracle_product(gram, v)
            assert sympy.Rational(str(q["lhs12_sq"])) == lhs
            assert sympy.Rational(str(q["rhs12_sq"])) == rhs
            assert q["holds"]
            assert q["equality"] == (i < 2)


@pytest.mark.parametrize("gram,critical", [(A3, True), (D4, True), (((1, 0, 0), (0, 1, 0), (0, 0, 1)), False),
                                           (((2, 1, 0), (1, 2, 0), (0, 0, 2)), False)])
def test_product_higher_rank(gram, critical):
    q = product_quantities(ProductFixture.make(gram, Fraction(3, 2)))
    assert q["equality"] == critical
    assert q["holds"]


def test_heisenberg_critical_example():
    q = heisenberg_quantities(HeisenbergFixture.make(A2, Fraction(1, 2)))
    assert q["lhs11_sq"] == Fraction(1, 4) and q["rhs11_sq"] == Fraction(1, 4)
    assert q["lhs11"] == pytest.approx(0.5, abs=1e-15)
    assert q["equality"]
    assert q["deg_label"] == "upper bound"


def test_heisenberg_square_example():
    q = heisenberg_quantities(HeisenbergFixture.make(Z2, Fraction(1, 2)))
    assert q["lhs11"] == pytest.approx(0.5, abs=1e-15)
    assert q["rhs11"] == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-15)
    assert not q["equality"]


def test_heisenberg_long_fiber_saturates():
    q = heisenberg_quantities(HeisenbergFixture.make(A2, 4))
    assert q["pisys1"] == 1.0
    assert q["lhs11"] == pytest.approx(1.0) and q["rhs11"] == pytest.approx(4.0)
    assert not q["equality"]


def test_heisenberg_volume():
    q = heisenberg_quantities(HeisenbergFixture.make(A2, Fraction(3, 4)))
    assert q["vol"] == pytest.approx(math.sqrt(3.0) / 2.0 * 0.75, abs=1e-15)


def test_product_examples():
    q = product_quantities(ProductFixture.make(A2, 1))
    assert q["lhs12_sq"] == 1 and q["rhs12_sq"] == 1 and q["equality"]
    q = product_quantities(ProductFixture.make(Z2, 3))
    assert q["lhs12"] == pytest.approx(3.0, abs=1e-14)
    assert q["rhs12"] == pytest.approx(2.0 / math.sqrt(3.0) * 3.0, abs=1e-14)
    assert not q["equality"]


@given(st.fractions(Fraction(1, 10), Fraction(10)), st.sampled_from([0, 2, 3, 6]))
def test_product_ratio_scale_invariant(c, idx):
    gram = lattice_grid()[idx]
    scaled = tuple(tuple(c * c * Fraction(x) for x in row) for row in gram)
    q0 = product_quantities(ProductFixture.make(gram, 1))
    q1 = product_quantities(ProductFixture.make(scaled, 1))
    assert q0["lhs12_sq"] / q0["rhs12_sq"] == q1["lhs12_sq"] / q1["rhs12_sq"]


def test_unit_volume_form():
    q = product_quantities(ProductFixture.make(A2, 1))
    assert q["lhs23_unit_volume"] == pytest.approx(q["rhs23"], rel=1e-12)
    q = product_quantities(ProductFixture.make(Z2, 2))
    assert q["lhs23_unit_volume"] < q["rhs23"]


def test_fixture_reports():
    rep = verify(HeisenbergFixture.make(A2, Fraction(1, 2)), "11")
    assert rep.equality_flag and rep.diagnostics["exact_equality"]["passed"]
    rep = verify(ProductFixture.make(Z2, 3), "eq12")
    assert not rep.equality_flag and rep.holds
    rep = verify(ProductFixture.make(A2, 2), "23")
    assert rep.ratio == pytest.approx(1.0, rel=1e-12)


def test_fixture_inequality_mismatch():
    with pytest.raises(PreconditionError):
        verify(HeisenbergFixture.make(A2, 1), "eq12")
    with pytest.raises(PreconditionError):
        verify(ProductFixture.make(A2, 1), "11")


def test_invalid_fixtures():
    with pytest.raises(PreconditionError):
        HeisenbergFixture.make(A2, 0)
    with pytest.raises(PreconditionError):
        ProductFixture.make(A2, -1)
    with pytest.raises(InvalidLatticeError):
        HeisenbergFixture.make(((1, 0), (1, 1)), 1)
    with pytest.raises(InvalidLatticeError):
        HeisenbergFixture.make(A3, 1)
    with pytest.raises(InvalidLatticeError):
        ProductFixture.make(((1, 2), (2, 1)), 1)
