"""Closed-form fixtures for dim X > b_1(X).

Heisenberg nilmanifold: circle bundle over the flat torus R^2/L with
geodesic fibers of length t.  The central fiber class is torsion in H_1,
so the stable norm is the base Euclidean norm: stsys = lambda_1(L),
pisys = min(t, lambda_1(L)), vol = covol(L) t.

Product base x fiber: the Abel-Jacobi map is the projection, its fibers are
copies of the fiber, so deg = v (fiber volume), stsys = lambda_1(L) and
vol = covol(L) v.

All sides of the inequalities are square roots of rationals once the Gram
matrix and the fiber size are rational, so comparisons are done exactly on
squares with ``fractions.Fraction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidLatticeError, PreconditionError
from .lattice import Lattice, shortest_vectors

# (gamma_b^(b/2))^2 as exact rationals
HERMITE_POWER_SQ = {1: Fraction(1), 2: Fraction(4, 3), 3: Fraction(2), 4: Fraction(4)}


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(str(float(x))) if not isinstance(x, str) else Fraction(x)


def _frac_matrix(gram):
    g = [[_frac(x) for x in row] for row in gram]
    n = len(g)
    for i in range(n):
        if len(g[i]) != n:
            raise InvalidLatticeError("gram must be square")
        for j in range(i):
            if g[i][j] != g[j][i]:
                raise InvalidLatticeError("gram must be symmetric")
    return g


def _det(m):
    m = [row[:] for row in m]
    n = len(m)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            m[c], m[piv] = m[piv], m[c]
            det = -det
        det *= m[c][c]
        for r in range(c + 1, n):
            f = m[r][c] / m[c][c]
            m[r] = [a - f * b for a, b in zip(m[r], m[c])]
    return det


def exact_min_norm_sq(gram) -> Fraction:
    """lambda_1^2 as an exact rational: numeric enumeration, then exact norms of the near-minimal vectors."""
    g = _frac_matrix(gram)
    lat = Lattice.from_gram(np.array([[float(x) for x in row] for row in g]))
    cands = shortest_vectors(lat, tol=1e-6).vectors
    n = len(g)
    return min(sum(g[i][j] * int(v[i]) * int(v[j]) for i in range(n) for j in range(n)) for v in cands)


@dataclass(frozen=True)
class HeisenbergFixture:
    gram: tuple  # base lattice Gram (2 x 2), rational entries
    fiber: Fraction

    @classmethod
    def make(cls, gram, fiber) -> "HeisenbergFixture":
        g = _frac_matrix(gram)
        if len(g) != 2:
            raise InvalidLatticeError("the Heisenberg base is a 2-torus")
        t = _frac(fiber)
        if t <= 0:
            raise PreconditionError("t > 0", "fiber length must be positive")
        Lattice.from_gram(np.array([[float(x) for x in row] for row in g]))
        return cls(tuple(tuple(r) for r in g), t)


@dataclass(frozen=True)
class ProductFixture:
    gram: tuple
    fiber_volume: Fraction
    fiber_dim: int = 2

    @classmethod
    def make(cls, gram, fiber_volume, fiber_dim: int = 2) -> "ProductFixture":
        g = _frac_matrix(gram)
        v = _frac(fiber_volume)
        if v <= 0:
            raise PreconditionError("v > 0", "fiber volume must be positive")
        if fiber_dim < 0:
            raise PreconditionError("fiber dimension >= 0", "fiber dimension must be nonnegative")
        Lattice.from_gram(np.array([[float(x) for x in row] for row in g]))
        return cls(tuple(tuple(r) for r in g), v, int(fiber_dim))


def _sqrt(x: Fraction) -> float:
    return math.sqrt(float(x))


def heisenberg_quantities(fx: HeisenbergFixture) -> dict:
    """stsys, pisys, vol and both sides of stsys^b pisys <= gamma_b^(b/2) vol (b = 2, n = 3)."""
    lam_sq = exact_min_norm_sq(fx.gram)
    t = fx.fiber
    covol_sq = _det([list(r) for r in fx.gram])
    pisys_sq = min(t * t, lam_sq)
    b = 2
    lhs_sq = lam_sq ** b * pisys_sq
    rhs_sq = HERMITE_POWER_SQ[b] * covol_sq * t * t
    return {
        "stsys1": _sqrt(lam_sq),
        "pisys1": _sqrt(pisys_sq),
        "vol": _sqrt(covol_sq) * float(t),
        "deg": float(t),
        "deg_label": "upper bound",
        "lhs11": _sqrt(lhs_sq),
        "rhs11": _sqrt(rhs_sq),
        "lhs11_sq": lhs_sq,
        "rhs11_sq": rhs_sq,
        "holds": lhs_sq <= rhs_sq,
        "equality": lhs_sq == rhs_sq,
    }


def product_quantities(fx: ProductFixture) -> dict:
    """stsys, vol, deg and both sides of deg stsys^b <= gamma_b^(b/2) vol, plus its unit-volume form."""
    b = len(fx.gram)
    if b not in HERMITE_POWER_SQ:
        raise PreconditionError("b <= 4", f"no certified Hermite constant for b = {b}")
    lam_sq = exact_min_norm_sq(fx.gram)
    covol_sq = _det([list(r) for r in fx.gram])
    v = fx.fiber_volume
    lhs_sq = v * v * lam_sq ** b
    rhs_sq = HERMITE_POWER_SQ[b] * covol_sq * v * v
    n = b + fx.fiber_dim
    vol = _sqrt(covol_sq) * float(v)
    # unit volume: scale lengths by c = vol^(-1/n); deg ~ c^(n-b), stsys^b ~ c^b
    c = vol ** (-1.0 / n)
    lhs_unit = float(v) * c ** (n - b) * _sqrt(lam_sq) ** b * c ** b
    return {
        "stsys1": _sqrt(lam_sq),
        "vol": vol,
        "deg": float(v),
        "n": n,
        "lhs12": _sqrt(lhs_sq),
        "rhs12": _sqrt(rhs_sq),
        "lhs12_sq": lhs_sq,
        "rhs12_sq": rhs_sq,
        "holds": lhs_sq <= rhs_sq,
        "equality": lhs_sq == rhs_sq,
        "lhs23_unit_volume": lhs_unit,
        "rhs23": math.sqrt(float(HERMITE_POWER_SQ[b])),
    }


def fixture_report(fx, ineq: str, p, cfg):
    from .systolic import InequalityReport

    if isinstance(fx, HeisenbergFixture):
        if ineq != "11":
            raise PreconditionError("inequality 11", f"Heisenberg fixtures carry inequality 11, not {ineq}")
        q = heisenberg_quantities(fx)
        lhs, rhs = q["lhs11"], q["rhs11"]
        source = "heisenberg"
    else:
        if ineq not in ("eq12", "23"):
            raise PreconditionError("inequality eq12 or 23", f"product fixtures carry eq12/23, not {ineq}")
        q = product_quantities(fx)
        if ineq == "eq12":
            lhs, rhs = q["lhs12"], q["rhs12"]
        else:
            lhs, rhs = q["lhs23_unit_volume"], q["rhs23"]
        source = "product"
    extra = {k: (str(v) if isinstance(v, Fraction) else v) for k, v in q.items()}
    diag = {"exact_equality": {"value": bool(q["equality"]), "passed": bool(q["equality"])}}
    prov = {"source": source, "gram": [[str(x) for x in r] for r in fx.gram], "p": p}
    return InequalityReport(ineq, float(lhs), float(rhs), diag, prov, extra, cfg.equality_tol, cfg.slack_tol)


def lattice_grid():
    """Ten reduced base Grams with lambda_1 = 1; the first two are critical (hexagonal)."""
    h = Fraction(1, 2)
    return [
        ((1, h), (h, 1)),
        ((1, -h), (-h, 1)),
        ((1, 0), (0, 1)),
        ((1, Fraction(1, 4)), (Fraction(1, 4), 1)),
        ((1, Fraction(1, 3)), (Fraction(1, 3), Fraction(5, 4))),
        ((1, h), (h, Fraction(3, 2))),
        ((1, 0), (0, 2)),
        ((1, Fraction(-1, 5)), (Fraction(-1, 5), Fraction(6, 5))),
        ((1, Fraction(2, 5)), (Fraction(2, 5), 1)),
        ((1, h), (h, 3)),
    ]


def fiber_grid():
    return [Fraction(1, 10), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1),
            Fraction(5, 4), Fraction(3, 2), Fraction(2), Fraction(3), Fraction(5)]
