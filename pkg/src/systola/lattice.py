"""Euclidean lattices: shortest vectors, Hermite ratios, perfection and eutaxy.

A lattice is stored by its Gram matrix; the basis is derived as the
lower-triangular factor ``B`` with ``B.T @ B == gram``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import InvalidLatticeError, UnsupportedDimensionError

MAX_DIM = 8
ENUM_EPS = 1e-9
EUTAXY_MARGIN = 1e-8
PD_TOL = 1e-12

# gamma_b ** (b / 2), the supremum of lambda_1^b / covolume.
HERMITE_POWER = {
    1: 1.0,
    2: 2.0 / math.sqrt(3.0),
    3: math.sqrt(2.0),
    4: 2.0,
}
# Known but not certified by this package; see critical_lattice(extended=True).
HERMITE_POWER_EXTENDED = {
    5: math.sqrt(8.0),
    6: 8.0 / math.sqrt(3.0),
    7: 8.0,
    8: 16.0,
}


def hermite_constant(b: int, extended: bool = False) -> float:
    """Return gamma_b for the catalogued dimensions."""
    return hermite_power(b, extended) ** (2.0 / b)


def hermite_power(b: int, extended: bool = False) -> float:
    """Return the catalog value gamma_b^(b/2)."""
    if b in HERMITE_POWER:
        return HERMITE_POWER[b]
    if extended and b in HERMITE_POWER_EXTENDED:
        return HERMITE_POWER_EXTENDED[b]
    raise UnsupportedDimensionError(f"no catalogued Hermite constant for b={b}")


def _lower_factor(gram: np.ndarray) -> np.ndarray:
    # Cholesky of the index-reversed matrix gives a lower-triangular B with B^T B = gram.
    rev = gram[::-1, ::-1]
    low = np.linalg.cholesky(rev)
    return low.T[::-1, ::-1].copy()


@dataclass(frozen=True)
class Lattice:
    gram: np.ndarray
    basis: np.ndarray = field(repr=False)

    @classmethod
    def from_gram(cls, gram) -> "Lattice":
        g = np.atleast_2d(np.asarray(gram, dtype=float))
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise InvalidLatticeError("gram must be a square matrix")
        if not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max())):
            raise InvalidLatticeError("gram must be symmetric")
        g = 0.5 * (g + g.T)
        eig = np.linalg.eigvalsh(g)
        if eig[0] <= PD_TOL * max(1.0, eig[-1]):
            raise InvalidLatticeError(f"gram is not positive definite (min eigenvalue {eig[0]:.3e})")
        g.setflags(write=False)
        basis = _lower_factor(g)
        basis.setflags(write=False)
        return cls(gram=g, basis=basis)

    @classmethod
    def from_basis(cls, basis) -> "Lattice":
        b = np.atleast_2d(np.asarray(basis, dtype=float))
        return cls.from_gram(b.T @ b)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    @property
    def covolume(self) -> float:
        return float(math.sqrt(np.linalg.det(self.gram)))

    def scaled(self, c: float) -> "Lattice":
        return Lattice.from_gram(self.gram * (c * c))

    def transformed(self, unimodular) -> "Lattice":
        u = np.asarray(unimodular, dtype=float)
        return Lattice.from_gram(u.T @ self.gram @ u)

    def length(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(math.sqrt(max(v @ self.gram @ v, 0.0)))


@dataclass(frozen=True)
class MinimalVectorSet:
    vectors: np.ndarray  # (count, b) integer coordinates, closed under negation
    length: float

    def __len__(self):
        return len(self.vectors)


def enumerate_short_vectors(gram: np.ndarray, radius_sq: float, shrink: bool = False):
    """All nonzero integer x with x^T gram x <= radius_sq (Fincke-Pohst).

    With ``shrink`` the bound tightens to the shortest vector found so far
    (inflated by the enumeration epsilon), so only near-minimal vectors are
    returned.  Vectors are produced up to sign; the caller symmetrizes.
    """
    b = gram.shape[0]
    r = np.linalg.cholesky(gram).T  # gram = r^T r, r upper
    diag = np.diag(r) ** 2
    mu = r / np.diag(r)[:, None]
    bound = [radius_sq]
    found = []
    x = np.zeros(b, dtype=np.int64)

    def rec(i, partial):
        center = -float(mu[i, i + 1:] @ x[i + 1:]) if i + 1 < b else 0.0
        slack = bound[0] * (1.0 + 1e-12) - partial
        if slack < 0:
            return
        half = math.sqrt(slack / diag[i])
        lo, hi = math.ceil(center - half), math.floor(center + half)
        for xi in range(lo, hi + 1):
            x[i] = xi
            t = partial + diag[i] * (xi - center) ** 2
            if t > bound[0] * (1.0 + 1e-12):
                continue
            if i == 0:
                if t > 0 and _is_canonical(x):
                    found.append((t, x.copy()))
                    if shrink:
                        nb = t * (1.0 + ENUM_EPS) ** 2
                        if nb < bound[0]:
                            bound[0] = nb
            else:
                rec(i - 1, t)
        x[i] = 0

    rec(b - 1, 0.0)
    return found


def _is_canonical(x):
    # first nonzero coordinate positive: one representative per +-pair
    nz = np.flatnonzero(x)
    return len(nz) > 0 and x[nz[0]] > 0


def shortest_vectors(lattice: Lattice, tol: float = ENUM_EPS) -> MinimalVectorSet:
    """lambda_1 and all vectors of length <= lambda_1 * (1 + tol), both signs."""
    if lattice.dim > MAX_DIM:
        raise UnsupportedDimensionError(f"shortest_vectors supports b <= {MAX_DIM}, got {lattice.dim}")
    g = lattice.gram
    start = float(np.min(np.diag(g))) * (1.0 + ENUM_EPS) ** 2
    found = enumerate_short_vectors(g, start, shrink=True)
    lam_sq = min(t for t, _ in found)
    if tol > ENUM_EPS:
        found = enumerate_short_vectors(g, lam_sq * (1.0 + tol) ** 2)
    cutoff = lam_sq * (1.0 + tol) ** 2
    half = sorted((tuple(int(c) for c in v) for t, v in found if t <= cutoff))
    vecs = np.array(half + [tuple(-c for c in v) for v in half], dtype=np.int64)
    return MinimalVectorSet(vectors=vecs, length=math.sqrt(lam_sq))


def hermite_ratio(lattice: Lattice) -> float:
    """lambda_1^b / covolume; invariant under scaling and change of basis."""
    lam = shortest_vectors(lattice).length
    return lam ** lattice.dim / lattice.covolume


def _sym_vec(m: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(m.shape[0])
    return m[iu]


def _half(vectors: np.ndarray) -> np.ndarray:
    return np.array([v for v in vectors if _is_canonical(v)])


def is_perfect(lattice: Lattice, tol: float = ENUM_EPS) -> bool:
    """The forms v v^T over minimal vectors span all symmetric b x b matrices."""
    b = lattice.dim
    mv = _half(shortest_vectors(lattice, tol).vectors).astype(float)
    rows = np.array([_sym_vec(np.outer(v, v)) for v in mv])
    return int(np.linalg.matrix_rank(rows, tol=1e-9)) == b * (b + 1) // 2


def eutaxy_margin(lattice: Lattice, tol: float = ENUM_EPS) -> float:
    """Largest t such that I = sum c_v x_v x_v^T with every c_v >= t.

    x_v are the minimal vectors in gram-orthonormal coordinates.  Returns
    -inf when the identity is not in the span at all.
    """
    b = lattice.dim
    mv = _half(shortest_vectors(lattice, tol).vectors).astype(float)
    xs = mv @ lattice.basis.T
    k = len(xs)
    a_eq = np.array([_sym_vec(np.outer(x, x)) for x in xs]).T
    a_eq = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
    b_eq = _sym_vec(np.eye(b))
    # variables (c_1..c_k, t); maximize t subject to c_v - t >= 0
    cost = np.zeros(k + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(cost, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * k + [(None, float(b))], method="highs")
    if res.status == 2:
        return -math.inf
    if res.status != 0:
        raise InvalidLatticeError(f"eutaxy program failed: {res.message}")
    return float(res.x[-1])


def is_eutactic(lattice: Lattice, tol: float = ENUM_EPS, margin: float = EUTAXY_MARGIN):
    """True / False, or None when the margin is within +-margin of zero."""
    t = eutaxy_margin(lattice, tol)
    if t >= margin:
        return True
    if t <= -margin:
        return False
    return None


_CATALOG = {
    1: [[1.0]],
    2: [[1.0, 0.5], [0.5, 1.0]],
    3: [[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]],
    4: [[2, -1, 0, 0], [-1, 2, -1, -1], [0, -1, 2, 0], [0, -1, 0, 2]],
}

_NAMES = {1: "Z", 2: "A2", 3: "A3", 4: "D4", 5: "D5", 6: "E6", 7: "E7", 8: "E8"}


def _cartan(edges, n):
    m = 2 * np.eye(n)
    for i, j in edges:
        m[i, j] = m[j, i] = -1
    return m


_EXTENDED = {
    5: _cartan([(0, 1), (1, 2), (2, 3), (2, 4)], 5),
    6: _cartan([(0, 1), (1, 2), (2, 3), (3, 4), (2, 5)], 6),
    7: _cartan([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (2, 6)], 7),
    8: _cartan([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (4, 7)], 8),
}


def critical_lattice(b: int, extended: bool = False) -> Lattice:
    """Catalogued critical lattice: Z, A2, A3, D4 (and D5, E6, E7, E8 if extended)."""
    if b in _CATALOG:
        return Lattice.from_gram(np.array(_CATALOG[b], dtype=float))
    if extended and b in _EXTENDED:
        return Lattice.from_gram(_EXTENDED[b])
    raise UnsupportedDimensionError(f"critical lattice catalog covers 1 <= b <= 4, got {b}")


def lattice_name(b: int) -> str:
    return _NAMES[b]


def square_lattice(b: int) -> Lattice:
    return Lattice.from_gram(np.eye(b))


def hexagonal_lattice() -> Lattice:
    return critical_lattice(2)
