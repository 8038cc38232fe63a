"""Systolic invariants of meshes and the inequality verifier.

Systoles of norms on H_1(X; Z) are found by certified enumeration: the
norm ball is squeezed between a polytope built from exact dual-norm samples
and its John ellipsoid, so every integer class that could beat the current
best lies in an explicit ellipsoid, which the lattice enumerator covers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csgraph
import scipy.sparse as sp

from .abel_jacobi import build_bi_map, degree, harmonic_abel_jacobi
from .cohomology import (harmonic_gram, homology_norm, homology_norm_body, mesh_homology, pointwise_spread)
from .errors import PreconditionError, ResourceError, UnsupportedTopologyError
from .lattice import Lattice, enumerate_short_vectors, hermite_power, hermite_ratio, shortest_vectors
from .mesh import Mesh, volume
from .normed_space import john_ellipsoid

SCHEMA_VERSION = "1.0"
MAX_CANDIDATES = 10 ** 6
CERT_DESIGN_TOL = 1e-9
INEQUALITIES = ("10", "10c", "23", "23c", "28", "11", "eq12")


# -- pi-systole -----------------------------------------------------------------

def _require_torus(mesh: Mesh):
    hom = mesh_homology(mesh)
    if hom.b1 != mesh.dim or hom.torsion:
        raise UnsupportedTopologyError(f"expected a {mesh.dim}-torus (b1 = {mesh.dim}), got b1 = {hom.b1}")
    return hom


def pi_systole(mesh: Mesh) -> float:
    """Shortest homologically nontrivial closed edge path.

    For each base vertex the shortest nontrivial loop through it is a
    shortest-path-tree path, one edge, and a tree path back; its class is
    read off from the integral cocycles accumulated along the tree.
    """
    hom = _require_torus(mesh)
    z = hom.h1_cobasis.T  # (E, b)
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    l = mesh.edge_lengths
    nv = mesh.n_vertices
    proper = a != b
    # one representative edge (the shortest) per unordered vertex pair
    key = np.minimum(a, b) * nv + np.maximum(a, b)
    order = np.lexsort((l, key))
    first = np.ones(len(order), dtype=bool)
    first[1:] = key[order][1:] != key[order][:-1]
    chosen = order[first & proper[order]]
    graph = sp.csr_matrix((l[chosen], (a[chosen], b[chosen])), shape=(nv, nv))
    dist, pred = csgraph.dijkstra(graph, directed=False, return_predecessors=True)
    # class of the tree edge pred -> x, oriented away from the source
    pair_edge = {}
    for e in chosen:
        pair_edge[(a[e], b[e])] = (e, 1)
        pair_edge[(b[e], a[e])] = (e, -1)
    src = np.arange(nv)[:, None]
    ptr = np.where(pred < 0, src, pred)
    step = np.zeros((nv, nv, z.shape[1]), dtype=np.int64)
    rows, cols = np.nonzero(pred >= 0)
    for r, c in zip(rows, cols):
        e, s = pair_edge[(pred[r, c], c)]
        step[r, c] = s * z[e]
    acc = step.copy()
    ptr = ptr.copy()
    idx = np.arange(nv)[:, None]
    while np.any(ptr != idx):
        acc = acc + acc[idx, ptr]
        ptr = ptr[idx, ptr]
    best = math.inf
    for start in range(0, len(l), 4096):
        sl = slice(start, start + 4096)
        cls = acc[:, a[sl]] + z[sl][None] - acc[:, b[sl]]
        length = dist[:, a[sl]] + l[sl][None] + dist[:, b[sl]]
        nontrivial = np.any(cls != 0, axis=2)
        if np.any(nontrivial):
            best = min(best, float(np.min(length[nontrivial])))
    return best


# -- norm systoles --------------------------------------------------------------

@dataclass
class SystoleResult:
    value: float
    vector: np.ndarray
    p: float
    candidates: int
    certified_radius: float

    def to_json(self) -> dict:
        return {"value": self.value, "vector": [int(x) for x in self.vector], "p": _pjson(self.p),
                "candidates": self.candidates, "certified_radius": self.certified_radius}


def _pjson(p):
    return "inf" if p is not None and math.isinf(p) else p


def norm_systole(mesh: Mesh, p: float, n_pairs: int | None = None, body=None) -> SystoleResult:
    """lambda_1 of H_1(X; Z) under ||.||_p (p = inf is the stable norm)."""
    _require_torus(mesh)
    nb = body or homology_norm_body(mesh, p, n_pairs)
    if nb.exact:
        sv = shortest_vectors(Lattice.from_gram(nb.body.quadratic_form))
        return SystoleResult(sv.length, sv.vectors[0], p, len(sv.vectors), sv.length)
    ell = john_ellipsoid(nb.body, tol=CERT_DESIGN_TOL)
    q = ell.quadratic_form
    b = q.shape[0]
    # start from the shortest classes of the John ellipsoid
    seed = shortest_vectors(Lattice.from_gram(q), tol=0.5).vectors
    cache = {}

    def exact(h):
        k = tuple(int(x) for x in h)
        if k not in cache:
            cache[k] = homology_norm(np.array(k, dtype=float), p, mesh)
            cache[tuple(-x for x in k)] = cache[k]
        return cache[k]

    best_h = min(seed, key=exact)
    best = exact(best_h)
    # lower bound P(h) <= ||h||; the P-ball lies in sqrt(b (1 + gap)) times the design ellipsoid
    radius = math.sqrt(b * (1.0 + ell.feasibility_gap)) * best * (1.0 + 1e-9)
    found = enumerate_short_vectors(q, radius * radius)
    if len(found) > MAX_CANDIDATES:
        raise ResourceError(f"{len(found)} candidate classes exceed the limit {MAX_CANDIDATES}")
    cands = np.array([x for _, x in found], dtype=float)
    lower = nb.lower_bound(cands)
    for i in np.argsort(lower):
        if lower[i] > best * (1.0 + 1e-9):
            break
        val = exact(cands[i])
        if val < best:
            best, best_h = val, cands[i]
    return SystoleResult(best, np.asarray(best_h, dtype=np.int64), p, len(cands), radius)


def stable_systole(mesh: Mesh, **kw) -> float:
    return norm_systole(mesh, math.inf, **kw).value


def conformal_systole(mesh: Mesh, **kw) -> float:
    """Systole of ||.||_n, n = dim; conformally (hence scale) invariant."""
    return norm_systole(mesh, float(mesh.dim), **kw).value


def lp_systole(mesh: Mesh, p: float, **kw) -> float:
    if abs(volume(mesh) - 1.0) > 1e-8 and p != mesh.dim:
        raise PreconditionError("unit volume", "L^p systoles are compared on unit-volume meshes")
    return norm_systole(mesh, p, **kw).value


# -- reports ----------------------------------------------------------------------

@dataclass
class VerifyConfig:
    equality_tol: float = 0.02
    slack_tol: float = 1e-6
    spread_tol: float = 1e-2
    conformal_tol: float = 1.02
    critical_tol: float = 0.02
    n_pairs: int | None = None
    degree_values: int = 16
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict | None) -> "VerifyConfig":
        obj = dict(obj or {})
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        cfg = cls(**known)
        for name in ("equality_tol", "slack_tol", "spread_tol", "critical_tol"):
            if getattr(cfg, name) <= 0:
                raise ValueError(f"tolerance {name} must be positive")
        if cfg.conformal_tol < 1:
            raise ValueError("conformal_tol is a singular-value ratio bound and must be >= 1")
        return cfg


@dataclass
class InequalityReport:
    inequality: str
    lhs: float
    rhs: float
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    equality_tol: float = 0.02
    slack_tol: float = 1e-6

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs else math.inf

    @property
    def ratio_near_one(self) -> bool:
        return bool(self.ratio > 1.0 - self.equality_tol)

    @property
    def equality_flag(self) -> bool:
        # second-order ratio deficits can sit inside the tolerance while the
        # first-order equality signatures clearly fail, so both are required
        return self.ratio_near_one and all(d["passed"] for d in self.diagnostics.values())

    @property
    def holds(self) -> bool:
        return bool(self.slack >= -self.slack_tol * max(1.0, abs(self.rhs)))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "inequality": self.inequality,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "ratio": self.ratio,
            "holds": self.holds,
            "ratio_near_one": self.ratio_near_one,
            "equality_flag": self.equality_flag,
            "diagnostics": self.diagnostics,
            "provenance": self.provenance,
            "extra": self.extra,
        }


class MeshAnalysis:
    """Caches the expensive per-mesh ingredients shared by several inequalities."""

    def __init__(self, mesh: Mesh, config: VerifyConfig | None = None):
        self.mesh = mesh
        self.config = config or VerifyConfig()
        self._bodies = {}
        self._systoles = {}
        self._bi = {}
        self._degree = None
        self._harmonic = None

    @property
    def n(self) -> int:
        return self.mesh.dim

    @property
    def b(self) -> int:
        return mesh_homology(self.mesh).b1

    @property
    def volume(self) -> float:
        return volume(self.mesh)

    def body(self, p):
        if p not in self._bodies:
            self._bodies[p] = homology_norm_body(self.mesh, p, self.config.n_pairs)
        return self._bodies[p]

    def systole(self, p) -> SystoleResult:
        if p not in self._systoles:
            self._systoles[p] = norm_systole(self.mesh, p, body=self.body(p))
        return self._systoles[p]

    def degree(self) -> int:
        if self._degree is None:
            self._degree = degree(harmonic_abel_jacobi(self.mesh), self.config.degree_values, self.config.seed)
        return self._degree

    def harmonic_spread(self) -> float:
        if self._harmonic is None:
            _, forms = harmonic_gram(self.mesh)
            self._harmonic = max(pointwise_spread(f) for f in forms)
        return self._harmonic

    def bi(self, p):
        if p not in self._bi:
            self._bi[p] = build_bi_map(self.mesh, p, self.config.n_pairs)
        return self._bi[p]

    # diagnostics
    def diag_constant_norm(self) -> dict:
        s = self.harmonic_spread()
        return {"value": s, "threshold": self.config.spread_tol, "passed": bool(s < self.config.spread_tol)}

    def diag_conformal(self, p) -> dict:
        r = float(np.max(self.bi(p).map.singular_value_ratio()))
        return {"value": r, "threshold": self.config.conformal_tol, "passed": bool(r < self.config.conformal_tol),
                "map_exponent": _pjson(p)}

    def diag_critical(self, p) -> dict:
        q = john_ellipsoid(self.body(p).body, tol=CERT_DESIGN_TOL).quadratic_form
        ratio = hermite_ratio(Lattice.from_gram(q)) / hermite_power(self.b)
        return {"value": ratio, "threshold": 1.0 - self.config.critical_tol,
                "passed": bool(ratio >= 1.0 - self.config.critical_tol), "norm_exponent": _pjson(p)}


def _hyp(cond, name, msg):
    if not cond:
        raise PreconditionError(name, msg)


def verify(target, inequality: str, p: float | None = None, config: VerifyConfig | dict | None = None,
           analysis: MeshAnalysis | None = None, provenance: dict | None = None) -> InequalityReport:
    """Evaluate one systolic inequality on a mesh or closed-form fixture."""
    from . import fixtures

    cfg = config if isinstance(config, VerifyConfig) else VerifyConfig.from_dict(config)
    ineq = str(inequality)
    if ineq not in INEQUALITIES:
        raise PreconditionError("known inequality", f"unknown inequality id {ineq!r}; expected one of {INEQUALITIES}")
    if isinstance(target, (fixtures.HeisenbergFixture, fixtures.ProductFixture)):
        return fixtures.fixture_report(target, ineq, p, cfg)
    mesh = target
    an = analysis or MeshAnalysis(mesh, cfg)
    n, b, vol = an.n, an.b, an.volume
    prov = {"source": mesh.name, "n": n, "b": b, "volume": vol, "p": _pjson(p),
            "tolerances": asdict(cfg)}
    prov.update(provenance or {})
    diag, extra = {}, {}
    if ineq == "11":
        raise PreconditionError("dim = b1 + 1 with nonzero fiber class",
                                "inequality 11 is evaluated on Heisenberg fixtures only")
    if ineq in ("10", "10c"):
        _hyp(n == b, "n = b1", f"inequality {ineq} needs dim = b1, got n={n}, b={b}")
    gamma = hermite_power(b)
    if ineq in ("10", "eq12"):
        st = an.systole(math.inf)
        deg = an.degree()
        lhs, rhs = deg * st.value ** b, gamma * vol
        extra = {"stsys": st.value, "systolic_class": st.to_json()["vector"], "deg": deg, "gamma_power": gamma}
        diag = {"constant_norm": an.diag_constant_norm(), "conformal_map": an.diag_conformal(2.0 if n == 2 else float(n)),
                "critical_lattice": an.diag_critical(math.inf)}
    elif ineq == "10c":
        cs = an.systole(float(n))
        deg = an.degree()
        lhs, rhs = deg * cs.value ** n, gamma
        extra = {"confsys": cs.value, "deg": deg, "gamma_power": gamma}
        diag = {"conformal_map": an.diag_conformal(float(n)), "critical_lattice": an.diag_critical(float(n))}
    elif ineq == "23":
        p = float(max(b, 2)) if p is None else float(p)
        _hyp(p >= max(b, 2), "p >= max(b, 2)", f"p = {p} is below max(b, 2) = {max(b, 2)}")
        _hyp(abs(vol - 1.0) <= 1e-8, "unit volume", f"mesh volume is {vol:.12g}")
        ls = an.systole(p)
        deg = an.degree()
        lhs, rhs = deg * ls.value ** b, gamma
        extra = {"lp_systole": ls.value, "deg": deg, "gamma_power": gamma}
        prov["p"] = p
        diag = {"conformal_map": an.diag_conformal(p), "critical_lattice": an.diag_critical(p)}
        if p != n:
            # ||.||_n is conformally invariant; constant norm only characterizes p != n
            diag = {"constant_norm": an.diag_constant_norm(), **diag}
    elif ineq == "23c":
        cs = an.systole(float(n))
        deg = an.degree()
        lhs = deg * cs.value ** b
        rhs_printed = gamma * vol ** (n - b)
        rhs_scaled = gamma * vol ** ((n - b) / n)
        rhs = rhs_printed
        extra = {"confsys": cs.value, "deg": deg, "gamma_power": gamma, "rhs_printed": rhs_printed,
                 "rhs_scale_consistent": rhs_scaled,
                 "exponent_discrepancy": bool(abs(rhs_printed - rhs_scaled) > 1e-12 * max(1.0, rhs_scaled))}
        diag = {"conformal_map": an.diag_conformal(float(n)), "critical_lattice": an.diag_critical(float(n))}
    elif ineq == "28":
        st = an.systole(math.inf)
        cs = an.systole(float(n))
        lhs, rhs = st.value, cs.value * vol ** (1.0 / n)
        extra = {"stsys": st.value, "confsys": cs.value}
    report = InequalityReport(ineq, float(lhs), float(rhs), diag, prov, extra, cfg.equality_tol, cfg.slack_tol)
    return report
