"""Symmetric norms on R^b, their John ellipsoids and rank-1 decompositions.

The maximum-volume inscribed ellipsoid of a symmetric polytope
``{x : |<a_j, x>| <= 1}`` is found through its dual, the D-optimal design
problem over the facet covectors ``a_j``.  At the optimum the ellipsoid form
is ``Q = sum_j mu_j a_j a_j^T`` with ``sum_j mu_j = b``; the support of
``mu`` is then pruned to at most ``b(b+1)/2`` terms, which gives the
decomposition ``|x|_E^2 = sum_i lambda_i L_i(x)^2`` with ``|L_i|^* = 1``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .errors import ConvergenceError, DegenerateContactError, InvalidNormError, UnsupportedDimensionError

log = logging.getLogger(__name__)

MAX_DIM = 8
SYM_TOL = 1e-9
CONTACT_TOL = 1e-6
DESIGN_TOL = 1e-12
DESIGN_MAX_ITER = 200_000
FW_WARM_ITER = 1000
CANDIDATE_BAND = 0.05
BARRIER_MAX_POINTS = 600
BARRIER_MAX_STAGES = 40
BARRIER_NEWTON_STEPS = 60


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    return -v if len(nz) and v[nz[0]] < 0 else v


def _dedupe_rows(rows: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    rows = np.array([_canonical_sign(r) for r in rows])
    order = np.lexsort(rows.T[::-1])
    out = []
    for r in rows[order]:
        if not out or np.max(np.abs(r - out[-1])) > tol * max(1.0, np.max(np.abs(r))):
            out.append(r)
    return np.array(out)


@dataclass
class NormBody:
    """A symmetric norm on R^b.

    ``facets`` holds one covector per opposite facet pair so that the unit
    ball is ``{x : max_j |<a_j, x>| <= 1}``; ``vertices`` is the symmetric
    vertex list.  Ellipsoidal norms keep their quadratic form instead.
    """

    dim: int
    kind: str
    vertices: np.ndarray | None = None
    facets: np.ndarray | None = None
    quadratic_form: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    # constructors -------------------------------------------------------
    @classmethod
    def polytope(cls, vertices, kind="polytope") -> "NormBody":
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        if v.size == 0:
            raise InvalidNormError("empty polytope")
        b = v.shape[1]
        if b > MAX_DIM:
            raise UnsupportedDimensionError(f"norm dimension {b} > {MAX_DIM}")
        scale = np.max(np.abs(v))
        for x in v:
            if np.min(np.max(np.abs(v + x), axis=1)) > SYM_TOL * scale:
                raise InvalidNormError("vertex list is not closed under negation")
        if b == 1:
            r = float(np.max(np.abs(v)))
            return cls(1, kind, vertices=np.array([[r], [-r]]), facets=np.array([[1.0 / r]]))
        try:
            hull = ConvexHull(v)
        except Exception as exc:  # qhull raises its own error type
            raise InvalidNormError(f"polytope is degenerate: {exc}") from None
        normals, offsets = hull.equations[:, :-1], hull.equations[:, -1]
        if np.any(offsets >= -1e-12 * scale):
            raise InvalidNormError("origin is not interior to the polytope")
        facets = _dedupe_rows(normals / (-offsets)[:, None])
        verts = v[np.unique(hull.vertices)]
        return cls(b, kind, vertices=verts, facets=facets)

    @classmethod
    def halfspaces(cls, covectors, values=None) -> "NormBody":
        """Polytope ``{x : |<c_j, x>| <= values_j}``; values are dual-norm samples."""
        c = np.atleast_2d(np.asarray(covectors, dtype=float))
        vals = np.ones(len(c)) if values is None else np.asarray(values, dtype=float)
        if np.any(vals <= 0):
            raise InvalidNormError("support values must be positive")
        facets = _dedupe_rows(c / vals[:, None])
        body = cls(c.shape[1], "polytope", facets=facets)
        if body.dim > MAX_DIM:
            raise UnsupportedDimensionError(f"norm dimension {body.dim} > {MAX_DIM}")
        return body

    @classmethod
    def ellipsoid(cls, quadratic_form) -> "NormBody":
        q = np.atleast_2d(np.asarray(quadratic_form, dtype=float))
        if not np.allclose(q, q.T) or np.linalg.eigvalsh(q)[0] <= 0:
            raise InvalidNormError("quadratic form must be symmetric positive definite")
        return cls(q.shape[0], "ellipsoid", quadratic_form=0.5 * (q + q.T))

    @classmethod
    def from_samples(cls, directions, values) -> "NormBody":
        """Inner polytope through the sampled unit-sphere points ``d_j / |d_j|``."""
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        n = np.asarray(values, dtype=float)
        if np.any(n <= 0):
            raise InvalidNormError("norm samples must be positive")
        pts = d / n[:, None]
        pts = np.vstack([pts, -pts])
        body = cls.polytope(_unique_points(pts), kind="samples")
        gaps = _angular_gap(d)
        body.meta = {"samples": len(d), "max_angular_gap": gaps}
        return body

    @classmethod
    def from_json(cls, obj: dict) -> "NormBody":
        kind = obj.get("kind")
        data = obj.get("data")
        if kind == "polytope":
            body = cls.polytope(data)
        elif kind == "ellipsoid":
            body = cls.ellipsoid(data)
        elif kind == "samples":
            body = cls.from_samples(data["directions"], data["values"])
        elif kind == "halfspaces":
            body = cls.halfspaces(data["covectors"], data.get("values"))
        else:
            raise InvalidNormError(f"unknown norm kind {kind!r}")
        if "dim" in obj and int(obj["dim"]) != body.dim:
            raise InvalidNormError("declared dim does not match data")
        return body

    def to_json(self) -> dict:
        if self.kind == "ellipsoid":
            return {"dim": self.dim, "kind": "ellipsoid", "data": self.quadratic_form.tolist()}
        return {"dim": self.dim, "kind": "polytope", "data": self.vertex_list().tolist()}

    # evaluation ---------------------------------------------------------
    def vertex_list(self) -> np.ndarray:
        if self.vertices is None:
            if self.dim == 1:
                r = 1.0 / abs(float(self.facets[0, 0]))
                self.vertices = np.array([[r], [-r]])
            else:
                hs = np.vstack([self.facets, -self.facets])
                hs = np.hstack([hs, -np.ones((len(hs), 1))])
                try:
                    inter = HalfspaceIntersection(hs, np.zeros(self.dim))
                except Exception as exc:
                    raise InvalidNormError(f"halfspaces do not bound a polytope: {exc}") from None
                self.vertices = _unique_points(inter.intersections)
        return self.vertices

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "ellipsoid":
            return float(math.sqrt(max(x @ self.quadratic_form @ x, 0.0)))
        return float(np.max(np.abs(self.facets @ x)))

    def dual_norm(self, functional) -> float:
        return dual_norm(self, functional)

    def norms(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self.kind == "ellipsoid":
            return np.sqrt(np.einsum("ij,jk,ik->i", xs, self.quadratic_form, xs))
        return np.max(np.abs(xs @ self.facets.T), axis=1)

    def transformed(self, t) -> "NormBody":
        """Image of the unit ball under the linear map ``t``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "ellipsoid":
            ti = np.linalg.inv(t)
            return NormBody.ellipsoid(ti.T @ self.quadratic_form @ ti)
        if self.vertices is not None:
            return NormBody.polytope(self.vertices @ t.T)
        return NormBody.halfspaces(self.facets @ np.linalg.inv(t))


def _unique_points(pts: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    order = np.lexsort(pts.T[::-1])
    out = []
    for p in pts[order]:
        if not any(np.max(np.abs(p - q)) <= tol * max(1.0, np.max(np.abs(p))) for q in out[-8:]):
            out.append(p)
    return np.array(out)


def _angular_gap(d: np.ndarray) -> float:
    u = d / np.linalg.norm(d, axis=1)[:, None]
    u = np.vstack([u, -u])
    cos = np.clip(u @ u.T, -1, 1)
    np.fill_diagonal(cos, -1)
    return float(np.max(np.arccos(np.max(cos, axis=1))))


def dual_norm(norm: NormBody, functional) -> float:
    """sup{<L, x> : |x| <= 1}; exact over the vertices for polytopes."""
    f = np.asarray(functional, dtype=float)
    if not np.any(f):
        return 0.0
    if norm.kind == "ellipsoid":
        return float(math.sqrt(f @ np.linalg.solve(norm.quadratic_form, f)))
    v = norm.vertex_list()
    if len(v) == 0:
        raise InvalidNormError("empty polytope")
    return float(np.max(np.abs(v @ f)))


@dataclass(frozen=True)
class Ellipsoid:
    """``|x|_E^2 = x^T Q x``; design weights are kept when known."""

    quadratic_form: np.ndarray
    covectors: np.ndarray | None = None
    weights: np.ndarray | None = None
    feasibility_gap: float = 0.0
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.quadratic_form.shape[0]

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(math.sqrt(x @ self.quadratic_form @ x))

    @property
    def volume_factor(self) -> float:
        """Volume relative to the Euclidean unit ball, det(Q)^(-1/2)."""
        return float(np.linalg.det(self.quadratic_form) ** -0.5)

    def contact_points(self, tol: float = CONTACT_TOL) -> np.ndarray:
        if self.covectors is None:
            return np.empty((0, self.dim))
        qi = np.linalg.inv(self.quadratic_form)
        s = np.einsum("ij,jk,ik->i", self.covectors, qi, self.covectors)
        return self.covectors[s >= 1 - tol] @ qi

    def to_json(self) -> dict:
        out = {"quadratic_form": self.quadratic_form.tolist(),
               "feasibility_gap": self.feasibility_gap}
        if self.covectors is not None:
            out["contact_points"] = self.contact_points().tolist()
        return out


def _design_gap(a, u):
    minv = np.linalg.inv(a.T @ (u[:, None] * a))
    g = np.einsum("ij,jk,ik->i", a, minv, a)
    return g, g.max() / a.shape[1] - 1.0


def _barrier_design(a, u0, tol):
    """Log-barrier Newton path for the design problem on a small point set.

    Minimizes ``-log det M(u) - mu sum log u`` on the simplex for decreasing
    ``mu``; the barrier optimum has gap at most ``m mu / b``.
    """
    m, b = a.shape
    u = 0.5 * u0 + 0.5 / m
    mu = 1e-2 / m
    for _ in range(BARRIER_MAX_STAGES):
        for _ in range(BARRIER_NEWTON_STEPS):
            minv = np.linalg.inv(a.T @ (u[:, None] * a))
            gm = a @ minv @ a.T
            grad = -np.diag(gm) - mu / u
            hess = gm * gm + np.diag(mu / (u * u))
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = hess
            kkt[:m, m] = kkt[m, :m] = 1.0
            du = np.linalg.solve(kkt, np.concatenate([-grad, [0.0]]))[:m]
            dec = math.sqrt(max(du @ hess @ du, 0.0))
            t = 1.0 if dec < 0.25 else 1.0 / (1.0 + dec)
            neg = du < 0
            if np.any(neg):
                t = min(t, 0.99 * float(np.min(-u[neg] / du[neg])))
            u = u + t * du
            if dec < 1e-9:
                break
        g, gap = _design_gap(a, u)
        if gap <= tol:
            return u / u.sum()
        mu *= 0.1
    return u / u.sum()


def d_optimal_design(points: np.ndarray, tol: float = DESIGN_TOL, max_iter: int = DESIGN_MAX_ITER):
    """Weights u on the simplex maximizing log det(sum u_j a_j a_j^T).

    Frank-Wolfe with away steps for a warm start, then log-barrier Newton on
    the points that can still be in contact (adding violators until none are
    left).  Frank-Wolfe alone zigzags between nearly tied contact facets.
    Returns ``(u, gap, iterations)`` where ``gap = max_j a_j^T M^-1 a_j / b - 1``
    certifies optimality.
    """
    a = np.asarray(points, dtype=float)
    m, b = a.shape
    u = np.full(m, 1.0 / m)
    mat = a.T @ (u[:, None] * a)
    if np.linalg.matrix_rank(mat) < b:
        raise InvalidNormError("covectors do not span the dual space; the body is unbounded")
    minv = np.linalg.inv(mat)
    gap = math.inf
    warm = min(max_iter, FW_WARM_ITER)
    for it in range(1, warm + 1):
        if it % 64 == 0:
            mat = a.T @ (u[:, None] * a)
            minv = np.linalg.inv(mat)
        g = np.einsum("ij,jk,ik->i", a, minv, a)
        jp = int(np.argmax(g))
        gp = g[jp]
        active = u > 0
        ga = np.where(active, g, np.inf)
        jm = int(np.argmin(ga))
        gm = ga[jm]
        gap = gp / b - 1.0
        if gap <= tol:
            return u, max(gap, 0.0), it
        if gp - b >= b - gm:
            j, alpha = jp, (gp - b) / (b * (gp - 1.0))
        else:
            j = jm
            floor = -u[j] / (1.0 - u[j]) if u[j] < 1 else -np.inf
            alpha = (gm - b) / (b * (gm - 1.0)) if gm > 1 else -np.inf
            alpha = max(alpha, floor)
        u *= 1.0 - alpha
        u[j] += alpha
        if u[j] <= 1e-300:
            u[j] = 0.0
        aj = a[j]
        # Sherman-Morrison update of ((1-alpha) M + alpha a a^T)^-1
        r = alpha / (1.0 - alpha)
        ma = minv @ aj
        minv = (minv - r * np.outer(ma, ma) / (1.0 + r * (aj @ ma))) / (1.0 - alpha)
    g, gap = _design_gap(a, u)
    cand = np.flatnonzero((u > 0) | (g >= b * (1.0 - CANDIDATE_BAND)))
    it = warm
    while True:
        if len(cand) > BARRIER_MAX_POINTS:
            break
        uc = _barrier_design(a[cand], u[cand] / u[cand].sum(), 0.5 * tol)
        it += 1
        u = np.zeros(m)
        u[cand] = uc
        g, gap = _design_gap(a, u)
        if gap <= tol:
            return u, max(gap, 0.0), it
        extra = np.setdiff1d(np.flatnonzero(g > b * (1.0 + 0.5 * tol)), cand)
        if len(extra) == 0:
            break
        cand = np.union1d(cand, extra)
    raise ConvergenceError("John ellipsoid design did not converge", residual=gap)


def john_ellipsoid(norm: NormBody, tol: float = DESIGN_TOL, max_iter: int = DESIGN_MAX_ITER) -> Ellipsoid:
    """Maximum-volume ellipsoid inscribed in the unit ball of ``norm``."""
    if norm.dim > MAX_DIM:
        raise UnsupportedDimensionError(f"norm dimension {norm.dim} > {MAX_DIM}")
    if norm.kind == "ellipsoid":
        return Ellipsoid(norm.quadratic_form.copy())
    a = norm.facets
    u, gap, it = d_optimal_design(a, tol, max_iter)
    b = norm.dim
    mu = b * u
    q = a.T @ (mu[:, None] * a)
    return Ellipsoid(0.5 * (q + q.T), covectors=a, weights=mu, feasibility_gap=gap, iterations=it)


@dataclass(frozen=True)
class Rank1Decomposition:
    weights: np.ndarray  # lambda_i > 0
    functionals: np.ndarray  # (N, b) covectors L_i
    quadratic_form: np.ndarray

    @property
    def count(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.functionals.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.functionals.T @ (self.weights[:, None] * self.functionals)

    def reconstruction_error(self) -> float:
        return float(np.linalg.norm(self.reconstruct() - self.quadratic_form))

    def to_json(self) -> dict:
        return {"count": self.count, "weights": self.weights.tolist(),
                "functionals": self.functionals.tolist(),
                "quadratic_form": self.quadratic_form.tolist()}


def _svec(a: np.ndarray) -> np.ndarray:
    # Frobenius-isometric vectorization of a a^T
    b = len(a)
    iu = np.triu_indices(b)
    m = np.outer(a, a)
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return m[iu] * w


def _svec_mat(m: np.ndarray) -> np.ndarray:
    b = m.shape[0]
    iu = np.triu_indices(b)
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return m[iu] * w


def caratheodory_reduce(columns: np.ndarray, weights: np.ndarray, rank_tol: float = 1e-9):
    """Drop terms from a positive combination while the columns are dependent.

    ``columns`` is (D, k).  Each pass finds a null vector of the active
    columns and moves along it until one weight hits zero, so the combination
    ``columns @ weights`` is preserved.  Returns the indices kept and weights.
    """
    keep = list(range(columns.shape[1]))
    w = np.asarray(weights, dtype=float).copy()
    while len(keep) > 1:
        sub = columns[:, keep]
        _, s, vt = np.linalg.svd(sub, full_matrices=True)
        smax = s[0] if len(s) else 0.0
        if len(keep) <= len(s) and s[-1] > rank_tol * smax:
            break
        nu = vt[-1]
        if np.max(nu) <= 0:
            nu = -nu
        pos = nu > 1e-15 * np.max(np.abs(nu))
        ratios = np.where(pos, w[keep] / np.where(pos, nu, 1.0), np.inf)
        j = int(np.argmin(ratios))
        t = ratios[j]
        for idx, k in enumerate(keep):
            w[k] -= t * nu[idx]
        w[keep[j]] = 0.0
        keep = [k for k in keep if w[k] > 0]
    return keep, w[keep]


def rank1_decomposition(norm: NormBody, ellipsoid: Ellipsoid, contact_tol: float = CONTACT_TOL) -> Rank1Decomposition:
    """Decompose the John form as ``sum lambda_i L_i L_i^T`` with ``|L_i|^* = 1``."""
    b = norm.dim
    q = ellipsoid.quadratic_form
    target_count = b * (b + 1) // 2
    if norm.kind == "ellipsoid":
        w, v = np.linalg.eigh(q)
        root = v @ np.diag(np.sqrt(w)) @ v.T
        return Rank1Decomposition(np.ones(b), root.T.copy(), q.copy())

    qi = np.linalg.inv(q)
    a = norm.facets
    s = np.einsum("ij,jk,ik->i", a, qi, a)
    contacts = a[s >= 1 - contact_tol]
    if len(contacts) < b:
        raise DegenerateContactError(
            f"only {len(contacts)} contact covectors for b={b}; the ellipsoid is not the John ellipsoid")
    contacts = contacts[np.lexsort(contacts.T[::-1])]
    cols = np.array([_svec(c) for c in contacts]).T
    aug = np.vstack([cols, np.ones((1, len(contacts)))])
    rhs = np.concatenate([_svec_mat(q), [float(b)]])
    lam, _ = nnls(aug, rhs, maxiter=50 * aug.shape[1])
    support = np.flatnonzero(lam > 0)
    keep, lam_s = caratheodory_reduce(aug[:, support], lam[support])
    idx = support[keep]
    # refine on the final support
    sol, *_ = np.linalg.lstsq(aug[:, idx], rhs, rcond=None)
    if np.all(sol > 0):
        lam_s = sol
    if len(idx) > target_count:
        warnings.warn(f"rank-1 decomposition kept {len(idx)} terms, above b(b+1)/2 = {target_count}",
                      RuntimeWarning, stacklevel=2)
    dec = Rank1Decomposition(lam_s, contacts[idx], q.copy())
    return dec


def isometry_embedding(decomp: Rank1Decomposition) -> np.ndarray:
    """Matrix of x -> (sqrt(lambda_i) L_i(x))_i, an isometry from (R^b, |.|_E) into R^N."""
    return np.sqrt(decomp.weights)[:, None] * decomp.functionals


def regular_polygon(n: int, radius: float = 1.0, phase: float = 0.0) -> np.ndarray:
    t = phase + 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(t), np.sin(t)])


def random_symmetric_polytope(b: int, n_pairs: int, rng: np.random.Generator) -> NormBody:
    """Convex hull of random +-pairs with a random linear distortion."""
    pts = rng.normal(size=(n_pairs, b))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    pts *= rng.uniform(0.5, 1.5, size=(n_pairs, 1))
    t = np.eye(b) + 0.3 * rng.normal(size=(b, b))
    pts = pts @ t.T
    return NormBody.polytope(np.vstack([pts, -pts]))
