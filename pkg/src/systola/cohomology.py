"""L^p-minimizing closed 1-forms, cohomology norms and their dual homology norms.

A closed 1-form is a cochain ``omega0 + A x`` where ``A`` spans the free
directions (coboundaries d f, and for homology norms also a slice of
cohomology classes).  Every norm below is the minimum of a convex energy
over ``x``:

* finite p: sum over top simplices of vol * |omega|^p, minimized by a damped
  Newton method with epsilon-smoothing |u|^2 -> |u|^2 + eps^2 and
  continuation in eps (and in p when p is large);
* p = inf: the comass min_x max_s |omega|_s, a second-order cone program.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConvergenceError, InvalidFormError, InvalidMeshError, PreconditionError,
                     SolverError, UnsupportedDimensionError, WrongExponentError)
from .mesh import Form, HomologyData, Mesh, homology_basis, volume

log = logging.getLogger(__name__)

P_MAX = 64.0
EPS_SCHEDULE = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
STATIONARITY_TOL = 1e-8
VOLUME_TOL = 1e-8
MONOTONE_TOL = 1e-6
PROFILE_EQUAL_TOL = 1e-5
SPREAD_TOL = 1e-3
COCLOSED_TOL = 1e-6
COMASS_TOLS = (1e-9, 1e-8)


def _homology(mesh: Mesh) -> HomologyData:
    cached = getattr(mesh, "_homology", None)
    if cached is None:
        cached = homology_basis(mesh)
        mesh._homology = cached
    return cached


def mesh_homology(mesh: Mesh) -> HomologyData:
    """Homology basis of ``mesh``, computed once per mesh object."""
    return _homology(mesh)


@dataclass(eq=False)
class CohomologyClass:
    coefficients: np.ndarray
    representative: Form

    @classmethod
    def from_coefficients(cls, mesh: Mesh, coefficients) -> "CohomologyClass":
        hom = _homology(mesh)
        c = np.asarray(coefficients, dtype=float).reshape(-1)
        if c.shape != (hom.b1,):
            raise InvalidFormError(f"expected {hom.b1} coefficients, got {c.size}")
        return cls(c, Form(hom.representative(c), mesh))

    @classmethod
    def from_form(cls, form: Form) -> "CohomologyClass":
        if not form.is_closed():
            raise InvalidFormError(f"form is not closed (residual {form.coboundary_residual():.2e})")
        hom = _homology(form.mesh)
        return cls(hom.class_of(form.values), form)

    @property
    def mesh(self) -> Mesh:
        return self.representative.mesh

    def __mul__(self, c):
        return CohomologyClass(self.coefficients * c, self.representative * c)

    __rmul__ = __mul__


# -- finite p ----------------------------------------------------------------

@dataclass
class SolveInfo:
    p: float
    energy: float
    residual: float
    iterations: int
    eps: float


def _gauge_free_coboundary(mesh: Mesh) -> sp.csr_matrix:
    return mesh.d0[:, 1:].astype(float).tocsr()


def _block_hessian(u, v, p, eps, d):
    s = np.einsum("ij,ij->i", u, u) + eps * eps
    a = p * v * s ** (p / 2 - 1)
    c = p * (p - 2) * v * s ** (p / 2 - 2)
    blocks = a[:, None, None] * np.eye(d)[None] + c[:, None, None] * np.einsum("ij,ik->ijk", u, u)
    m = len(u)
    rows = np.repeat(np.arange(m * d).reshape(m, d), d, axis=1).reshape(-1)
    cols = np.tile(np.arange(m * d).reshape(m, d), (1, d)).reshape(-1)
    return sp.csr_matrix((blocks.reshape(-1), (rows, cols)), shape=(m * d, m * d))


def _energy(u, v, p, eps):
    return float(np.sum(v * (np.einsum("ij,ij->i", u, u) + eps * eps) ** (p / 2)))


def _stationarity(b_mat, u, v, p):
    n = np.linalg.norm(u, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n > 0, v * n ** (p - 2), 0.0)
    g = b_mat.T @ (w[:, None] * u).reshape(-1)
    scale = abs(b_mat).T @ np.repeat(v * n ** (p - 1), u.shape[1])
    denom = max(float(np.max(scale, initial=0.0)), 1e-300)
    return float(np.max(np.abs(g), initial=0.0)) / denom


def _newton(b_mat, u0, v, p, x, eps, d, max_iter=200):
    its = 0
    for its in range(1, max_iter + 1):
        u = (u0 + b_mat @ x).reshape(-1, d)
        s = np.einsum("ij,ij->i", u, u) + eps * eps
        grad_u = (p * v * s ** (p / 2 - 1))[:, None] * u
        g = b_mat.T @ grad_u.reshape(-1)
        h = (b_mat.T @ _block_hessian(u, v, p, eps, d) @ b_mat).tocsc()
        h = h + sp.identity(h.shape[0], format="csc") * (1e-14 * h.diagonal().max())
        try:
            step = -spla.spsolve(h, g)
        except RuntimeError as exc:
            raise ConvergenceError(f"singular Newton system: {exc}", residual=float(np.abs(g).max())) from None
        dec = float(-(g @ step))
        e0 = _energy(u, v, p, eps)
        if dec <= 1e-22 * max(e0, 1e-300):
            break
        t = 1.0
        while True:
            e1 = _energy((u0 + b_mat @ (x + t * step)).reshape(-1, d), v, p, eps)
            if e1 <= e0 - 0.25 * t * dec:
                break
            t *= 0.5
            if t < 1e-12:
                return x, its
        x = x + t * step
    return x, its


def _minimize_lp(mesh: Mesh, omega0, a_mat, p, x0=None):
    """Minimize sum vol |W (omega0 + A x)|^p; returns (x, omega, info)."""
    d = mesh.dim
    v = mesh.simplex_volumes
    b_mat = (mesh.whitney @ a_mat).tocsr()
    u0 = mesh.whitney @ omega0
    n = a_mat.shape[1]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if p == 2:
        h = (b_mat.T @ sp.diags(np.repeat(v, d)) @ b_mat).tocsc()
        rhs = -(b_mat.T @ (np.repeat(v, d) * u0))
        x = spla.spsolve(h, rhs)
        its, eps = 1, 0.0
    else:
        ps = [p]
        if p > 4:
            ps = []
            q = 4.0
            while q < p:
                ps.append(q)
                q *= 2
            ps.append(p)
        if x0 is None:
            x = _minimize_lp(mesh, omega0, a_mat, 2.0)[0]
        its = 0
        for q in ps:
            for eps in EPS_SCHEDULE:
                x, k = _newton(b_mat, u0, v, q, x, eps, d)
                its += k
    omega = omega0 + a_mat @ x
    u = (mesh.whitney @ omega).reshape(-1, d)
    res = _stationarity(b_mat, u, v, p)
    info = SolveInfo(p=p, energy=float(np.sum(v * np.linalg.norm(u, axis=1) ** p)), residual=res,
                     iterations=its, eps=0.0 if p == 2 else EPS_SCHEDULE[-1])
    return x, omega, info


def _check_exponent(p):
    if math.isinf(p):
        raise WrongExponentError("p = inf: use comass_minimizer")
    if not 1.0 < p <= P_MAX:
        raise WrongExponentError(f"exponent must satisfy 1 < p <= {P_MAX:g} (use p = inf for the comass), got {p}")


def _check_unit_volume(mesh: Mesh):
    vol = volume(mesh)
    if abs(vol - 1.0) > VOLUME_TOL:
        raise PreconditionError("unit volume", f"mesh volume is {vol:.12g}; normalize_volume first")


def lp_minimizer(cls: CohomologyClass, p: float, mesh: Mesh | None = None, init=None,
                 require_unit_volume: bool = True, return_info: bool = False):
    """The unique L^p-minimizing closed form in the class (1 < p <= 64)."""
    mesh = mesh or cls.mesh
    _check_exponent(p)
    if require_unit_volume:
        _check_unit_volume(mesh)
    omega0 = cls.representative.values
    scale = Form(omega0, mesh).lp_norm(p)
    if scale == 0.0:
        out = Form(np.zeros(mesh.n_edges), mesh)
        info = SolveInfo(p, 0.0, 0.0, 0, 0.0)
        return (out, info) if return_info else out
    a_mat = _gauge_free_coboundary(mesh)
    x0 = None if init is None else np.asarray(init, dtype=float)[1:] / scale
    x, omega, info = _minimize_lp(mesh, omega0 / scale, a_mat, p, x0)
    if info.residual > STATIONARITY_TOL:
        raise ConvergenceError(f"L^{p} minimizer did not reach stationarity", residual=info.residual)
    out = Form(omega * scale, mesh)
    info.energy *= scale ** p
    return (out, info) if return_info else out


def coclosed_residual(form: Form) -> float:
    """Relative size of the discrete codifferential d*omega (vertex force balance)."""
    mesh = form.mesh
    d = mesh.dim
    vw = np.repeat(mesh.simplex_volumes, d)
    flux = vw * (mesh.whitney @ form.values)
    net = mesh.d0.T @ (mesh.whitney.T @ flux)
    gross = abs(mesh.d0).T @ (abs(mesh.whitney).T @ np.abs(flux))
    denom = float(np.max(gross, initial=0.0))
    return 0.0 if denom == 0.0 else float(np.max(np.abs(net))) / denom


def harmonic_representative(cls: CohomologyClass, mesh: Mesh | None = None) -> Form:
    """Closed and discretely coclosed representative (the L^2 minimizer)."""
    mesh = mesh or cls.mesh
    omega0 = cls.representative.values
    if not np.any(omega0):
        return Form(np.zeros(mesh.n_edges), mesh)
    a_mat = _gauge_free_coboundary(mesh)
    try:
        _, omega, _ = _minimize_lp(mesh, omega0, a_mat, 2.0)
    except RuntimeError as exc:
        raise InvalidMeshError(f"singular Hodge system: {exc}") from None
    return Form(omega, mesh)


def harmonic_gram(mesh: Mesh) -> tuple[np.ndarray, list]:
    """L^2 Gram matrix of the harmonic representatives of the cobasis, and the forms."""
    hom = _homology(mesh)
    forms = [harmonic_representative(CohomologyClass.from_coefficients(mesh, e), mesh) for e in np.eye(hom.b1)]
    d = mesh.dim
    u = np.array([(mesh.whitney @ f.values).reshape(-1, d) for f in forms])
    gram = np.einsum("s,isk,jsk->ij", mesh.simplex_volumes, u, u)
    return 0.5 * (gram + gram.T), forms


# -- p = infinity -------------------------------------------------------------

def _comass_program(mesh: Mesh, omega0, a_mat):
    d = mesh.dim
    m = mesh.n_simplices
    b_mat = (mesh.whitney @ a_mat).tocsr()
    u0 = mesh.whitney @ omega0
    x = cp.Variable(a_mat.shape[1])
    t = cp.Variable()
    u = cp.reshape(u0 + b_mat @ x, (m, d), order="C")
    prob = cp.Problem(cp.Minimize(t), [cp.norm(u, 2, axis=1) <= t])
    best = None
    for tol in COMASS_TOLS:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
        except cp.error.SolverError as exc:
            raise SolverError(f"comass program failed: {exc}") from None
        if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise SolverError(f"comass program ended with status {prob.status}; the mesh is likely broken")
        xv = np.asarray(x.value)
        # any x is feasible, so the attained max norm is a valid upper bound
        val = float(np.max(np.linalg.norm((u0 + b_mat @ xv).reshape(m, d), axis=1)))
        if best is None or val < best[0]:
            best = (val, xv)
        if prob.status == cp.OPTIMAL:
            break
        log.debug("comass program inaccurate at tol %.0e; retrying", tol)
    xv = best[1]
    return xv, omega0 + a_mat @ xv


def comass_minimizer(cls: CohomologyClass, mesh: Mesh | None = None) -> tuple[Form, float]:
    """min over f of max_s |omega0 + df|_s; returns the minimizing form and the comass."""
    mesh = mesh or cls.mesh
    omega0 = cls.representative.values
    scale = float(np.max(mesh.pointwise_norm(omega0), initial=0.0))
    if scale == 0.0:
        return Form(np.zeros(mesh.n_edges), mesh), 0.0
    _, omega = _comass_program(mesh, omega0 / scale, _gauge_free_coboundary(mesh))
    form = Form(omega * scale, mesh)
    return form, float(np.max(form.pointwise_norm()))


def cohomology_norm(cls: CohomologyClass, p: float, mesh: Mesh | None = None,
                    require_unit_volume: bool = False) -> float:
    """|alpha|*_p: the least L^p norm of a closed form in the class."""
    mesh = mesh or cls.mesh
    if math.isinf(p):
        return comass_minimizer(cls, mesh)[1]
    if p == 2:
        _check_exponent(p)
        if require_unit_volume:
            _check_unit_volume(mesh)
        return harmonic_representative(cls, mesh).lp_norm(2)
    form = lp_minimizer(cls, p, mesh, require_unit_volume=require_unit_volume)
    return form.lp_norm(p)


def _norm_slice(mesh: Mesh, h):
    """omega0 and free directions for {classes c : <c, h> = 1} plus coboundaries."""
    hom = _homology(mesh)
    h = np.asarray(h, dtype=float)
    c0 = h / (h @ h)
    q, _ = np.linalg.qr(np.column_stack([h, np.eye(len(h))]))
    perp = q[:, 1:len(h)]
    z = hom.h1_cobasis.T.astype(float)  # (E, b)
    omega0 = z @ c0
    a_mat = sp.hstack([sp.csr_matrix(z @ perp), _gauge_free_coboundary(mesh)]).tocsr()
    return c0, perp, omega0, a_mat


def homology_norm(h, p: float, mesh: Mesh, return_class: bool = False):
    """||h||_p = max{<alpha, h> : |alpha|*_p <= 1} for h in basis coordinates.

    Computed as 1 / min{|alpha|*_p : <alpha, h> = 1}, a single convex
    problem over the class slice and the coboundaries jointly.
    """
    hom = _homology(mesh)
    h = np.asarray(h, dtype=float).reshape(-1)
    if h.shape != (hom.b1,):
        raise InvalidFormError(f"expected a vector of length {hom.b1}")
    if not np.any(h):
        return (0.0, np.zeros(hom.b1)) if return_class else 0.0
    c0, perp, omega0, a_mat = _norm_slice(mesh, h)
    nb = perp.shape[1]
    if math.isinf(p):
        x, omega = _comass_program(mesh, omega0, a_mat)
        best = float(np.max(mesh.pointwise_norm(omega)))
    elif p == 2:
        gram, _ = harmonic_gram(mesh)
        value = float(math.sqrt(h @ np.linalg.solve(gram, h)))
        if return_class:
            c = np.linalg.solve(gram, h) / value
            return value, c
        return value
    else:
        _check_exponent(p)
        x, omega, info = _minimize_lp(mesh, omega0, a_mat, p)
        if info.residual > STATIONARITY_TOL:
            raise ConvergenceError("homology-norm program did not reach stationarity", residual=info.residual)
        best = Form(omega, mesh).lp_norm(p)
    value = 1.0 / best
    if return_class:
        c = (c0 + perp @ x[:nb]) / best  # unit dual-norm class attaining the max
        return value, c
    return value


# -- profiles and diagnostics -------------------------------------------------

def pointwise_spread(form: Form) -> float:
    """(max - min) / mean of the per-simplex pointwise norm."""
    n = form.pointwise_norm()
    mean = float(np.mean(n))
    return 0.0 if mean == 0.0 else float((n.max() - n.min()) / mean)


@dataclass
class NormProfile:
    p_values: list
    norms: list
    monotone: bool
    constancy_checks: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "p_values": [("inf" if math.isinf(p) else p) for p in self.p_values],
            "norms": self.norms,
            "monotone": self.monotone,
            "constancy_checks": self.constancy_checks,
        }


def minimizer_for(cls: CohomologyClass, p: float, mesh: Mesh) -> Form:
    if math.isinf(p):
        return comass_minimizer(cls, mesh)[0]
    if p == 2:
        return harmonic_representative(cls, mesh)
    return lp_minimizer(cls, p, mesh)


def norm_profile(cls: CohomologyClass, mesh: Mesh | None, ps) -> NormProfile:
    """|alpha|*_p over the exponents, with monotonicity and constant-norm diagnostics."""
    mesh = mesh or cls.mesh
    _check_unit_volume(mesh)
    ps = sorted(float(p) for p in ps)
    forms = [minimizer_for(cls, p, mesh) for p in ps]
    norms = [f.lp_norm(p) for f, p in zip(forms, ps)]
    scale = max(max(norms), 1e-300)
    monotone = all(b >= a - MONOTONE_TOL * scale for a, b in zip(norms, norms[1:]))
    checks = []
    for i in range(len(ps) - 1):
        a, b = norms[i], norms[i + 1]
        if abs(b - a) <= PROFILE_EQUAL_TOL * scale:
            spread = pointwise_spread(forms[i + 1])
            harm = coclosed_residual(forms[i + 1])
            checks.append({"p": ps[i], "p_next": ps[i + 1], "spread": spread, "coclosed_residual": harm,
                           "passed": bool(spread < SPREAD_TOL and harm < COCLOSED_TOL)})
    return NormProfile(ps, norms, monotone, checks)


def cup_bound_check(alpha: CohomologyClass, beta: CohomologyClass, p: float, mesh: Mesh | None = None) -> dict:
    """|alpha|*_p |beta|*_q >= binomial(2,1)^(-1/2) |(alpha cup beta)[X]| on a surface."""
    from .mesh import wedge_integral

    mesh = mesh or alpha.mesh
    if mesh.dim != 2:
        raise UnsupportedDimensionError("the cup-product bound is checked on surfaces")
    if math.isinf(p) or p <= 1:
        raise WrongExponentError("cup_bound_check needs 1 < p < inf")
    q = p / (p - 1.0)
    na = cohomology_norm(alpha, p, mesh)
    nb = cohomology_norm(beta, q if q <= P_MAX else math.inf, mesh)
    cup = wedge_integral(alpha.representative, beta.representative, mesh)
    lhs = na * nb
    rhs = abs(cup) / math.sqrt(2.0)
    return {"p": p, "q": q, "lhs": lhs, "rhs": rhs, "cup": cup, "slack": lhs - rhs, "holds": bool(lhs >= rhs - 1e-9)}


# -- the homology unit ball as a NormBody -------------------------------------

def _sphere_directions(b: int, n_pairs: int) -> np.ndarray:
    """n_pairs unit vectors, one per antipodal pair, spread over the sphere."""
    if b == 1:
        return np.ones((1, 1))
    if b == 2:
        t = np.pi * np.arange(n_pairs) / n_pairs
        return np.column_stack([np.cos(t), np.sin(t)])
    pts = []
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for i in range(n_pairs):
        z = 1.0 - (i + 0.5) / n_pairs  # upper hemisphere
        r = math.sqrt(max(0.0, 1.0 - z * z))
        phi = golden * i
        x = np.zeros(b)
        x[:3] = [r * math.cos(phi), r * math.sin(phi), z]
        pts.append(x)
    d = np.array(pts)
    if b > 3:
        rng = np.random.default_rng(0)
        d = rng.normal(size=(n_pairs, b))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return np.vstack([np.eye(b), d])


@dataclass(eq=False)
class HomologyNormBody:
    """Unit ball of ||.||_p on H_1 together with the dual-norm samples that define it."""

    p: float
    body: object  # NormBody
    covectors: np.ndarray
    dual_values: np.ndarray
    exact: bool

    def lower_bound(self, h) -> np.ndarray:
        """max_j |<c_j, h>| / |c_j|*  <=  ||h||_p  (rows of h)."""
        h = np.atleast_2d(np.asarray(h, dtype=float))
        if self.exact:
            q = self.body.quadratic_form
            return np.sqrt(np.einsum("ij,jk,ik->i", h, q, h))
        return np.max(np.abs(h @ (self.covectors / self.dual_values[:, None]).T), axis=1)


def homology_norm_body(mesh: Mesh, p: float, n_pairs: int | None = None) -> HomologyNormBody:
    """||.||_p on H_1(X; R) as a NormBody.

    For p = 2 the norm is exactly ellipsoidal (inverse harmonic Gram).
    Otherwise the ball is the polytope cut out by |<c_j, h>| <= |c_j|*_p,
    an outer approximation that is tight along each sampled covector.
    Directions are taken uniform after whitening by the harmonic Gram, so
    for flat tori the polytope is regular in the natural Euclidean frame.
    """
    from .normed_space import NormBody

    hom = _homology(mesh)
    b = hom.b1
    gram, _ = harmonic_gram(mesh)
    if p == 2:
        body = NormBody.ellipsoid(np.linalg.inv(gram))
        return HomologyNormBody(p, body, np.eye(b), np.sqrt(np.diag(gram)), True)
    n_pairs = n_pairs or 8 * b
    w, v = np.linalg.eigh(gram)
    inv_root = v @ np.diag(w ** -0.5) @ v.T
    cov = _sphere_directions(b, n_pairs) @ inv_root
    vals = np.array([cohomology_norm(CohomologyClass.from_coefficients(mesh, c), p, mesh) for c in cov])
    body = NormBody.halfspaces(cov, vals)
    return HomologyNormBody(p, body, cov, vals, False)
