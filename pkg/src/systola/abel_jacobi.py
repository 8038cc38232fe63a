"""Piecewise-linear maps to flat tori: Abel-Jacobi and BI maps, Jacobians, degree, coarea.

A map is stored by its lift to the abelian cover: per-vertex values in
lattice coordinates of the target R^b / Z^b together with integer
translations per simplex corner, so that each top simplex maps affinely onto
the simplex spanned by ``vertex_values[v_j] + shifts[s, j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .cohomology import (CohomologyClass, harmonic_gram, homology_norm_body, lp_minimizer,
                         mesh_homology, pointwise_spread)
from .errors import (DegenerateMapError, InvalidBasisError, InvalidFormError, NumericalDegeneracyError,
                     WrongExponentError)
from .mesh import Form, Mesh, _spanning_forest
from .normed_space import Rank1Decomposition, john_ellipsoid, rank1_decomposition

INTEGRALITY_TOL = 1e-7
REGULAR_TOL = 1e-9
NORMALIZATION_TOL = 1e-6
CHAIN_TOL = 1e-10


@dataclass(eq=False)
class PLTorusMap:
    mesh: Mesh
    vertex_values: np.ndarray  # (V, b)
    shifts: np.ndarray  # (m, d+1, b) integers
    metric: np.ndarray  # (b, b) Gram of the target lattice Z^b
    induced: np.ndarray  # (b, b) action on H_1 in the chosen bases
    integrality_defect: float = 0.0
    name: str = "map"

    @property
    def target_dim(self) -> int:
        return self.metric.shape[0]

    @property
    def target_volume(self) -> float:
        return float(math.sqrt(np.linalg.det(self.metric)))

    def simplex_images(self) -> np.ndarray:
        return self.vertex_values[self.mesh.simplices] + self.shifts

    def differentials(self) -> np.ndarray:
        """Per-simplex differential (b x d) from orthonormal source frames to lattice coordinates."""
        y = self.simplex_images()
        edges = np.transpose(y[:, 1:, :] - y[:, :1, :], (0, 2, 1))  # (m, b, d)
        return np.einsum("sbd,sed->sbe", edges, self.mesh._frames_inv)

    def metric_differentials(self) -> np.ndarray:
        """Differentials into the target with its Euclidean structure (orthonormal target frame)."""
        w, v = np.linalg.eigh(self.metric)
        root = v @ np.diag(np.sqrt(w)) @ v.T
        return np.einsum("ab,sbd->sad", root, self.differentials())

    def singular_value_ratio(self) -> np.ndarray:
        s = np.linalg.svd(self.metric_differentials(), compute_uv=False)
        with np.errstate(divide="ignore"):
            return np.where(s[:, -1] > 0, s[:, 0] / s[:, -1], np.inf)


def _integrate(mesh: Mesh, cochains: np.ndarray):
    """Vertex primitive along a BFS tree from vertex 0 and per-corner lattice shifts."""
    in_tree, parent, parent_edge, parent_sign, order = _spanning_forest(mesh.n_vertices, mesh.edges)
    vals = np.zeros((mesh.n_vertices, cochains.shape[1]))
    for vtx in order:
        if parent[vtx] >= 0:
            # parent_sign = +1 when the edge runs parent -> vtx
            vals[vtx] = vals[parent[vtx]] + parent_sign[vtx] * cochains[parent_edge[vtx]]
    d = mesh.dim
    pairs = [(0, j) for j in range(1, d + 1)]
    col = {pr: n for n, pr in enumerate([(i, j) for i in range(d + 1) for j in range(i + 1, d + 1)])}
    base = vals[mesh.simplices[:, 0]]
    local = np.zeros((mesh.n_simplices, d + 1, cochains.shape[1]))
    local[:, 0] = base
    for i, j in pairs:
        local[:, j] = base + cochains[mesh.top_edges[:, col[(i, j)]]]
    raw = local - vals[mesh.simplices]
    shifts = np.rint(raw)
    defect = float(np.max(np.abs(raw - shifts), initial=0.0))
    return vals, shifts.astype(np.int64), defect


def map_from_cochains(mesh: Mesh, cochains, metric, name="map") -> PLTorusMap:
    """PL map whose coordinate differentials are the given closed cochains (E x b)."""
    cochains = np.asarray(cochains, dtype=float)
    for i in range(cochains.shape[1]):
        f = Form(cochains[:, i], mesh)
        if not f.is_closed():
            raise InvalidFormError(f"component {i} is not closed (residual {f.coboundary_residual():.2e})")
    hom = mesh_homology(mesh)
    induced = cochains.T @ hom.h1_basis.T  # (b, b1): periods
    vals, shifts, defect = _integrate(mesh, cochains)
    scale = max(1.0, float(np.max(np.abs(cochains), initial=0.0)))
    if defect > INTEGRALITY_TOL * scale:
        raise InvalidFormError(f"periods are not integral (defect {defect:.2e}); map is not equivariant")
    return PLTorusMap(mesh, vals, shifts, np.asarray(metric, dtype=float), np.rint(induced).astype(np.int64),
                      defect, name)


def abel_jacobi_map(mesh: Mesh, forms, metric=None) -> PLTorusMap:
    """Abel-Jacobi map from closed forms whose classes form a basis of H^1.

    The forms are recombined so that the induced map on H_1 is the identity.
    The target metric defaults to the L^2 (Albanese) structure, the inverse
    of the harmonic Gram matrix.
    """
    omegas = np.column_stack([f.values if isinstance(f, Form) else np.asarray(f) for f in forms])
    for i in range(omegas.shape[1]):
        f = Form(omegas[:, i], mesh)
        if not f.is_closed():
            raise InvalidFormError(f"form {i} is not closed (residual {f.coboundary_residual():.2e})")
    hom = mesh_homology(mesh)
    periods = omegas.T @ hom.h1_basis.T.astype(float)  # P_ij = <omega_i, c_j>
    if periods.shape[0] != periods.shape[1] or abs(np.linalg.det(periods)) < 1e-10:
        raise InvalidBasisError("forms do not induce an isomorphism on H^1")
    combined = omegas @ np.linalg.inv(periods).T
    if metric is None:
        metric = np.linalg.inv(harmonic_gram(mesh)[0])
    return map_from_cochains(mesh, combined, metric, name="abel-jacobi")


def harmonic_abel_jacobi(mesh: Mesh) -> PLTorusMap:
    gram, forms = harmonic_gram(mesh)
    return abel_jacobi_map(mesh, forms, metric=np.linalg.inv(gram))


def linear_torus_map(mesh: Mesh, matrix, metric=None) -> PLTorusMap:
    """The map x -> M x of a flat-torus mesh R^b/L onto R^b/Z^b (lattice coordinates)."""
    if mesh.edge_vectors is None or mesh.lattice is None:
        raise InvalidFormError("linear maps need a flat-torus mesh with reference coordinates")
    m = np.asarray(matrix, dtype=float)
    coords = np.linalg.solve(mesh.lattice.basis, mesh.edge_vectors.T).T  # (E, b)
    metric = mesh.lattice.gram if metric is None else metric
    return map_from_cochains(mesh, coords @ m.T, metric, name="linear")


# -- BI construction ----------------------------------------------------------

@dataclass(eq=False)
class BIConstruction:
    p: float
    decomposition: Rank1Decomposition
    minimizers: list
    map: PLTorusMap
    norm_body: object = field(repr=False, default=None)
    minimizer_norms: list = field(default_factory=list)


def bi_map(mesh: Mesh, decomp: Rank1Decomposition, minimizers, p: float | None = None) -> PLTorusMap:
    """f = L^-1 o Pr o F with F = (sqrt(lambda_i) f_i), into (R^b/Z^b, |.|_E).

    In lattice coordinates the lift is Q^-1 sum_i lambda_i L_i f_i where
    Q = sum_i lambda_i L_i L_i^T, so only the forms and the decomposition enter.
    """
    q = decomp.quadratic_form
    lam, funcs = decomp.weights, decomp.functionals
    if len(minimizers) != len(lam):
        raise InvalidFormError("one minimizer per decomposition term is required")
    omegas = np.column_stack([f.values for f in minimizers])  # (E, N)
    if p is not None:
        for i, f in enumerate(minimizers):
            n = f.lp_norm(p)
            if abs(n - 1.0) > NORMALIZATION_TOL:
                raise InvalidFormError(f"minimizer {i} has L^{p} norm {n:.9f}, expected 1")
    combined = omegas @ (lam[:, None] * funcs) @ np.linalg.inv(q).T
    return map_from_cochains(mesh, combined, q, name="bi")


def build_bi_map(mesh: Mesh, p: float, n_pairs: int | None = None) -> BIConstruction:
    """Full pipeline: ||.||_p ball, John ellipsoid, rank-1 decomposition, minimizers, map."""
    nb = homology_norm_body(mesh, p, n_pairs)
    ell = john_ellipsoid(nb.body)
    dec = rank1_decomposition(nb.body, ell)
    forms, norms = [], []
    for c in dec.functionals:
        cls = CohomologyClass.from_coefficients(mesh, c)
        f = minimizer(cls, p, mesh)
        n = f.lp_norm(p)
        norms.append(n)
        forms.append(f * (1.0 / n))
    fmap = bi_map(mesh, dec, forms, p)
    return BIConstruction(p, dec, forms, fmap, nb, norms)


def minimizer(cls: CohomologyClass, p: float, mesh: Mesh) -> Form:
    from .cohomology import harmonic_representative

    if p == 2:
        return harmonic_representative(cls, mesh)
    return lp_minimizer(cls, p, mesh)


# -- Jacobians -----------------------------------------------------------------

@dataclass
class JacobianField:
    values: np.ndarray  # per-simplex jac >= 0
    signed: np.ndarray  # per-simplex signed determinant (n = b)
    volumes: np.ndarray
    mode: str

    @property
    def total(self) -> float:
        return float(np.sum(self.volumes * self.values))

    def to_json(self) -> dict:
        return {"mode": self.mode, "total": self.total, "min": float(self.values.min()),
                "max": float(self.values.max()), "count": int(len(self.values))}


def jacobian_field(fmap: PLTorusMap, mode: str = "full") -> JacobianField:
    dm = fmap.metric_differentials()  # (m, b, d)
    if mode == "perp":
        vals = np.sqrt(np.maximum(np.linalg.det(np.einsum("sbd,sce->sbc", dm, dm)), 0.0))
    elif mode == "full":
        if dm.shape[1] != dm.shape[2]:
            raise InvalidFormError("full Jacobian needs equal source and target dimension")
        vals = np.abs(np.linalg.det(dm))
    else:
        raise ValueError(f"unknown jacobian mode {mode!r}")
    signed = np.linalg.det(dm) * fmap.mesh.orientation if dm.shape[1] == dm.shape[2] else vals
    return JacobianField(vals, signed, fmap.mesh.simplex_volumes, mode)


def jensen_chain_check(mesh: Mesh, decomp: Rank1Decomposition, minimizers, p: float) -> dict:
    """Every step of jac f <= jac F <= AM-GM <= Jensen <= Hoelder <= 1, per simplex and integrated."""
    b = decomp.dim
    if p < max(b, 2):
        raise WrongExponentError(f"the chain needs p >= max(b, 2) = {max(b, 2)}, got {p}")
    d = mesh.dim
    v = mesh.simplex_volumes
    lam, funcs, q = decomp.weights, decomp.functionals, decomp.quadratic_form
    u = np.array([(mesh.whitney @ f.values).reshape(-1, d) for f in minimizers])  # (N, m, d)
    a = np.sqrt(lam)[:, None, None] * u  # rows of dF per simplex: (N, m, d)
    ata = np.einsum("ism,isn->smn", a, a)
    jac_big = np.sqrt(np.maximum(np.linalg.det(ata), 0.0))
    w, vec = np.linalg.eigh(q)
    root_inv = vec @ np.diag(w ** -0.5) @ vec.T
    # d f~ = Q^-1 sum lambda_i L_i u_i^T; in the E-orthonormal frame: Q^-1/2 sum lambda_i L_i u_i^T
    df = np.einsum("ab,ib,ism->sam", root_inv, lam[:, None] * funcs, u)
    jac_small = np.sqrt(np.maximum(np.linalg.det(np.einsum("sam,san->smn", df, df)), 0.0))
    norms = np.linalg.norm(u, axis=2)  # (N, m)
    trace = np.einsum("i,is->s", lam, norms ** 2)
    amgm = (trace / b) ** (b / 2)
    jensen = np.einsum("i,is->s", lam / b, norms ** p) ** (b / p)
    integrand = np.einsum("i,is->s", lam / b, norms ** p)
    steps = {
        "projection": jac_big - jac_small,
        "am_gm": amgm - jac_big,
        "jensen": jensen - amgm,
    }
    int_jac = float(v @ jac_small)
    int_jensen = float(v @ jensen)
    int_power = float(v @ integrand)
    holder = int_power ** (b / p)
    lp_norms = [float((v @ n ** p) ** (1.0 / p)) for n in norms]
    integrated = {
        "jac_f": int_jac,
        "jac_F": float(v @ jac_big),
        "am_gm": float(v @ amgm),
        "jensen": int_jensen,
        "holder": holder,
        "weighted_power": int_power,
    }
    step_min = {k: float(np.min(s)) for k, s in steps.items()}
    int_slack = {
        "projection": integrated["jac_F"] - int_jac,
        "am_gm": integrated["am_gm"] - integrated["jac_F"],
        "jensen": int_jensen - integrated["am_gm"],
        "holder": holder - int_jensen,
        "normalization": 1.0 - int_power,
    }
    ok_pointwise = all(x >= -CHAIN_TOL for x in step_min.values())
    ok_integrated = all(x >= -CHAIN_TOL for x in int_slack.values())
    return {
        "p": p,
        "b": b,
        "pointwise_min_slack": step_min,
        "integrated": integrated,
        "integrated_slack": int_slack,
        "minimizer_lp_norms": lp_norms,
        "volume": float(v.sum()),
        "holds_pointwise": bool(ok_pointwise),
        "holds_integrated": bool(ok_integrated),
        "final_bound_holds": bool(int_jac <= 1.0 + CHAIN_TOL),
        "per_simplex": {"jac_f": jac_small, "jac_F": jac_big, "am_gm": amgm, "jensen": jensen},
    }


def lichnerowicz_check(mesh: Mesh) -> dict:
    """b = p = 2: int |w1 ^ w2| <= (1/2) int (|w1|^2 + |w2|^2) for an L^2-orthonormal harmonic basis."""
    if mesh.dim != 2:
        raise WrongExponentError("the harmonic-map shortcut is for surfaces with b = 2")
    gram, forms = harmonic_gram(mesh)
    if len(forms) != 2:
        raise InvalidBasisError("the harmonic-map shortcut needs b_1 = 2")
    w, vec = np.linalg.eigh(gram)
    t = vec @ np.diag(w ** -0.5) @ vec.T
    om = np.column_stack([f.values for f in forms]) @ t  # L^2-orthonormal
    e01, e02 = mesh.top_edges[:, 0], mesh.top_edges[:, 1]
    wedge = 0.5 * np.abs(om[e01, 0] * om[e02, 1] - om[e02, 0] * om[e01, 1])  # per-triangle integral, from edge values
    n1 = mesh.pointwise_norm(om[:, 0])
    n2 = mesh.pointwise_norm(om[:, 1])
    lhs = float(np.sum(wedge))
    rhs = float(0.5 * np.sum(mesh.simplex_volumes * (n1 ** 2 + n2 ** 2)))
    return {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "holds": bool(lhs <= rhs + CHAIN_TOL)}


# -- degree and coarea ---------------------------------------------------------

def _preimage_counts(fmap: PLTorusMap, points: np.ndarray):
    """Signed and unsigned preimage counts of target points (lattice coords in [0,1)^b)."""
    y = fmap.simplex_images()
    m, k, b = y.shape
    if k - 1 != b:
        raise DegenerateMapError("preimage counting needs source and target of equal dimension")
    edges = np.transpose(y[:, 1:, :] - y[:, :1, :], (0, 2, 1))  # (m, b, b)
    det = np.linalg.det(edges)
    scale = np.max(np.abs(edges), axis=(1, 2)) ** b
    good = np.abs(det) > 1e-14 * np.maximum(scale, 1e-300)
    inv = np.zeros_like(edges)
    inv[good] = np.linalg.inv(edges[good])
    sign = np.sign(det) * fmap.mesh.orientation
    lo = np.floor(y.min(axis=1)).astype(np.int64)
    hi = np.floor(y.max(axis=1)).astype(np.int64)
    n = len(points)
    signed = np.zeros(n, dtype=np.int64)
    unsigned = np.zeros(n, dtype=np.int64)
    irregular = np.zeros(n, dtype=bool)
    for s in np.flatnonzero(good):
        ranges = [range(lo[s, i], hi[s, i] + 1) for i in range(b)]
        for g in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(b, -1).T:
            z = points + g - y[s, 0]
            lam = z @ inv[s].T
            bary = np.column_stack([1.0 - lam.sum(axis=1), lam])
            mn = bary.min(axis=1)
            inside = mn > REGULAR_TOL
            near = np.abs(mn) <= REGULAR_TOL
            signed[inside] += int(sign[s])
            unsigned[inside] += 1
            irregular |= near
    return signed, unsigned, ~irregular, int(np.count_nonzero(~good))


def _regular_samples(fmap: PLTorusMap, count: int, seed: int, max_rounds: int = 5):
    sampler = qmc.Halton(d=fmap.target_dim, scramble=True, seed=seed)
    got_s, got_u, rejected = [], [], 0
    for _ in range(max_rounds):
        pts = sampler.random(count)
        s, u, regular, degenerate = _preimage_counts(fmap, pts)
        got_s.append(s[regular])
        got_u.append(u[regular])
        rejected += int(np.count_nonzero(~regular))
        if sum(len(x) for x in got_s) >= count:
            break
    s = np.concatenate(got_s)[:count]
    u = np.concatenate(got_u)[:count]
    if len(s) < count:
        raise DegenerateMapError(f"only {len(s)} regular values found after {max_rounds} rounds")
    return s, u, rejected, degenerate


def degree(fmap: PLTorusMap, n_values: int = 16, seed: int = 0, signed: bool = False) -> int:
    """Topological degree from preimage counts at several regular values.

    The absolute value is returned unless ``signed``.
    """
    s, _, _, _ = _regular_samples(fmap, n_values, seed)
    if np.any(s != s[0]):
        raise NumericalDegeneracyError(f"preimage counts disagree across regular values: {sorted(set(s.tolist()))}")
    deg = int(s[0])
    return deg if signed else abs(deg)


def coarea_check(fmap: PLTorusMap, samples: int = 10_000, seed: int = 0) -> dict:
    """int_X jac f  versus  int_T #f^-1(y) dy by quasi-Monte Carlo over the target torus."""
    jac = jacobian_field(fmap)
    lhs = jac.total
    _, u, rejected, degenerate = _regular_samples(fmap, samples, seed)
    rhs = fmap.target_volume * float(np.mean(u))
    return {"lhs": lhs, "rhs": rhs, "relative_error": abs(rhs - lhs) / max(abs(lhs), 1e-300),
            "samples": int(samples), "rejected": rejected, "degenerate_simplices": degenerate,
            "mean_count": float(np.mean(u))}


def equality_signature(construction: BIConstruction) -> dict:
    """Constant minimizer norms and conformal differential (discrete harmonic Riemannian submersion)."""
    spreads = [pointwise_spread(f) for f in construction.minimizers]
    ratio = construction.map.singular_value_ratio()
    jac = jacobian_field(construction.map)
    return {"integral_jac": jac.total, "max_norm_spread": float(max(spreads)),
            "max_singular_value_ratio": float(np.max(ratio)),
            "mean_singular_value_ratio": float(np.mean(ratio))}
