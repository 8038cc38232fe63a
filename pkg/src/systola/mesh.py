"""Closed simplicial manifolds with piecewise-flat metrics.

Meshes are Delta-complexes: a top simplex is a list of vertex ids together
with the lattice offset of each vertex in a covering space.  Two faces are
the same cell when their (vertex, offset) lists agree up to a common
translation.  This lets a torus of any refinement (even one grid cell) be
represented without duplicated vertices.  Plain simplicial complexes simply
use zero offsets.

Every top simplex is stored with its vertices in canonical (sorted) order;
``orientation`` records whether that order is positively oriented.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import (InvalidFormError, InvalidMeshError, InvalidMetricError,
                     UnsupportedDimensionError)
from .lattice import Lattice

CLOSED_TOL = 1e-10


def _perm_parity(seq) -> int:
    seq = list(seq)
    parity = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                parity = -parity
    return parity


def _canonical(points):
    """Sorted (vertex, offset) tuple translated so the first offset is zero, and the sort parity."""
    order = sorted(range(len(points)), key=lambda i: points[i])
    pts = [points[i] for i in order]
    base = pts[0][1]
    key = tuple((v, tuple(o - b for o, b in zip(off, base))) for v, off in pts)
    return key, _perm_parity(order)


def _face_key(top_key, idx):
    pts = [top_key[i] for i in idx]
    base = pts[0][1]
    return tuple((v, tuple(o - b for o, b in zip(off, base))) for v, off in pts)


def edge_label(key) -> str:
    (va, _), (vb, ob) = key
    if any(ob):
        return f"{va}-{vb}@" + ",".join(str(o) for o in ob)
    return f"{va}-{vb}"


def parse_edge_label(label: str, n_offsets: int):
    if "@" in label:
        pair, off = label.split("@")
        ob = tuple(int(x) for x in off.split(","))
    else:
        pair, ob = label, (0,) * n_offsets
    va, vb = (int(x) for x in pair.split("-"))
    if va > vb or (va == vb and not any(ob)):
        # unordered simplicial label: sort
        va, vb = min(va, vb), max(va, vb)
    return ((va, (0,) * len(ob)), (vb, ob))


@dataclass(eq=False)
class Mesh:
    dim: int
    n_vertices: int
    simplices: np.ndarray  # (m, dim+1) vertex ids, canonical order
    orientation: np.ndarray  # (m,) +-1
    edges: np.ndarray  # (E, 2) vertex ids
    edge_lengths: np.ndarray  # (E,)
    top_edges: np.ndarray  # (m, dim(dim+1)/2) edge ids for local pairs in combinations order
    faces: np.ndarray  # (F, 3) face -> edges (01, 02, 12) ; dim 2: same as top_edges
    top_faces: np.ndarray | None  # (m, 4) for dim 3
    top_keys: list = field(repr=False)
    edge_keys: list = field(repr=False)
    edge_vectors: np.ndarray | None = field(default=None, repr=False)  # flat reference displacements
    vertex_coords: np.ndarray | None = field(default=None, repr=False)  # fractional lattice coords
    lattice: Lattice | None = None
    name: str = "mesh"

    def __post_init__(self):
        self._setup_metric()

    # construction -------------------------------------------------------
    @classmethod
    def from_cells(cls, dim, cells, edge_length, n_vertices=None, name="mesh", **extra) -> "Mesh":
        """Build from oriented cells given as lists of (vertex, offset) pairs.

        ``edge_length`` maps a canonical edge key to its length (callable or dict).
        """
        if dim not in (2, 3):
            raise UnsupportedDimensionError(f"meshes of dimension {dim} are not supported")
        tops, orient, seen = [], [], set()
        for cell in cells:
            if len(cell) != dim + 1:
                raise InvalidMeshError("cell has the wrong number of vertices")
            pts = [(int(v), tuple(int(o) for o in off)) for v, off in cell]
            if len(set(pts)) != len(pts):
                raise InvalidMeshError("degenerate cell with a repeated vertex")
            key, parity = _canonical(pts)
            if key in seen:
                raise InvalidMeshError("duplicate top simplex")
            seen.add(key)
            tops.append(key)
            orient.append(parity)
        if not tops:
            raise InvalidMeshError("mesh has no simplices")
        nv = n_vertices if n_vertices is not None else 1 + max(v for t in tops for v, _ in t)

        pairs = list(itertools.combinations(range(dim + 1), 2))
        edge_index, edge_keys = {}, []
        top_edges = np.empty((len(tops), len(pairs)), dtype=np.int64)
        for s, key in enumerate(tops):
            for p, (i, j) in enumerate(pairs):
                ek = _face_key(key, (i, j))
                if ek not in edge_index:
                    edge_index[ek] = len(edge_keys)
                    edge_keys.append(ek)
                top_edges[s, p] = edge_index[ek]
        pidx = {pr: n for n, pr in enumerate(pairs)}

        if dim == 2:
            faces = top_edges[:, [pidx[(0, 1)], pidx[(0, 2)], pidx[(1, 2)]]].copy()
            top_faces = None
        else:
            face_index, face_list = {}, []
            top_faces = np.empty((len(tops), 4), dtype=np.int64)
            for s, key in enumerate(tops):
                for n, omit in enumerate(range(4)):
                    idx = tuple(i for i in range(4) if i != omit)
                    fk = _face_key(key, idx)
                    if fk not in face_index:
                        face_index[fk] = len(face_list)
                        a, b, c = idx
                        face_list.append([top_edges[s, pidx[(a, b)]], top_edges[s, pidx[(a, c)]],
                                          top_edges[s, pidx[(b, c)]]])
                    top_faces[s, n] = face_index[fk]
            faces = np.array(face_list, dtype=np.int64)

        if callable(edge_length):
            lengths = np.array([edge_length(k) for k in edge_keys], dtype=float)
        else:
            try:
                lengths = np.array([edge_length[k] for k in edge_keys], dtype=float)
            except KeyError as exc:
                raise InvalidMeshError(f"missing edge length for {edge_label(exc.args[0])}") from None
        edges = np.array([[k[0][0], k[1][0]] for k in edge_keys], dtype=np.int64)
        simplices = np.array([[v for v, _ in t] for t in tops], dtype=np.int64)
        mesh = cls(dim=dim, n_vertices=nv, simplices=simplices, orientation=np.array(orient, dtype=np.int64),
                   edges=edges, edge_lengths=lengths, top_edges=top_edges, faces=faces,
                   top_faces=top_faces, top_keys=tops, edge_keys=edge_keys, name=name, **extra)
        mesh.check_closed()
        return mesh

    def with_lengths(self, lengths, name=None) -> "Mesh":
        return replace(self, edge_lengths=np.asarray(lengths, dtype=float), name=name or self.name)

    # metric -------------------------------------------------------------
    def _setup_metric(self):
        if np.any(self.edge_lengths <= 0) or not np.all(np.isfinite(self.edge_lengths)):
            raise InvalidMetricError("edge lengths must be positive and finite")
        d = self.dim
        pairs = list(itertools.combinations(range(d + 1), 2))
        pidx = {pr: n for n, pr in enumerate(pairs)}
        l2 = self.edge_lengths[self.top_edges] ** 2
        m = len(self.simplices)
        gram = np.empty((m, d, d))
        for j in range(1, d + 1):
            for k in range(1, d + 1):
                if j == k:
                    gram[:, j - 1, k - 1] = l2[:, pidx[(0, j)]]
                else:
                    a, c = min(j, k), max(j, k)
                    gram[:, j - 1, k - 1] = 0.5 * (l2[:, pidx[(0, j)]] + l2[:, pidx[(0, k)]] - l2[:, pidx[(a, c)]])
        det = np.linalg.det(gram)
        scale = np.max(l2, axis=1) ** d
        if np.any(det <= 1e-14 * scale):
            bad = int(np.argmin(det / scale))
            raise InvalidMetricError(f"simplex {bad} violates the triangle/tetrahedron inequalities")
        self.simplex_gram = gram
        self.simplex_volumes = np.sqrt(det) / math.factorial(d)
        self.frames = np.linalg.cholesky(gram)  # gram = C C^T; orthonormal coords u = C^-1 a
        self._frames_inv = np.linalg.inv(self.frames)

        # Whitney 1-form at the barycentre: covector components on the local edge basis
        bary = np.zeros((d, len(pairs)))
        coef = {0: -np.ones(d)}
        for j in range(1, d + 1):
            e = np.zeros(d)
            e[j - 1] = 1.0
            coef[j] = e
        for p, (i, j) in enumerate(pairs):
            bary[:, p] = (coef[j] - coef[i]) / (d + 1)
        local = np.einsum("sij,jp->sip", self._frames_inv, bary)  # (m, d, P)
        rows = np.repeat(np.arange(m * d), len(pairs))
        cols = np.repeat(self.top_edges[:, None, :], d, axis=1).reshape(-1)
        self.whitney = sp.csr_matrix((local.reshape(-1), (rows, cols)), shape=(m * d, len(self.edges)))
        self._d0 = None
        self._d1 = None
        self._d2 = None

    # topology -----------------------------------------------------------
    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_simplices(self) -> int:
        return len(self.simplices)

    @property
    def d0(self) -> sp.csr_matrix:
        """Coboundary on 0-cochains, shape (E, V)."""
        if self._d0 is None:
            e = len(self.edges)
            rows = np.repeat(np.arange(e), 2)
            cols = self.edges.reshape(-1)
            vals = np.tile([-1, 1], e)
            self._d0 = sp.csr_matrix((vals, (rows, cols)), shape=(e, self.n_vertices), dtype=np.int64)
            self._d0.sum_duplicates()
            self._d0.eliminate_zeros()
        return self._d0

    @property
    def d1(self) -> sp.csr_matrix:
        """Coboundary on 1-cochains, shape (F, E); boundary of [012] is [12] - [02] + [01]."""
        if self._d1 is None:
            f = len(self.faces)
            rows = np.repeat(np.arange(f), 3)
            cols = self.faces.reshape(-1)
            vals = np.tile([1, -1, 1], f)
            self._d1 = sp.csr_matrix((vals, (rows, cols)), shape=(f, len(self.edges)), dtype=np.int64)
            self._d1.sum_duplicates()
        return self._d1

    @property
    def d2(self) -> sp.csr_matrix | None:
        if self.dim != 3:
            return None
        if self._d2 is None:
            t = len(self.simplices)
            rows = np.repeat(np.arange(t), 4)
            cols = self.top_faces.reshape(-1)
            vals = np.tile([1, -1, 1, -1], t)
            self._d2 = sp.csr_matrix((vals, (rows, cols)), shape=(t, len(self.faces)), dtype=np.int64)
            self._d2.sum_duplicates()
        return self._d2

    def check_closed(self):
        """Each codim-1 face bounds exactly two tops with opposite induced orientation."""
        if self.dim == 2:
            inc = self.d1.T.tocsr() @ sp.diags(self.orientation)
            n_tops = np.diff(self.d1.T.tocsr().indptr)
        else:
            inc = self.d2.T.tocsr() @ sp.diags(self.orientation)
            n_tops = np.diff(self.d2.T.tocsr().indptr)
        counts = np.asarray(abs(self.d1.T if self.dim == 2 else self.d2.T).sum(axis=1)).ravel()
        if np.any(counts != 2):
            raise InvalidMeshError("not a closed pseudo-manifold: a codim-1 face is not shared by two tops")
        net = np.asarray(inc.sum(axis=1)).ravel()
        if np.any(net != 0) or np.any(n_tops == 0):
            raise InvalidMeshError("top simplices are not consistently oriented")

    @property
    def euler_characteristic(self) -> int:
        counts = [self.n_vertices, self.n_edges, len(self.faces)]
        if self.dim == 3:
            counts.append(self.n_simplices)
        return sum((-1) ** i * c for i, c in enumerate(counts))

    # geometry -----------------------------------------------------------
    def scaled(self, c: float) -> "Mesh":
        return self.with_lengths(self.edge_lengths * c)

    def edge_components(self, cochain) -> np.ndarray:
        """Per-simplex orthonormal-frame covectors, shape (m, dim)."""
        return (self.whitney @ np.asarray(cochain, dtype=float)).reshape(-1, self.dim)

    def pointwise_norm(self, cochain) -> np.ndarray:
        return np.linalg.norm(self.edge_components(cochain), axis=1)

    def to_json(self) -> dict:
        has_offsets = any(any(o) for t in self.top_keys for _, o in t)
        out = {"dim": self.dim, "n_vertices": self.n_vertices, "name": self.name}
        out["simplices"] = [[int(v) for v, _ in t] if self.orientation[s] > 0 else
                            [int(v) for v, _ in (t[1], t[0]) + tuple(t[2:])]
                            for s, t in enumerate(self.top_keys)]
        if has_offsets:
            out["offsets"] = [[list(o) for _, o in (t if self.orientation[s] > 0 else (t[1], t[0]) + tuple(t[2:]))]
                              for s, t in enumerate(self.top_keys)]
        out["edge_lengths"] = {edge_label(k): float(l) for k, l in zip(self.edge_keys, self.edge_lengths)}
        if self.edge_vectors is not None:
            out["edge_vectors"] = {edge_label(k): v.tolist() for k, v in zip(self.edge_keys, self.edge_vectors)}
        if self.vertex_coords is not None:
            out["vertex_coords"] = self.vertex_coords.tolist()
        if self.lattice is not None:
            out["lattice_gram"] = self.lattice.gram.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Mesh":
        try:
            dim = int(obj["dim"])
            simplices = obj["simplices"]
            lengths = obj["edge_lengths"]
        except KeyError as exc:
            raise InvalidMeshError(f"mesh file lacks field {exc.args[0]!r}") from None
        offsets = obj.get("offsets")
        n_off = len(offsets[0][0]) if offsets else 0
        cells = []
        for s, verts in enumerate(simplices):
            offs = offsets[s] if offsets else [[0] * n_off] * len(verts)
            cells.append([(v, tuple(o)) for v, o in zip(verts, offs)])
        table = {parse_edge_label(k, n_off): float(v) for k, v in lengths.items()}
        extra = {}
        if "edge_vectors" in obj:
            vec_table = {parse_edge_label(k, n_off): v for k, v in obj["edge_vectors"].items()}
        if "vertex_coords" in obj:
            extra["vertex_coords"] = np.array(obj["vertex_coords"], dtype=float)
        if "lattice_gram" in obj:
            extra["lattice"] = Lattice.from_gram(obj["lattice_gram"])
        mesh = cls.from_cells(dim, cells, table, n_vertices=obj.get("n_vertices"),
                              name=obj.get("name", "mesh"), **extra)
        if "edge_vectors" in obj:
            mesh.edge_vectors = np.array([vec_table[k] for k in mesh.edge_keys], dtype=float)
        return mesh

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Mesh":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(eq=False)
class Form:
    """A real 1-cochain on a mesh."""

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_edges,):
            raise InvalidFormError("cochain length does not match the number of edges")

    def __add__(self, other):
        return Form(self.values + _vals(other), self.mesh)

    def __sub__(self, other):
        return Form(self.values - _vals(other), self.mesh)

    def __mul__(self, c):
        return Form(self.values * c, self.mesh)

    __rmul__ = __mul__

    def coboundary_residual(self) -> float:
        return float(np.max(np.abs(self.mesh.d1 @ self.values), initial=0.0))

    def is_closed(self, tol=CLOSED_TOL) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.values), initial=0.0)))
        return self.coboundary_residual() <= tol * scale

    def pointwise_norm(self) -> np.ndarray:
        return self.mesh.pointwise_norm(self.values)

    def lp_norm(self, p) -> float:
        n = self.pointwise_norm()
        if math.isinf(p):
            return float(np.max(n))
        vol = self.mesh.simplex_volumes
        return float(np.sum(vol * n ** p) ** (1.0 / p))

    def to_json(self) -> dict:
        return {edge_label(k): float(v) for k, v in zip(self.mesh.edge_keys, self.values)}


def _vals(x):
    return x.values if isinstance(x, Form) else np.asarray(x, dtype=float)


# -- fixtures -----------------------------------------------------------------

def _diagonal_signs(basis: np.ndarray) -> tuple:
    b = basis.shape[1]
    best = None
    for signs in itertools.product((1, -1), repeat=b - 1):
        s = np.array(signs + (1,))
        length = np.linalg.norm(basis @ s)
        if best is None or length < best[0] - 1e-12:
            best = (length, s)
    return tuple(int(x) for x in best[1])


def flat_torus_mesh(lattice: Lattice, k: int) -> Mesh:
    """Triangulation of R^b / L with k^b cells (2 triangles or 6 tetrahedra each).

    Cells are split along their shortest main diagonal, so for the
    hexagonal lattice all triangles are equilateral.
    """
    b = lattice.dim
    if b not in (2, 3):
        raise UnsupportedDimensionError(f"flat tori are meshed in dimension 2 or 3, got {b}")
    if k < 1:
        raise InvalidMeshError("refinement must be at least 1")
    basis = lattice.basis
    sigma = _diagonal_signs(basis)
    grid = list(itertools.product(range(k), repeat=b))
    vid = {g: n for n, g in enumerate(grid)}

    def point(p):
        q = tuple(c % k for c in p)
        off = tuple(c // k for c in p)
        return vid[q], off

    cells = []
    for c in grid:
        p0 = tuple(ci + (1 if s < 0 else 0) for ci, s in zip(c, sigma))
        for perm in itertools.permutations(range(b)):
            pts = [p0]
            cur = list(p0)
            for axis in perm:
                cur[axis] += sigma[axis]
                pts.append(tuple(cur))
            x = np.array([basis @ (np.array(p) / k) for p in pts])
            if np.linalg.det((x[1:] - x[0]).T) < 0:
                pts[-1], pts[-2] = pts[-2], pts[-1]
            cells.append([point(p) for p in pts])

    grid_arr = np.array(grid, dtype=float)

    def displacement(key):
        (va, oa), (vb, ob) = key
        steps = grid_arr[vb] + k * np.array(ob) - grid_arr[va] - k * np.array(oa)
        return basis @ (steps / k)

    mesh = Mesh.from_cells(b, cells, lambda key: float(np.linalg.norm(displacement(key))),
                           n_vertices=len(grid), name=f"flat-torus-k{k}", lattice=lattice,
                           vertex_coords=grid_arr / k)
    mesh.edge_vectors = np.array([displacement(key) for key in mesh.edge_keys])
    return mesh


def volume(mesh: Mesh) -> float:
    return float(np.sum(mesh.simplex_volumes))


def normalize_volume(mesh: Mesh) -> Mesh:
    c = volume(mesh) ** (-1.0 / mesh.dim)
    return mesh.with_lengths(mesh.edge_lengths * c)


def conformal_scale(mesh: Mesh, factor) -> Mesh:
    """Discrete conformal change: each edge scaled by sqrt(u_i u_j)."""
    u = np.asarray(factor, dtype=float)
    if u.ndim == 0:
        u = np.full(mesh.n_vertices, float(u))
    if u.shape != (mesh.n_vertices,):
        raise InvalidMeshError("one conformal factor per vertex is required")
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise InvalidMeshError("conformal factors must be positive")
    s = np.sqrt(u[mesh.edges[:, 0]] * u[mesh.edges[:, 1]])
    return mesh.with_lengths(mesh.edge_lengths * s, name=mesh.name + "-conformal")


def edge_midpoints(mesh: Mesh) -> np.ndarray:
    """Fractional lattice coordinates of edge midpoints (flat-torus meshes)."""
    if mesh.vertex_coords is None or mesh.edge_vectors is None:
        raise InvalidMeshError("mesh carries no reference coordinates")
    start = mesh.vertex_coords[mesh.edges[:, 0]]
    step = np.linalg.solve(mesh.lattice.basis, mesh.edge_vectors.T).T
    return start + 0.5 * step


def metric_perturbation(mesh: Mesh, tensor) -> Mesh:
    """Replace lengths by sqrt(v^T T(mid) v) for the reference displacement v.

    ``tensor`` maps an (E, b) array of fractional midpoints to (E, b, b)
    symmetric positive-definite metric tensors; a single (b, b) result is
    applied everywhere.
    """
    mids = edge_midpoints(mesh)
    t = np.asarray(tensor(mids), dtype=float)
    v = mesh.edge_vectors
    if t.ndim == 2:
        t = np.broadcast_to(t, (len(v),) + t.shape)
    lengths = np.sqrt(np.einsum("ei,eij,ej->e", v, t, v))
    return mesh.with_lengths(lengths, name=mesh.name + "-aniso")


def bump_factor(mesh: Mesh, amplitude: float = 0.2, center=None, width: float = 0.25) -> np.ndarray:
    """Smooth periodic bump 1 + amplitude * exp(-|x - c|^2 / w^2) on the reference torus."""
    x = mesh.vertex_coords
    c = np.full(mesh.dim, 0.5) if center is None else np.asarray(center, dtype=float)
    diff = x - c
    diff -= np.round(diff)
    r = np.linalg.norm(diff @ mesh.lattice.basis.T, axis=1)
    return 1.0 + amplitude * np.exp(-(r / width) ** 2)


def reference_form(mesh: Mesh, covector) -> Form:
    """The constant form <covector, dx> of the flat reference metric."""
    if mesh.edge_vectors is None:
        raise InvalidMeshError("mesh carries no reference coordinates")
    return Form(mesh.edge_vectors @ np.asarray(covector, dtype=float), mesh)


def wedge_integral(a: Form, b: Form, mesh: Mesh | None = None) -> float:
    """Integral of the Whitney wedge a ^ b over a closed oriented surface."""
    mesh = mesh or a.mesh
    if mesh.dim != 2:
        raise UnsupportedDimensionError("wedge_integral is defined for surfaces only")
    for f in (a, b):
        if not f.is_closed():
            raise InvalidFormError(f"form is not closed (residual {f.coboundary_residual():.2e})")
    # local pairs in combinations order: (0,1), (0,2), (1,2)
    a01, a02 = a.values[mesh.top_edges[:, 0]], a.values[mesh.top_edges[:, 1]]
    b01, b02 = b.values[mesh.top_edges[:, 0]], b.values[mesh.top_edges[:, 1]]
    return float(0.5 * np.sum(mesh.orientation * (a01 * b02 - a02 * b01)))


# -- integral homology --------------------------------------------------------

@dataclass(eq=False)
class HomologyData:
    h1_basis: np.ndarray  # (b1, E) integer edge cycles
    h1_cobasis: np.ndarray  # (b1, E) integer cocycles
    b1: int
    torsion: list

    def pairing(self) -> np.ndarray:
        return self.h1_cobasis @ self.h1_basis.T

    def class_of(self, cochain) -> np.ndarray:
        """Coordinates of a closed cochain in the cobasis (periods on the basis cycles)."""
        return self.h1_basis @ np.asarray(cochain, dtype=float)

    def representative(self, coefficients) -> np.ndarray:
        return np.asarray(coefficients, dtype=float) @ self.h1_cobasis


def _spanning_forest(n_vertices, edges):
    """BFS tree; returns tree-edge mask, parent edge and sign per vertex, and BFS order."""
    adj = [[] for _ in range(n_vertices)]
    for e, (a, b) in enumerate(edges):
        if a != b:
            adj[a].append((b, e, 1))
            adj[b].append((a, e, -1))
    parent_edge = np.full(n_vertices, -1)
    parent_sign = np.zeros(n_vertices, dtype=np.int64)
    parent = np.full(n_vertices, -1)
    seen = np.zeros(n_vertices, dtype=bool)
    order = []
    in_tree = np.zeros(len(edges), dtype=bool)
    for root in range(n_vertices):
        if seen[root]:
            continue
        seen[root] = True
        queue = [root]
        while queue:
            nxt = []
            for v in queue:
                order.append(v)
                for w, e, s in adj[v]:
                    if not seen[w]:
                        seen[w] = True
                        parent[w], parent_edge[w], parent_sign[w] = v, e, s
                        in_tree[e] = True
                        nxt.append(w)
            queue = nxt
    return in_tree, parent, parent_edge, parent_sign, order


def smith_normal_form(a):
    """Integer SNF: returns (d, u, v) with u @ a @ v = diag(d) (exact Python ints)."""
    a = [[int(x) for x in row] for row in a]
    m = len(a)
    n = len(a[0]) if m else 0
    u = [[int(i == j) for j in range(m)] for i in range(m)]
    v = [[int(i == j) for j in range(n)] for i in range(n)]

    def swap_rows(mat, i, j):
        mat[i], mat[j] = mat[j], mat[i]

    def swap_cols(mat, i, j):
        for row in mat:
            row[i], row[j] = row[j], row[i]

    def add_row(mat, src, dst, c):
        mat[dst] = [x + c * y for x, y in zip(mat[dst], mat[src])]

    def add_col(mat, src, dst, c):
        for row in mat:
            row[dst] += c * row[src]

    t = 0
    while t < min(m, n):
        piv = [(abs(a[i][j]), i, j) for i in range(t, m) for j in range(t, n) if a[i][j]]
        if not piv:
            break
        _, i, j = min(piv)
        swap_rows(a, t, i), swap_rows(u, t, i)
        swap_cols(a, t, j), swap_cols(v, t, j)
        done = False
        while not done:
            done = True
            for i in range(t + 1, m):
                if a[i][t]:
                    q = a[i][t] // a[t][t]
                    add_row(a, t, i, -q), add_row(u, t, i, -q)
                    if a[i][t]:
                        swap_rows(a, t, i), swap_rows(u, t, i)
                        done = False
            for j in range(t + 1, n):
                if a[t][j]:
                    q = a[t][j] // a[t][t]
                    add_col(a, t, j, -q), add_col(v, t, j, -q)
                    if a[t][j]:
                        swap_cols(a, t, j), swap_cols(v, t, j)
                        done = False
            if done:
                bad = [(i, j) for i in range(t + 1, m) for j in range(t + 1, n) if a[i][j] % a[t][t]]
                if bad:
                    i, _ = bad[0]
                    add_row(a, i, t, 1), add_row(u, i, t, 1)
                    done = False
        if a[t][t] < 0:
            a[t] = [-x for x in a[t]]
            u[t] = [-x for x in u[t]]
        t += 1
    return [a[i][i] for i in range(min(m, n))], u, v


def _eliminate(relations, n_gens):
    """Sparse Gaussian elimination on unit pivots.

    Returns (substitutions, leftover relations).  ``substitutions`` is a list
    of (g, expr) in elimination order meaning g = sum expr[h] * h.
    """
    rels = {r: dict(rel) for r, rel in enumerate(relations) if rel}
    col = [set() for _ in range(n_gens)]
    for r, rel in rels.items():
        for g in rel:
            col[g].add(r)
    subs = []
    stuck = set()
    while True:
        best = None
        for r, rel in rels.items():
            if r in stuck:
                continue
            if best is None or len(rel) < len(rels[best]):
                best = r
                if len(rel) <= 2:
                    break
        if best is None:
            break
        rel = rels[best]
        units = [g for g, c in rel.items() if abs(c) == 1]
        if not units:
            stuck.add(best)
            continue
        g = min(units, key=lambda h: len(col[h]))
        cg = rel[g]
        expr = {h: -c * cg for h, c in rel.items() if h != g}  # 1/cg == cg for units
        subs.append((g, expr))
        del rels[best]
        for h in rel:
            col[h].discard(best)
        for r2 in list(col[g]):
            other = rels[r2]
            f = other.pop(g)
            col[g].discard(r2)
            for h, c in expr.items():
                nv = other.get(h, 0) + f * c
                if nv:
                    if h not in other:
                        col[h].add(r2)
                    other[h] = nv
                elif h in other:
                    del other[h]
                    col[h].discard(r2)
            stuck.discard(r2)
            if not other:
                del rels[r2]
    return subs, list(rels.values())


def homology_basis(mesh: Mesh) -> HomologyData:
    """Integral H_1 basis (modulo torsion) and the dual integral cocycles."""
    n_e = mesh.n_edges
    in_tree, parent, parent_edge, parent_sign, order = _spanning_forest(mesh.n_vertices, mesh.edges)
    gens = np.flatnonzero(~in_tree)
    gid = {int(e): n for n, e in enumerate(gens)}
    relations = []
    d1 = mesh.d1.tocsr()
    for f in range(d1.shape[0]):
        lo, hi = d1.indptr[f], d1.indptr[f + 1]
        rel = {}
        for e, c in zip(d1.indices[lo:hi], d1.data[lo:hi]):
            if e in gid:
                rel[gid[e]] = rel.get(gid[e], 0) + int(c)
        rel = {g: c for g, c in rel.items() if c}
        if rel:
            relations.append(rel)
    subs, leftover = _eliminate(relations, len(gens))
    eliminated = {g for g, _ in subs}
    survivors = [g for g in range(len(gens)) if g not in eliminated]
    spos = {g: n for n, g in enumerate(survivors)}

    # express every generator over survivors (resolve in reverse elimination order)
    resolved = {g: {spos[g]: 1} for g in survivors}
    for g, expr in reversed(subs):
        acc = {}
        for h, c in expr.items():
            for s, cs in resolved[h].items():
                acc[s] = acc.get(s, 0) + c * cs
        resolved[g] = {s: c for s, c in acc.items() if c}

    ns = len(survivors)
    if leftover:
        rmat = [[rel.get(g, 0) for g in survivors] for rel in leftover]
        diag, _, v = smith_normal_form(rmat)
    else:
        diag, v = [], [[int(i == j) for j in range(ns)] for i in range(ns)]
    rank = sum(1 for x in diag if x)
    torsion = [abs(x) for x in diag if abs(x) > 1]
    free = list(range(rank, ns))
    v_int = np.array(v, dtype=object).reshape(ns, ns)
    v_inv = _unimodular_inverse(v_int)
    phi = v_inv[free, :] if ns else np.zeros((0, 0), dtype=object)  # survivor coords -> free coords
    b1 = len(free)

    # cocycles: value on each edge is its free coordinate
    gen_cls = np.zeros((len(gens), ns), dtype=object)
    for g, expr in resolved.items():
        for s, c in expr.items():
            gen_cls[g, s] = c
    co = np.zeros((b1, n_e), dtype=np.int64)
    if b1:
        co[:, gens] = np.array((phi @ gen_cls.T).tolist(), dtype=np.int64)

    # cycles: generator loops closed through the tree
    def tree_path(vert):
        chain = {}
        while parent[vert] >= 0:
            e = parent_edge[vert]
            chain[e] = chain.get(e, 0) - int(parent_sign[vert])
            vert = parent[vert]
        return chain

    cyc = np.zeros((b1, n_e), dtype=np.int64)
    for i, fcol in enumerate(free):
        coeffs = [int(x) for x in v_int[:, fcol]]
        for spos_idx, c in enumerate(coeffs):
            if not c:
                continue
            e = int(gens[survivors[spos_idx]])
            a, bv = mesh.edges[e]
            cyc[i, e] += c
            for te, s in tree_path(bv).items():
                cyc[i, te] += c * s
            for te, s in tree_path(a).items():
                cyc[i, te] -= c * s
    data = HomologyData(h1_basis=cyc, h1_cobasis=co, b1=b1, torsion=torsion)
    if mesh.edge_vectors is not None and mesh.lattice is not None and b1 == mesh.lattice.dim:
        data = _align_to_lattice(mesh, data)
    return data


def _unimodular_inverse(v):
    import sympy
    if v.shape[0] == 0:
        return v
    inv = sympy.Matrix(v.tolist()).inv()
    return np.array([[int(x) for x in row] for row in inv.tolist()], dtype=object)


def _align_to_lattice(mesh: Mesh, data: HomologyData) -> HomologyData:
    """Change basis so that cycle j is the deck translation by the j-th lattice generator."""
    coords = np.linalg.solve(mesh.lattice.basis, mesh.edge_vectors.T)  # (b, E) lattice-coordinate steps
    pairing = coords @ data.h1_basis.T  # P_ij = <zeta_i, c_j>
    p_int = np.rint(pairing).astype(np.int64)
    if np.max(np.abs(pairing - p_int)) > 1e-6 or round(abs(np.linalg.det(p_int))) != 1:
        raise InvalidMeshError("homology basis is not compatible with the lattice structure")
    p_inv = np.rint(np.linalg.inv(p_int)).astype(np.int64)
    cycles = (data.h1_basis.T @ p_inv).T
    cocycles = p_int @ data.h1_cobasis
    return HomologyData(h1_basis=cycles, h1_cobasis=cocycles, b1=data.b1, torsion=data.torsion)


def chain_boundary(mesh: Mesh, chain) -> np.ndarray:
    return mesh.d0.T @ np.asarray(chain)
