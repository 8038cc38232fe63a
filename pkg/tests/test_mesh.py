import math

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from systola.errors import InvalidMeshError, InvalidMetricError, UnsupportedDimensionError
from systola.lattice import Lattice, hexagonal_lattice, square_lattice
from systola.mesh import (Form, Mesh, chain_boundary, conformal_scale, flat_torus_mesh, homology_basis,
                          normalize_volume, reference_form, smith_normal_form, volume, wedge_integral)


@pytest.mark.parametrize("lat,k,count,vol", [
    (square_lattice(2), 1, 2, 1.0),
    (hexagonal_lattice(), 4, 32, math.sqrt(3) / 2),
    (square_lattice(3), 2, 48, 1.0),
])
def test_flat_torus_counts_and_volume(lat, k, count, vol):
    m = flat_torus_mesh(lat, k)
    assert m.n_simplices == count
    assert volume(m) == pytest.approx(vol, abs=1e-10)
    assert m.euler_characteristic == 0


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_volume_equals_covolume(k):
    for lat in (hexagonal_lattice(), Lattice.from_gram([[2.0, 0.3], [0.3, 0.7]])):
        assert volume(flat_torus_mesh(lat, k)) == pytest.approx(lat.covolume, abs=1e-10)


def test_hexagonal_triangles_are_equilateral():
    m = flat_torus_mesh(hexagonal_lattice(), 6)
    assert np.allclose(m.edge_lengths, 1 / 6)


@pytest.mark.parametrize("lat,k", [(square_lattice(2), 3), (hexagonal_lattice(), 4), (square_lattice(3), 2)])
def test_coboundaries_compose_to_zero(lat, k):
    m = flat_torus_mesh(lat, k)
    assert (m.d1 @ m.d0).count_nonzero() == 0
    if m.dim == 3:
        assert (m.d2 @ m.d1).count_nonzero() == 0


@pytest.mark.parametrize("lat,k,b1", [(square_lattice(2), 4, 2), (hexagonal_lattice(), 3, 2), (square_lattice(3), 2, 3)])
def test_homology_basis(lat, k, b1):
    m = flat_torus_mesh(lat, k)
    hom = homology_basis(m)
    assert hom.b1 == b1 and hom.torsion == []
    assert np.array_equal(hom.pairing(), np.eye(b1, dtype=int))
    # cycles are closed, cocycles are closed
    for c in hom.h1_basis:
        assert not np.any(chain_boundary(m, c))
    assert not np.any(m.d1 @ hom.h1_cobasis.T)


def test_cycles_are_aligned_with_lattice_generators():
    lat = hexagonal_lattice()
    m = flat_torus_mesh(lat, 4)
    hom = homology_basis(m)
    disp = hom.h1_basis @ m.edge_vectors
    assert np.allclose(disp, lat.basis.T, atol=1e-12)


def test_normalize_volume_scaling():
    m = flat_torus_mesh(hexagonal_lattice(), 4)
    n = normalize_volume(m)
    assert volume(n) == pytest.approx(1.0)
    assert np.allclose(n.edge_lengths / m.edge_lengths, (2 / math.sqrt(3)) ** 0.5)


@given(st.floats(0.2, 5.0), st.sampled_from([2, 3]))
def test_constant_conformal_factor_scales_volume(c, dim):
    m = flat_torus_mesh(square_lattice(dim), 2)
    assert conformal_scale(m, 1.0).edge_lengths == pytest.approx(m.edge_lengths)
    s = conformal_scale(m, c)
    assert np.allclose(s.edge_lengths, c * m.edge_lengths)
    assert volume(s) == pytest.approx(c ** dim * volume(m), rel=1e-12)


def test_wedge_integral_examples():
    m = flat_torus_mesh(square_lattice(2), 4)
    hom = homology_basis(m)
    a, b = Form(hom.h1_cobasis[0], m), Form(hom.h1_cobasis[1], m)
    assert abs(wedge_integral(a, b)) == pytest.approx(1.0)
    assert wedge_integral(a, a) == pytest.approx(0.0)
    dx, dy = reference_form(m, [1, 0]), reference_form(m, [0, 1])
    assert wedge_integral(dx, dy) == pytest.approx(1.0)


@given(st.integers(0, 10_000))
def test_wedge_integral_bilinear_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    m = flat_torus_mesh(hexagonal_lattice(), 3)
    hom = homology_basis(m)

    def closed():
        return Form(rng.normal(size=2) @ hom.h1_cobasis + m.d0 @ rng.normal(size=m.n_vertices), m)

    a, b, c = closed(), closed(), closed()
    s, t = rng.normal(size=2)
    assert wedge_integral(a, b) == pytest.approx(-wedge_integral(b, a), abs=1e-10)
    assert wedge_integral(s * a + t * c, b) == pytest.approx(s * wedge_integral(a, b) + t * wedge_integral(c, b),
                                                             abs=1e-9)


def test_wedge_integral_is_refinement_invariant():
    vals = []
    for k in (2, 3, 5, 8):
        m = flat_torus_mesh(hexagonal_lattice(), k)
        hom = homology_basis(m)
        vals.append(wedge_integral(Form(hom.h1_cobasis[0], m), Form(hom.h1_cobasis[1], m)))
    assert all(v == vals[0] for v in vals) and abs(vals[0]) == 1.0


def test_json_roundtrip(tmp_path):
    m = flat_torus_mesh(hexagonal_lattice(), 3)
    path = tmp_path / "m.json"
    m.save(path)
    back = Mesh.load(path)
    assert back.n_simplices == m.n_simplices and back.n_edges == m.n_edges
    assert np.allclose(np.sort(back.edge_lengths), np.sort(m.edge_lengths))
    assert volume(back) == pytest.approx(volume(m))
    assert homology_basis(back).b1 == 2


def test_invalid_meshes():
    with pytest.raises(InvalidMeshError):
        flat_torus_mesh(square_lattice(2), 0)
    with pytest.raises(UnsupportedDimensionError):
        flat_torus_mesh(square_lattice(4), 2)
    m = flat_torus_mesh(square_lattice(2), 2)
    bad = m.edge_lengths.copy()
    bad[0] = 10.0
    with pytest.raises(InvalidMetricError):
        m.with_lengths(bad)
    with pytest.raises(InvalidMeshError):
        Mesh.from_cells(2, [[(0, (0, 0)), (1, (0, 0)), (2, (0, 0))]] * 2, lambda k: 1.0)


@given(st.lists(st.lists(st.integers(-6, 6), min_size=3, max_size=3), min_size=2, max_size=4))
def test_smith_normal_form_matches_sympy(rows):
    a = np.array(rows)
    d, u, v = smith_normal_form(a)
    prod = np.array(u) @ a @ np.array(v)
    diag = np.zeros_like(prod)
    for i, x in enumerate(d):
        diag[i, i] = x
    assert np.array_equal(prod, diag)
    assert round(abs(np.linalg.det(np.array(u, dtype=float)))) == 1
    assert round(abs(np.linalg.det(np.array(v, dtype=float)))) == 1
    nz = [x for x in d if x]
    assert all(b % a_ == 0 for a_, b in zip(nz, nz[1:]))
    from sympy.matrices.normalforms import smith_normal_form as snf
    ref = snf(sympy.Matrix(rows), domain=sympy.ZZ)
    ref_d = [abs(int(ref[i, i])) for i in range(min(ref.shape))]
    assert sorted(abs(x) for x in d) == sorted(ref_d)
