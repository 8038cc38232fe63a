import math

import numpy as np
import pytest

from conftest import aniso_mesh, bump_mesh, hex_mesh, square_mesh
from systola.abel_jacobi import (build_bi_map, coarea_check, degree, equality_signature, harmonic_abel_jacobi,
                                 jacobian_field, jensen_chain_check, lichnerowicz_check, linear_torus_map)
from systola.errors import InvalidFormError, WrongExponentError


@pytest.fixture(scope="module")
def sq8():
    return square_mesh(8)


def test_identity_map_has_unit_jacobian(sq8):
    jac = jacobian_field(linear_torus_map(sq8, np.eye(2)))
    assert np.allclose(jac.values, 1.0, atol=1e-12)


def test_area_preserving_stretch_has_unit_jacobian(sq8):
    # x -> diag(2, 1/2) x onto R^2 / diag(2, 1/2) Z^2: same lattice coordinates, stretched target metric
    target = np.diag([4.0, 0.25])
    fmap = linear_torus_map(sq8, np.eye(2), metric=target)
    jac = jacobian_field(fmap)
    assert np.allclose(jac.values, 1.0, atol=1e-12)
    assert np.allclose(fmap.singular_value_ratio(), 4.0, atol=1e-9)


@pytest.mark.parametrize("matrix,expected", [(np.eye(2), 1), ([[2, 0], [0, 1]], 2), ([[0, 1], [1, 0]], 1),
                                             ([[1, 1], [0, 3]], 3)])
def test_degree_of_linear_covers(sq8, matrix, expected):
    fmap = linear_torus_map(sq8, matrix)
    assert degree(fmap, n_values=16) == expected


def test_signed_degree_sees_orientation(sq8):
    assert degree(linear_torus_map(sq8, np.eye(2)), signed=True) == 1
    assert degree(linear_torus_map(sq8, [[0, 1], [1, 0]]), signed=True) == -1


def test_non_integral_map_rejected(sq8):
    with pytest.raises(InvalidFormError):
        linear_torus_map(sq8, [[2.0, 0.0], [0.0, 0.5]])


@pytest.mark.parametrize("matrix", [np.eye(2), [[2, 0], [0, 1]]])
def test_coarea_formula(sq8, matrix):
    res = coarea_check(linear_torus_map(sq8, matrix), samples=10_000, seed=1)
    assert res["relative_error"] < 0.01
    assert res["mean_count"] == pytest.approx(abs(np.linalg.det(np.asarray(matrix, float))), rel=1e-9)


def test_coarea_on_curved_torus():
    fmap = harmonic_abel_jacobi(bump_mesh(12))
    res = coarea_check(fmap, samples=10_000, seed=3)
    assert res["relative_error"] < 0.01


@pytest.mark.parametrize("matrix", [[[2, 0], [0, 1]], [[1, 1], [0, 3]]])
def test_map_is_equivariant(sq8, matrix):
    fmap = linear_torus_map(sq8, matrix)
    # corner lifts differ from the vertex primitive by exact deck translations
    assert fmap.integrality_defect < 1e-10
    assert np.array_equal(fmap.induced, np.asarray(matrix))


def test_harmonic_map_of_flat_torus_is_linear():
    mesh = hex_mesh(8)
    fmap = harmonic_abel_jacobi(mesh)
    ratio = fmap.singular_value_ratio()
    assert np.allclose(ratio, 1.0, atol=1e-9)
    assert degree(fmap) == 1


def test_projection_shrinks_jacobian():
    mesh = aniso_mesh(12)
    con = build_bi_map(mesh, 4.0)
    chain = jensen_chain_check(mesh, con.decomposition, con.minimizers, 4.0)
    ps = chain["per_simplex"]
    assert np.all(ps["jac_f"] <= ps["jac_F"] + 1e-10)


def test_flat_hexagonal_torus_has_equality_signature(hex32):
    sig = equality_signature(build_bi_map(hex32, 2.0))
    assert sig["integral_jac"] == pytest.approx(1.0, abs=5e-3)
    assert sig["max_norm_spread"] < 1e-2
    assert sig["max_singular_value_ratio"] < 1.01


def test_am_gm_step_tight_on_flat_and_strict_on_anisotropic():
    flat = square_mesh(12)
    con = build_bi_map(flat, 2.0)
    ps = jensen_chain_check(flat, con.decomposition, con.minimizers, 2.0)["per_simplex"]
    assert np.max(np.abs(ps["am_gm"] - ps["jac_F"])) < 1e-12

    curved = aniso_mesh(12)
    con = build_bi_map(curved, 2.0)
    ps = jensen_chain_check(curved, con.decomposition, con.minimizers, 2.0)["per_simplex"]
    assert np.max(ps["am_gm"] - ps["jac_F"]) > 1e-4


@pytest.mark.parametrize("name,mesh_fn,p", [
    ("square", lambda: square_mesh(12), 2.0),
    ("square", lambda: square_mesh(12), 4.0),
    ("bump", lambda: bump_mesh(12), 2.0),
    ("aniso", lambda: aniso_mesh(12), 2.0),
    ("aniso", lambda: aniso_mesh(12), 4.0),
])
def test_inequality_chain_has_nonnegative_slack(name, mesh_fn, p):
    mesh = mesh_fn()
    con = build_bi_map(mesh, p)
    chain = jensen_chain_check(mesh, con.decomposition, con.minimizers, p)
    assert chain["holds_pointwise"] and chain["holds_integrated"] and chain["final_bound_holds"]
    assert min(chain["pointwise_min_slack"].values()) >= -1e-10
    assert min(chain["integrated_slack"].values()) >= -1e-10
    assert chain["integrated"]["jac_f"] <= 1.0 + 1e-10


def test_chain_rejects_small_exponent():
    mesh = square_mesh(6)
    con = build_bi_map(mesh, 2.0)
    with pytest.raises(WrongExponentError):
        jensen_chain_check(mesh, con.decomposition, con.minimizers, 1.5)


@pytest.mark.parametrize("mesh_fn", [lambda: square_mesh(10), lambda: bump_mesh(10), lambda: aniso_mesh(10)])
def test_harmonic_surface_map_area_bound(mesh_fn):
    res = lichnerowicz_check(mesh_fn())
    assert res["holds"]
    assert res["slack"] >= -1e-10


def test_bi_minimizers_have_unit_norm(aniso16):
    con = build_bi_map(aniso16, 4.0)
    for f in con.minimizers:
        assert f.lp_norm(4.0) == pytest.approx(1.0, abs=1e-9)
    assert math.isclose(float(np.sum(con.decomposition.weights)), 2.0, rel_tol=1e-7)
