import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from faceenhance import layout
from faceenhance.geoembed import (DegenerateInputError, FaceMesh, LandmarkSet, extract_distances, load_landmark_dir,
                                  load_landmarks, load_pca, pca_decode, pca_encode, pca_fit, save_landmarks,
                                  save_pca, triangulate)
from faceenhance.predicates import incircle, orient2d
from oracles import circumcircle_violations, convex_hull_size


# --- predicates --------------------------------------------------------------------

def test_orient2d_signs():
    assert orient2d((0, 0), (1, 0), (0, 1)) == 1
    assert orient2d((0, 0), (0, 1), (1, 0)) == -1
    assert orient2d((0, 0), (1, 1), (2, 2)) == 0


def test_orient2d_exact_on_near_degenerate():
    # classic failure case for naive evaluation: points nearly on a line
    a = (0.5, 0.5)
    b = (12.0, 12.0)
    c = (24.0, 24.0)
    for i in range(64):
        p = (a[0] + i * 2.0 ** -53, a[1])
        d = orient2d(p, b, c)
        # exact sign from rationals
        from fractions import Fraction as F
        det = (F(p[0]) - F(c[0])) * (F(b[1]) - F(c[1])) - (F(p[1]) - F(c[1])) * (F(b[0]) - F(c[0]))
        assert d == (det > 0) - (det < 0)


def test_incircle_signs():
    a, b, c = (0.0, 0.0), (1.0, 0.0), (0.0, 1.0)
    assert incircle(a, b, c, (0.5, 0.5)) == 1
    assert incircle(a, b, c, (2.0, 2.0)) == -1
    assert incircle(a, b, c, (1.0, 1.0)) == 0


# --- landmarks -----------------------------------------------------------------------

def test_landmark_validation():
    pts = layout.face_landmarks()
    LandmarkSet(pts)
    with pytest.raises(ValueError):
        LandmarkSet(pts[:59])
    bad = pts.copy()
    bad[3] = bad[4]
    with pytest.raises(ValueError, match="coincident"):
        LandmarkSet(bad)
    bad = pts.copy()
    bad[0, 0] = -1.0
    with pytest.raises(ValueError):
        LandmarkSet(bad)


def test_landmark_file_round_trip(tmp_path, ref_landmarks):
    path = tmp_path / "a.json"
    save_landmarks(ref_landmarks, path)
    back = load_landmarks(path)
    assert np.array_equal(back.points, ref_landmarks.points)
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and doc["canvas"] == [224, 224] and len(doc["points"]) == 60


def test_landmark_dir_skips_non_landmark_json(tmp_path, ref_landmarks):
    save_landmarks(ref_landmarks, tmp_path / "b.json")
    (tmp_path / "manifest.json").write_text('{"entries": []}')
    names = [n for n, _ in load_landmark_dir(tmp_path)]
    assert names == ["b.json"]
    (tmp_path / "c.json").write_text('{"version": 1, "points": [[1, 2]]}')
    with pytest.raises(ValueError):
        load_landmark_dir(tmp_path)


def test_reference_groups_cover_all_points(ref_landmarks):
    idx = sorted(i for g in ref_landmarks.groups.values() for i in g)
    assert idx == list(range(60))


# --- triangulation -------------------------------------------------------------------

def test_single_triangle():
    mesh = triangulate(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert len(mesh.triangles) == 1 and mesh.edges == [(0, 1), (0, 2), (1, 2)]


def test_reference_fixture_has_150_edges(ref_landmarks, ref_mesh):
    assert ref_mesh.n_edges == 150
    assert len(ref_mesh.edges) == len(set(ref_mesh.edges))
    assert ref_mesh.n_edges == 3 * 60 - 3 - convex_hull_size(ref_landmarks.points)
    assert not circumcircle_violations(ref_landmarks.points, ref_mesh.triangles)


def test_edges_sorted_lexicographically(ref_mesh):
    assert ref_mesh.edges == sorted(ref_mesh.edges)
    assert all(i < j for i, j in ref_mesh.edges)


def test_collinear_rejected():
    with pytest.raises(DegenerateInputError):
        triangulate(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))
    with pytest.raises(DegenerateInputError):
        triangulate(np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 1.0]]))


def test_twenty_random_points_euler(rng):
    pts = rng.uniform(0, 100, (20, 2))
    mesh = triangulate(pts)
    h = convex_hull_size(pts)
    assert mesh.n_edges == 3 * 20 - 3 - h
    assert len(mesh.triangles) == 2 * 20 - 2 - h
    assert not circumcircle_violations(pts, mesh.triangles)


def test_cocircular_grid_is_deterministic():
    g = np.array([[x, y] for x in range(4) for y in range(4)], dtype=float)
    a = triangulate(g)
    b = triangulate(g.copy())
    assert a == b
    assert a.n_edges == 3 * 16 - 3 - 12
    assert not circumcircle_violations(g, a.triangles)


def test_matches_scipy_on_fixture(ref_landmarks, ref_mesh):
    spatial = pytest.importorskip("scipy.spatial")
    tri = spatial.Delaunay(ref_landmarks.points)
    edges = set()
    for a, b, c in tri.simplices:
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((int(min(u, v)), int(max(u, v))))
    assert sorted(edges) == ref_mesh.edges


@given(st.integers(0, 2 ** 32 - 1), st.integers(4, 30))
def test_delaunay_properties(seed, n):
    r = np.random.default_rng(seed)
    pts = r.uniform(0, 50, (n, 2))
    mesh = triangulate(pts)
    assert mesh.n_edges == 3 * n - 3 - convex_hull_size(pts)
    assert not circumcircle_violations(pts, mesh.triangles)


def test_mesh_round_trip(ref_mesh):
    assert FaceMesh.from_dict(json.loads(json.dumps(ref_mesh.to_dict()))) == ref_mesh


# --- distances ---------------------------------------------------------------------------

def test_unit_right_triangle_distances():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    d = extract_distances(pts, triangulate(pts))
    assert sorted(d) == [1.0, 1.0, math.sqrt(2)]


def test_distances_homogeneous(ref_landmarks, ref_mesh):
    d = extract_distances(ref_landmarks, ref_mesh)
    d2 = extract_distances(ref_landmarks.points * 2, ref_mesh)
    assert np.array_equal(d2, 2 * d)


def test_distances_vs_pairwise_oracle(rng):
    pts = rng.uniform(0, 10, (10, 2))
    mesh = triangulate(pts)
    d = extract_distances(pts, mesh)
    for k, (i, j) in enumerate(mesh.edges):
        assert d[k] == pytest.approx(math.dist(pts[i], pts[j]), rel=1e-15)


def test_distance_index_out_of_range():
    with pytest.raises(IndexError):
        extract_distances(np.zeros((3, 2)), FaceMesh([(0, 1, 5)], [(0, 5)]))


# --- PCA -------------------------------------------------------------------------------

def _subspace_samples(rng, n, dim, k, noise=0.0):
    basis = np.linalg.qr(rng.normal(size=(dim, k)))[0]
    z = rng.normal(size=(n, k)) * np.linspace(5, 1, k)
    return 10.0 + z @ basis.T + noise * rng.normal(size=(n, dim))


def test_pca_invariants(rng):
    X = rng.normal(size=(80, 20)) @ rng.normal(size=(20, 20))
    m = pca_fit(X, 6)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(6), atol=1e-10)
    assert np.all(np.diff(m.eigenvalues) <= 0) and np.all(m.eigenvalues >= 0)
    assert 0.0 <= m.explained_ratio <= 1.0
    for row in m.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_needs_k_plus_one_samples(rng):
    with pytest.raises(ValueError, match="k\\+1"):
        pca_fit(rng.normal(size=(5, 10)), 5)


def test_pca_exact_on_subspace(rng):
    X = _subspace_samples(rng, 50, 30, 4)
    m = pca_fit(X, 4)
    np.testing.assert_allclose(pca_decode(m, pca_encode(m, X)), X, atol=1e-10)


def test_pca_encode_mean_is_zero(rng):
    m = pca_fit(rng.normal(size=(40, 12)), 5)
    assert np.allclose(pca_encode(m, m.mean), 0.0, atol=1e-14)


def test_pca_reconstruction_equals_discarded_eigenvalues(rng):
    X = rng.normal(size=(200, 150)) * np.linspace(3, 0.1, 150)
    m = pca_fit(X, 32)
    mse = np.mean(np.sum((X - pca_decode(m, pca_encode(m, X))) ** 2, axis=1))
    # independent oracle: full eigendecomposition through the SVD
    s = np.linalg.svd(X - X.mean(0), compute_uv=False)
    discarded = float(np.sum(s[32:] ** 2) / len(X))
    assert abs(mse - discarded) < 1e-9
    assert m.total_variance == pytest.approx(float(np.sum(s ** 2) / len(X)), rel=1e-12)


def test_pca_30_intrinsic_dims_retains_99_percent(rng):
    X = _subspace_samples(rng, 600, 150, 30, noise=1e-3)
    assert pca_fit(X, 32).explained_ratio >= 0.99


def test_encode_decode_adjoint(rng):
    m = pca_fit(rng.normal(size=(60, 15)), 4)
    d = rng.normal(size=15)
    c = rng.normal(size=4)
    lhs = pca_encode(m, d) @ c
    rhs = (d - m.mean) @ (pca_decode(m, c) - m.mean)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_pca_file_round_trip(tmp_path, rng, ref_mesh):
    m = pca_fit(rng.normal(size=(200, 150)), 32, mesh=ref_mesh)
    save_pca(m, tmp_path / "p.json")
    back = load_pca(tmp_path / "p.json")
    assert np.array_equal(back.components, m.components) and np.array_equal(back.mean, m.mean)
    assert back.mesh == ref_mesh
    assert json.loads((tmp_path / "p.json").read_text())["n_edges"] == 150


def test_shape_checks(rng):
    m = pca_fit(rng.normal(size=(40, 12)), 5)
    with pytest.raises(ValueError):
        pca_encode(m, np.zeros(11))
    with pytest.raises(ValueError):
        pca_decode(m, np.zeros(4))
