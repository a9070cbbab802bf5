import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artfield.errors import DataFormatError
from artfield.geometry import (TriMesh, _CORNERS, _EDGES, case_table, chamfer_l1, chamfer_l1_brute, format_db,
                               grid_points, load_points, marching_cubes, marching_cubes_grid, measure_opening_angle,
                               psnr, read_obj, read_xyz, sample_mesh_points, write_obj, write_xyz)
from artfield.scenegen import laptop, scene_sdf


def sphere(p, r=0.5):
    return np.linalg.norm(p, axis=-1) - r


# -- marching cubes -----------------------------------------------------------------
def test_case_table_uses_only_crossing_edges():
    table = case_table()
    assert len(table) == 256 and table[0] == () and table[255] == ()
    for case, tris in enumerate(table):
        inside = [(case >> k) & 1 for k in range(8)]
        for tri in tris:
            for e in tri:
                a, b = _EDGES[e]
                assert inside[a] != inside[b], (case, tri)


def test_sphere_mesh_quality():
    mesh = marching_cubes(sphere, 64)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.max(np.abs(r - 0.5)) < 0.0625
    assert mesh.is_watertight()
    assert mesh.area() == pytest.approx(np.pi, rel=0.01)


def test_triangles_face_outward():
    mesh = marching_cubes(sphere, 24)
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    assert np.all(np.einsum("ij,ij->i", n, (a + b + c) / 3) > 0)


@pytest.mark.parametrize("seed", range(5))
def test_random_closed_field_is_watertight(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(12, 12, 12))
    f[[0, -1]] = f[:, [0, -1]] = f[:, :, [0, -1]] = 1.0
    mesh = marching_cubes_grid(f, (0, 0, 0), 1.0)
    assert mesh.is_watertight()


def test_matches_skimage():
    measure = pytest.importorskip("skimage.measure")
    axis, h = grid_points(40)
    g = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    vals = sphere(g, 0.7) + 0.05 * np.sin(5 * g[..., 0])
    ours = marching_cubes_grid(vals, (axis[0],) * 3, h)
    verts, faces, _, _ = measure.marching_cubes(vals, 0.0, spacing=(h, h, h))
    theirs = TriMesh(verts + axis[0], faces)
    assert ours.area() == pytest.approx(theirs.area(), rel=2e-3)
    # same edges, same linear interpolation; skimage works in float32
    assert chamfer_l1(ours.vertices, theirs.vertices) < 1e-6


def test_empty_and_invalid_grids():
    assert marching_cubes_grid(np.ones((3, 3, 3)), 0, 1).is_empty
    with pytest.raises(ValueError):
        marching_cubes_grid(np.ones((3, 3)), 0, 1)
    with pytest.raises(ValueError):
        sample_mesh_points(TriMesh(np.zeros((0, 3)), np.zeros((0, 3))), 10)
    with pytest.raises(ValueError):
        TriMesh(np.zeros((2, 3)), [[0, 1, 2]])


def test_corner_convention():
    assert _CORNERS.tolist()[:3] == [[0, 0, 0], [1, 0, 0], [0, 1, 0]] and len(_EDGES) == 12


# -- sampling and metrics -------------------------------------------------------------------
def test_surface_samples_are_uniform_on_sphere():
    pts = sample_mesh_points(marching_cubes(sphere, 48), 20000, 0)
    assert np.max(np.abs(np.linalg.norm(pts, axis=1) - 0.5)) < 0.01
    assert np.all(np.abs(pts.mean(axis=0)) < 0.01)
    np.testing.assert_array_equal(pts, sample_mesh_points(marching_cubes(sphere, 48), 20000, 0))


@given(seed=st.integers(0, 10_000), n=st.integers(1, 60), m=st.integers(1, 60))
@settings(max_examples=30, deadline=None)
def test_chamfer_kdtree_equals_brute(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert abs(chamfer_l1(a, b) - chamfer_l1_brute(a, b)) < 1e-12


def test_chamfer_hand_values():
    a = np.zeros((1, 3))
    b = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
    # a->b: 1; b->a: (5 + 1) / 2
    assert chamfer_l1(a, b) == pytest.approx(0.5 * (1.0 + 3.0))
    assert chamfer_l1(b, b) == 0.0
    with pytest.raises(ValueError):
        chamfer_l1(np.zeros((0, 3)), b)


@pytest.mark.parametrize("mse,db", [(0.01, 20.0), (0.25, 6.0206), (1.0, 0.0)])
def test_psnr_closed_form(mse, db):
    a = np.zeros((4, 5, 3))
    b = np.full_like(a, np.sqrt(mse))
    assert psnr(a, b) == pytest.approx(db, abs=1e-4 if db == 6.0206 else 1e-12)


def test_psnr_edge_cases():
    a = np.random.default_rng(0).random((3, 3))
    assert psnr(a, a) == float("inf") and format_db(psnr(a, a)) == "+inf"
    assert format_db(20.0) == "20.0000"
    with pytest.raises(ValueError):
        psnr(a, a[:2])


# -- opening angle --------------------------------------------------------------------------
def laptop_mesh(deg, res=64, seed=11, angle_range=(0.0, 180.0)):
    spec = laptop(seed, angle_range=angle_range)
    return spec, marching_cubes(lambda p: scene_sdf(spec, [deg], p)[0], res)


@pytest.mark.parametrize("seed", [0, 11])
@pytest.mark.parametrize("deg", [30.0, 45.0, 60.0, 90.0])
def test_angle_of_analytic_laptop_mesh(deg, seed):
    spec, mesh = laptop_mesh(deg, seed=seed, angle_range=(30.0, 90.0))
    m = measure_opening_angle(mesh, spec.joint_spec())
    assert m.degrees == pytest.approx(deg, abs=0.5)
    assert not m.low_confidence and m.n_fixed > 1000 and m.n_moving > 1000


def test_angle_from_point_cloud():
    spec, mesh = laptop_mesh(60.0)
    pts = sample_mesh_points(mesh, 30000, 1)
    assert measure_opening_angle(pts, spec.joint_spec()).degrees == pytest.approx(60.0, abs=2.0)


def test_closed_laptop_is_low_confidence():
    spec, mesh = laptop_mesh(0.0)
    m = measure_opening_angle(mesh, spec.joint_spec())
    assert m.low_confidence


# -- file formats ---------------------------------------------------------------------------
def test_obj_round_trip(tmp_path):
    mesh = marching_cubes(sphere, 10)
    write_obj(mesh, tmp_path / "s.obj")
    back = read_obj(tmp_path / "s.obj")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    pts = load_points(tmp_path / "s.obj", 50, 0)
    assert pts.shape == (50, 3)


def test_obj_quads_and_errors(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    assert read_obj(p).triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    p.write_text("v 0 0 zero\n")
    with pytest.raises(DataFormatError):
        read_obj(p)
    p.write_text("v 0 0 0\nf 1 2 3\n")
    with pytest.raises(DataFormatError):
        read_obj(p)


def test_xyz_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(7, 3))
    write_xyz(pts, tmp_path / "p.xyz")
    np.testing.assert_array_equal(read_xyz(tmp_path / "p.xyz"), pts)
    np.testing.assert_array_equal(load_points(tmp_path / "p.xyz"), pts)
    (tmp_path / "bad.xyz").write_text("1 2\n")
    with pytest.raises(DataFormatError):
        read_xyz(tmp_path / "bad.xyz")
