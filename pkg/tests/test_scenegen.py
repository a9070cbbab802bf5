import json

import numpy as np
import pytest

from artfield.imageio import read_pgm, read_ppm
from artfield.renderer import Camera, generate_rays
from artfield.scenegen import (SCENES, SceneSpec, articulation_grid, build_scene, generate, place_cameras,
                               polyhedron_vertices, read_cameras, render_reference, scene_sdf, sdf_cylinder,
                               sdf_rounded_box, write_cameras)


@pytest.mark.parametrize("count", [4, 6, 8, 12, 20, 60])
def test_polyhedra_are_vertex_transitive_sets(count):
    v = polyhedron_vertices(count)
    assert v.shape == (count, 3)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)
    d = np.linalg.norm(v[:, None] - v[None], axis=-1)
    assert np.min(d + 10 * np.eye(count)) > 0.1
    nearest = np.sort(d, axis=1)[:, 1]
    np.testing.assert_allclose(nearest, nearest[0], atol=1e-12)
    if count != 4:
        # centrally symmetric: every vertex has its antipode
        assert np.all(np.min(np.linalg.norm(v[:, None] + v[None], axis=-1), axis=1) < 1e-12)


def test_unknown_polyhedron():
    with pytest.raises(ValueError):
        polyhedron_vertices(3)


def test_cameras_look_at_origin():
    cams = place_cameras(12, 5, radius=2.5, width=32, height=24)
    for cam in cams:
        centre = cam.world_from_camera()[:3, 3]
        assert np.linalg.norm(centre) == pytest.approx(2.5)
        rays = generate_rays(cam, np.array([[cam.cx, cam.cy]]), 1.0)
        np.testing.assert_allclose(rays.directions[0], -centre / 2.5, atol=1e-12)
    a = place_cameras(12, 5)
    b = place_cameras(12, 6)
    assert not np.allclose(a[0].world_from_camera(), b[0].world_from_camera())
    with pytest.raises(ValueError):
        place_cameras(6, 0, radius=0.5)


def test_camera_file_round_trip(tmp_path):
    cams = place_cameras(6, 1, width=20, height=10)
    write_cameras(tmp_path / "cameras.txt", cams)
    back = read_cameras(tmp_path / "cameras.txt")
    for a, b in zip(cams, back):
        np.testing.assert_array_equal(a.intrinsics(), b.intrinsics())
        np.testing.assert_allclose(a.world_from_camera(), b.world_from_camera(), atol=1e-15)
        assert (a.width, a.height) == (b.width, b.height)
    (tmp_path / "bad.txt").write_text("0 1 2 3\n")
    with pytest.raises(ValueError):
        read_cameras(tmp_path / "bad.txt")


def test_primitive_sdfs():
    p = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.5, 0.5]])
    np.testing.assert_allclose(sdf_rounded_box(p, [0.5, 0.5, 0.5], 0.0), [1.5, -0.5, 0.0])
    np.testing.assert_allclose(sdf_rounded_box(p, [0.4, 0.4, 0.4], 0.1), [1.5, -0.5, np.sqrt(3) * 0.1 - 0.1])
    q = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 1.5, 0.0]])
    np.testing.assert_allclose(sdf_cylinder(q, 0.5, 1.0), [1.5, -0.5, 0.0, 0.5])


@pytest.mark.parametrize("name", SCENES)
def test_scenes_fit_unit_sphere_at_all_states(name):
    spec = build_scene(name, 7)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.2, 1.2, (40000, 3))
    outside = np.linalg.norm(x, axis=1) > 1.0
    for art in articulation_grid(spec, 3):
        d, _ = scene_sdf(spec, art, x)
        assert np.all(d[outside] > 0)
        assert np.any(d < 0)


def test_scene_serialization_round_trip():
    spec = build_scene("cabinet", 3)
    back = SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    x = np.random.default_rng(0).uniform(-1, 1, (500, 3))
    for art in articulation_grid(spec, 2):
        np.testing.assert_array_equal(scene_sdf(spec, art, x)[0], scene_sdf(back, art, x)[0])
    with pytest.raises(ValueError):
        spec.check_articulation([0.0])
    with pytest.raises(ValueError):
        spec.check_articulation([200.0, 0.0])
    with pytest.raises(ValueError):
        build_scene("chair")


def test_articulation_grid():
    spec = build_scene("cabinet", 0)
    grid = articulation_grid(spec, 3)
    assert len(grid) == 9 and np.allclose(grid[0], [0.0, 0.0])
    lap = build_scene("laptop", 0)
    assert [float(a[0]) for a in articulation_grid(lap, 5)] == [30.0, 45.0, 60.0, 75.0, 90.0]


def test_frontal_face_renders_albedo():
    spec = build_scene("laptop", 2)
    # the underside of the base faces the camera
    cam = Camera.look_at((0.0, -3.0, 0.0), up=(0.0, 0.0, 1.0), fx=40.0, fy=40.0, width=9, height=9)
    rgb, mask = render_reference(spec, [90.0], cam)
    assert mask[4, 4] == 1.0
    np.testing.assert_allclose(rgb[4, 4], spec.parts[0].albedo, atol=1e-6)
    assert np.all(rgb[mask == 0] == 0)


def test_generated_dataset_layout(tiny_data):
    root, train, held = tiny_data
    man = json.loads((root / "dataset.json").read_text())
    assert man["category"] == "laptop" and len(man["instances"]) == 2
    s = root / "instance_001" / "state_001"
    assert read_ppm(s / "view_003.ppm").shape == (18, 24, 3)
    assert set(np.unique(read_pgm(s / "mask_003.pgm"))) <= {0.0, 1.0}
    assert len(read_cameras(s / "cameras.txt")) == 4
    assert held.n_instances == 1 and len(held.views[(0, 0)]) == 6
    assert (root / "holdout" / "instance_000" / "state_000" / "infer" / "cameras.txt").exists()


def test_generate_is_deterministic(tmp_path):
    generate("drawer", 1, 2, 4, (12, 9), seed=1, out_dir=tmp_path / "a")
    generate("drawer", 1, 2, 4, (12, 9), seed=1, out_dir=tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 1 + 2 * 9
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
