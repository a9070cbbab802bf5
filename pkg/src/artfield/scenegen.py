"""Procedural articulated toy scenes with analytic signed distances.

A scene is a list of rigid primitives.  Parts attached to a joint move with
it; the remaining parts never move.  Design coordinates are mapped into the
unit sphere by a single per-scene similarity (``center``, ``scale``) chosen
over the whole joint range, so every articulation shares the same frame.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .imageio import write_pgm, write_ppm
from .renderer import Camera, FunctionField, RenderSettings, generate_rays, trace_first_intersection

PRIMITIVES = ("rounded_box", "cylinder")
JOINT_TYPES = ("revolute", "prismatic")
SCENES = ("laptop", "drawer", "cabinet")
FIT_RADIUS = 0.9
DATASET_FORMAT = "artfield-dataset"
DATASET_VERSION = 1


# -- primitives -----------------------------------------------------------
def sdf_rounded_box(p: np.ndarray, half_extents, radius: float) -> np.ndarray:
    q = np.abs(p) - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside - radius


def sdf_cylinder(p: np.ndarray, radius: float, half_height: float) -> np.ndarray:
    """Capped cylinder along the local y axis."""
    d = np.stack([np.linalg.norm(p[..., [0, 2]], axis=-1) - radius, np.abs(p[..., 1]) - half_height], axis=-1)
    return np.minimum(np.max(d, axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)


def axis_rotation(axis, degrees: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    return Rotation.from_rotvec(np.deg2rad(degrees) * axis / np.linalg.norm(axis)).as_matrix()


@dataclass
class Part:
    primitive: str
    params: dict
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    albedo: np.ndarray = field(default_factory=lambda: np.full(3, 0.7))

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)

    def local_sdf(self, p: np.ndarray) -> np.ndarray:
        if self.primitive == "rounded_box":
            return sdf_rounded_box(p, self.params["half_extents"], self.params["radius"])
        return sdf_cylinder(p, self.params["radius"], self.params["half_height"])

    def corners(self) -> np.ndarray:
        """Rest-pose corners of a bounding box of the part."""
        if self.primitive == "rounded_box":
            ext = np.asarray(self.params["half_extents"]) + self.params["radius"]
        else:
            r, h = self.params["radius"], self.params["half_height"]
            ext = np.array([r, h, r])
        signs = np.array(list(itertools.product((-1, 1), repeat=3)), dtype=np.float64)
        return (signs * ext) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        params = {k: (list(map(float, v)) if np.ndim(v) else float(v)) for k, v in self.params.items()}
        return {"primitive": self.primitive, "params": params, "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(), "albedo": self.albedo.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Part:
        return cls(d["primitive"], dict(d["params"]), d["rotation"], d["translation"], d["albedo"])


@dataclass
class Joint:
    type: str
    axis: np.ndarray
    child: int
    range: tuple[float, float]
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.type not in JOINT_TYPES:
            raise ValueError(f"unknown joint type {self.type!r}")
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        self.axis = self.axis / np.linalg.norm(self.axis)
        self.pivot = np.asarray(self.pivot, dtype=np.float64).reshape(3)
        lo, hi = float(self.range[0]), float(self.range[1])
        if hi < lo:
            raise ValueError("joint range must satisfy min <= max")
        self.range = (lo, hi)

    def transform(self, value: float) -> tuple[np.ndarray, np.ndarray]:
        """(R, t) such that a point x on the child moves to R x + t."""
        if self.type == "revolute":
            R = axis_rotation(self.axis, value)
            return R, self.pivot - R @ self.pivot
        return np.eye(3), value * self.axis

    def to_dict(self) -> dict:
        return {"type": self.type, "axis": self.axis.tolist(), "child": self.child,
                "range": list(self.range), "pivot": self.pivot.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Joint:
        return cls(d["type"], d["axis"], int(d["child"]), tuple(d["range"]), d.get("pivot", (0, 0, 0)))


@dataclass
class SceneSpec:
    name: str
    parts: list[Part]
    joints: list[Joint]
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    # for opening-angle measurement: normal of the plane separating the moving
    # part from its fixed counterpart, in design coordinates
    split_normal: np.ndarray | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        children = [j.child for j in self.joints]
        if len(set(children)) != len(children):
            raise ValueError("a part can be driven by at most one joint")
        for c in children:
            if not 0 <= c < len(self.parts):
                raise ValueError(f"joint child index {c} out of range")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def check_articulation(self, articulation) -> np.ndarray:
        a = np.atleast_1d(np.asarray(articulation, dtype=np.float64))
        if a.shape != (self.n_joints,):
            raise ValueError(f"{self.name}: expected {self.n_joints} joint values, got {a.shape}")
        for v, j in zip(a, self.joints):
            if not j.range[0] - 1e-9 <= v <= j.range[1] + 1e-9:
                raise ValueError(f"{self.name}: joint value {v} outside range {j.range}")
        return a

    def part_poses(self, articulation) -> list[tuple[np.ndarray, np.ndarray]]:
        """World-from-local (R, t) per part, in design coordinates."""
        a = self.check_articulation(articulation)
        poses = [(p.rotation, p.translation) for p in self.parts]
        for v, j in zip(a, self.joints):
            R, t = j.transform(v)
            R0, t0 = poses[j.child]
            poses[j.child] = (R @ R0, R @ t0 + t)
        return poses

    def normalize(self, samples: int = 9) -> SceneSpec:
        """Fix ``center``/``scale`` so every articulation fits in the unit sphere."""
        grids = [np.linspace(j.range[0], j.range[1], samples) for j in self.joints]
        pts = []
        for combo in itertools.product(*grids) if grids else [()]:
            for part, (R, t) in zip(self.parts, self.part_poses(combo)):
                local = (part.corners() - part.translation) @ part.rotation
                pts.append(local @ R.T + t)
        pts = np.concatenate(pts)
        self.center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        self.scale = FIT_RADIUS / np.max(np.linalg.norm(pts - self.center, axis=1))
        return self

    def to_normalized(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) * self.scale

    def joint_spec(self, index: int = 0) -> dict:
        """Pivot, axis and split normal of a joint in normalized coordinates."""
        j = self.joints[index]
        return {"type": j.type, "pivot": self.to_normalized(j.pivot).tolist(), "axis": j.axis.tolist(),
                "split_normal": None if self.split_normal is None else list(map(float, self.split_normal))}

    def to_dict(self) -> dict:
        return {"name": self.name, "parts": [p.to_dict() for p in self.parts],
                "joints": [j.to_dict() for j in self.joints], "center": self.center.tolist(),
                "scale": float(self.scale),
                "split_normal": None if self.split_normal is None else list(map(float, self.split_normal))}

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        return cls(d["name"], [Part.from_dict(p) for p in d["parts"]], [Joint.from_dict(j) for j in d["joints"]],
                   d.get("center", (0, 0, 0)), float(d.get("scale", 1.0)), d.get("split_normal"))


def scene_sdf(spec: SceneSpec, articulation, x) -> tuple[np.ndarray, np.ndarray]:
    """Signed distance (normalized coordinates) and index of the nearest part."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, 3)
    design = flat / spec.scale + spec.center
    d = np.empty((len(spec.parts), len(flat)))
    for k, (part, (R, t)) in enumerate(zip(spec.parts, spec.part_poses(articulation))):
        d[k] = part.local_sdf((design - t) @ R)
    part_idx = np.argmin(d, axis=0)
    dist = d[part_idx, np.arange(len(flat))] * spec.scale
    return dist.reshape(x.shape[:-1]), part_idx.reshape(x.shape[:-1])


def scene_field(spec: SceneSpec, articulation) -> FunctionField:
    return FunctionField(lambda p: scene_sdf(spec, articulation, p)[0])


# -- built-in scenes ------------------------------------------------------
def _color(rng, lo=0.25, hi=0.95) -> np.ndarray:
    return rng.uniform(lo, hi, size=3)


def _box(center, half, radius, albedo) -> Part:
    half = np.asarray(half, dtype=np.float64) - radius
    return Part("rounded_box", {"half_extents": half.tolist(), "radius": float(radius)},
                translation=center, albedo=albedo)


def laptop(rng=None, angle_range=(30.0, 90.0), albedos=None) -> SceneSpec:
    """Base slab plus a lid hinged on the back edge; 0 degrees is closed."""
    rng = np.random.default_rng(rng)
    w, dp = rng.uniform(1.0, 1.3), rng.uniform(0.7, 0.9)
    th = rng.uniform(0.05, 0.08)
    tl = th * rng.uniform(0.6, 0.8)
    r = 0.015
    base_col, lid_col = albedos if albedos is not None else (_color(rng), _color(rng))
    base = _box((0.0, th / 2, 0.0), (w / 2, th / 2, dp / 2), r, base_col)
    lid = _box((0.0, th + tl / 2, 0.0), (w / 2, tl / 2, dp / 2), r, lid_col)
    # rotating about -x lifts the front edge of the lid
    hinge = Joint("revolute", (-1.0, 0.0, 0.0), 1, angle_range, pivot=(0.0, th, -dp / 2))
    return SceneSpec("laptop", [base, lid], [hinge], split_normal=(0.0, 1.0, 0.0)).normalize()


def _shell(w, h, dp, wall, col) -> list[Part]:
    """Open-front box made of five panels centred at the origin."""
    r = 0.01
    return [
        _box((0, -h / 2 + wall / 2, 0), (w / 2, wall / 2, dp / 2), r, col),
        _box((0, h / 2 - wall / 2, 0), (w / 2, wall / 2, dp / 2), r, col),
        _box((-w / 2 + wall / 2, 0, 0), (wall / 2, h / 2, dp / 2), r, col),
        _box((w / 2 - wall / 2, 0, 0), (wall / 2, h / 2, dp / 2), r, col),
        _box((0, 0, -dp / 2 + wall / 2), (w / 2, h / 2, wall / 2), r, col),
    ]


def drawer(rng=None, albedos=None) -> SceneSpec:
    rng = np.random.default_rng(rng)
    w, h, dp = rng.uniform(0.8, 1.1), rng.uniform(0.5, 0.7), rng.uniform(0.7, 0.9)
    wall = 0.05
    shell_col, drawer_col = albedos if albedos is not None else (_color(rng), _color(rng))
    parts = _shell(w, h, dp, wall, shell_col)
    inner = np.array([w / 2 - wall - 0.01, h / 2 - wall - 0.01, dp / 2 - wall / 2])
    parts.append(_box((0.0, 0.0, wall / 2), inner, 0.01, drawer_col))
    slide = Joint("prismatic", (0.0, 0.0, 1.0), len(parts) - 1, (0.0, 0.6 * dp))
    return SceneSpec("drawer", parts, [slide]).normalize()


def cabinet(rng=None, albedos=None) -> SceneSpec:
    """Upper door on a vertical hinge and a lower sliding drawer."""
    rng = np.random.default_rng(rng)
    w, h, dp = rng.uniform(0.7, 0.9), rng.uniform(1.0, 1.3), rng.uniform(0.5, 0.7)
    wall = 0.05
    body_col, door_col = albedos if albedos is not None else (_color(rng), _color(rng))
    parts = _shell(w, h, dp, wall, body_col)
    parts.append(_box((0, 0, 0), (w / 2, wall / 2, dp / 2), 0.01, body_col))  # shelf
    door = _box((0.0, h / 4, dp / 2 + 0.02), (w / 2, h / 4, 0.02), 0.01, door_col)
    parts.append(door)
    hinge = Joint("revolute", (0.0, 1.0, 0.0), len(parts) - 1, (0.0, 90.0), pivot=(-w / 2, h / 4, dp / 2))
    inner = np.array([w / 2 - wall - 0.01, h / 4 - wall, dp / 2 - wall / 2])
    parts.append(_box((0.0, -h / 4, wall / 2), inner, 0.01, door_col))
    slide = Joint("prismatic", (0.0, 0.0, 1.0), len(parts) - 1, (0.0, 0.5 * dp))
    return SceneSpec("cabinet", parts, [hinge, slide]).normalize()


BUILDERS = {"laptop": laptop, "drawer": drawer, "cabinet": cabinet}


def build_scene(name: str, rng=None, **kwargs) -> SceneSpec:
    if name not in BUILDERS:
        raise ValueError(f"unknown scene {name!r}; choose from {sorted(BUILDERS)}")
    return BUILDERS[name](rng, **kwargs)


def articulation_grid(spec: SceneSpec, states_per_joint: int) -> list[np.ndarray]:
    """Equally spaced values over each joint range, all combinations."""
    if states_per_joint < 1:
        raise ValueError("need at least one state per joint")
    grids = [np.linspace(j.range[0], j.range[1], states_per_joint) for j in spec.joints]
    return [np.array(c) for c in itertools.product(*grids)]


# -- cameras ----------------------------------------------------------------
PHI = (1.0 + 5.0 ** 0.5) / 2.0


def _cyclic(points) -> list:
    out = []
    for p in points:
        for k in range(3):
            out.append(np.roll(p, k))
    return out


def _signed(base) -> list:
    base = np.asarray(base, dtype=np.float64)
    nz = np.nonzero(base)[0]
    out = []
    for signs in itertools.product((-1.0, 1.0), repeat=len(nz)):
        p = base.copy()
        p[nz] *= signs
        out.append(p)
    return out


def polyhedron_vertices(count: int) -> np.ndarray:
    """Unit-norm vertices of a vertex-transitive polyhedron with ``count`` vertices."""
    if count == 4:
        v = [p for p in _signed((1, 1, 1)) if np.prod(p) > 0]
    elif count == 6:
        v = _cyclic([(1, 0, 0), (-1, 0, 0)])
    elif count == 8:
        v = _signed((1, 1, 1))
    elif count == 12:
        v = _cyclic(_signed((0, 1, PHI)))
    elif count == 20:
        v = _signed((1, 1, 1)) + _cyclic(_signed((0, 1 / PHI, PHI)))
    elif count == 60:
        # rhombicosidodecahedron
        v = (_cyclic(_signed((1, 1, PHI ** 3))) + _cyclic(_signed((PHI ** 2, PHI, 2 * PHI)))
             + _cyclic(_signed((2 + PHI, 0, PHI ** 2))))
    else:
        raise ValueError(f"no camera polyhedron with {count} vertices (use 4, 6, 8, 12, 20 or 60)")
    v = np.array(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def default_focal(width: int, height: int, radius: float) -> float:
    """Focal length that makes the unit sphere span the shorter image side."""
    half = np.arcsin(min(1.0 / radius, 1.0))
    return 0.5 * min(width, height) / np.tan(half)


def place_cameras(count: int, seed: int, radius: float = 3.0, width: int = 64, height: int = 48,
                  focal: float | None = None) -> list[Camera]:
    """Cameras on a randomly rotated polyhedron, all looking at the origin."""
    if radius <= 1.0:
        raise ValueError("camera radius must exceed the unit scene sphere")
    rot = Rotation.random(random_state=np.random.default_rng(seed)).as_matrix()
    eyes = polyhedron_vertices(count) @ rot.T * radius
    f = default_focal(width, height, radius) if focal is None else focal
    # camera y points down in the image, so "up" is world -y
    return [Camera.look_at(e, up=(0.0, -1.0, 0.0), fx=f, fy=f, width=width, height=height) for e in eyes]


# -- reference rendering ----------------------------------------------------
REFERENCE_SETTINGS = RenderSettings(sphere_trace_iters=128, eps_hit=1e-6, n_ray_samples=256,
                                    secant_iters=30, scene_bound_radius=1.0)


def render_reference(spec: SceneSpec, articulation, camera: Camera,
                     resolution: tuple[int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Headlight-Lambertian render and binary mask of the analytic scene."""
    if resolution is not None and tuple(resolution) != (camera.width, camera.height):
        sx, sy = resolution[0] / camera.width, resolution[1] / camera.height
        camera = Camera(camera.fx * sx, camera.fy * sy, (camera.cx + 0.5) * sx - 0.5, (camera.cy + 0.5) * sy - 0.5,
                        camera.rotation, camera.translation, resolution[0], resolution[1])
    field_ = scene_field(spec, articulation)
    rays = generate_rays(camera, camera.all_pixels(), REFERENCE_SETTINGS.scene_bound_radius)
    hits = trace_first_intersection(rays, field_, REFERENCE_SETTINGS)
    rgb = np.zeros((len(rays), 3))
    h = np.nonzero(hits.hit)[0]
    if h.size:
        _, part = scene_sdf(spec, articulation, hits.points[h])
        albedo = np.stack([p.albedo for p in spec.parts])[part]
        shade = np.maximum(0.0, -np.einsum("ij,ij->i", hits.normals[h], rays.directions[h]))
        rgb[h] = albedo * shade[:, None]
    mask = hits.hit.astype(np.float64)
    return rgb.reshape(camera.height, camera.width, 3), mask.reshape(camera.height, camera.width)


# -- dataset export ---------------------------------------------------------
def format_camera(cam: Camera) -> str:
    vals = list(cam.intrinsics().ravel()) + list(cam.world_from_camera().ravel())
    return " ".join(repr(float(v)) for v in vals) + f" {cam.width} {cam.height}"


def write_cameras(path, cameras: list[Camera]) -> None:
    lines = ["# view K(3x3 row-major) world_from_camera(4x4 row-major) width height"]
    lines += [f"{k} " + format_camera(c) for k, c in enumerate(cameras)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cameras(path) -> list[Camera]:
    cams = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 28:
            raise ValueError(f"{path}: camera line needs 28 fields, found {len(tok)}")
        vals = np.array([float(t) for t in tok[1:26]])
        cams.append(Camera.from_matrices(vals[:9].reshape(3, 3), vals[9:25].reshape(4, 4),
                                         int(tok[26]), int(tok[27])))
    return cams


def export_view_set(directory, spec: SceneSpec, articulation, cameras: list[Camera]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, cam in enumerate(cameras):
        rgb, mask = render_reference(spec, articulation, cam)
        write_ppm(d / f"view_{k:03d}.ppm", rgb)
        write_pgm(d / f"mask_{k:03d}.pgm", mask)
    write_cameras(d / "cameras.txt", cameras)


def export_dataset(specs: list[SceneSpec], articulations, cameras, out_dir, resolution=None,
                   view_sets: dict[str, list[Camera]] | None = None, category: str | None = None):
    """Render every (instance, state) and write the dataset tree.

    With ``view_sets`` each state directory holds one sub-directory per named
    camera set (used for held-out instances: inference and evaluation views);
    otherwise ``cameras`` are written directly in the state directory.
    Returns the loaded dataset index.
    """
    from .trainer import DatasetIndex

    if not specs:
        raise ValueError("need at least one scene instance")
    category = category or specs[0].name
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    if resolution is not None:
        w, h = resolution
        cameras = [_resized(c, w, h) for c in cameras]
        if view_sets:
            view_sets = {k: [_resized(c, w, h) for c in v] for k, v in view_sets.items()}
    manifest = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "category": category,
                "view_sets": sorted(view_sets) if view_sets else None, "instances": []}
    for i, spec in enumerate(specs):
        entry = {"id": f"instance_{i:03d}", "scene": spec.to_dict(), "states": []}
        for j, art in enumerate(articulations):
            art = spec.check_articulation(art)
            sdir = root / entry["id"] / f"state_{j:03d}"
            if view_sets:
                for name, cams in sorted(view_sets.items()):
                    export_view_set(sdir / name, spec, art, cams)
            else:
                export_view_set(sdir, spec, art, cameras)
            entry["states"].append({"id": f"state_{j:03d}", "articulation": art.tolist()})
        manifest["instances"].append(entry)
    (root / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return DatasetIndex.load(root, sorted(view_sets)[0] if view_sets else None)


def _resized(c: Camera, w: int, h: int) -> Camera:
    if (w, h) == (c.width, c.height):
        return c
    sx, sy = w / c.width, h / c.height
    return Camera(c.fx * sx, c.fy * sy, (c.cx + 0.5) * sx - 0.5, (c.cy + 0.5) * sy - 0.5,
                  c.rotation, c.translation, w, h)


def generate(scene: str, instances: int, states: int, views: int, resolution=(64, 48), seed: int = 0,
             out_dir="data", holdout: int = 0, infer_views: int = 6, eval_views: int = 4,
             camera_radius: float = 3.0):
    """Training tree at ``out_dir`` plus an optional held-out tree at ``out_dir/holdout``."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=instances + holdout + 3)
    specs = [build_scene(scene, int(s)) for s in seeds[:instances + holdout]]
    arts = articulation_grid(specs[0], states)
    w, h = resolution
    cams = place_cameras(views, int(seeds[-3]), camera_radius, w, h)
    train = export_dataset(specs[:instances], arts, cams, out_dir, category=scene)
    held = None
    if holdout:
        sets = {"infer": place_cameras(infer_views, int(seeds[-2]), camera_radius, w, h),
                "eval": place_cameras(eval_views, int(seeds[-1]), camera_radius, w, h)}
        held = export_dataset(specs[instances:], arts, None, Path(out_dir) / "holdout",
                              view_sets=sets, category=scene)
    return train, held
