"""Mesh extraction, surface sampling, metrics and articulation-angle measurement."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataFormatError

DEFAULT_BOUNDS = (-1.2, 1.2)
N_SURFACE_SAMPLES = 30000


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def cleanup(self, min_area: float = 1e-14) -> TriMesh:
        """Drop zero-area triangles and unreferenced vertices."""
        tris = self.triangles[self.triangle_areas() > min_area]
        used, inverse = np.unique(tris, return_inverse=True)
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3))

    def edge_use_counts(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return bool(len(self.triangles)) and bool(np.all(self.edge_use_counts() == 2))


# -- marching cubes ------------------------------------------------------------
# corner k sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1) in its cell
_CORNERS = np.array([(k & 1, (k >> 1) & 1, (k >> 2) & 1) for k in range(8)])
_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
_EDGE_INDEX = {e: n for n, e in enumerate(_EDGES)}


def _faces():
    """Corner cycles of the six cell faces, counter-clockwise seen from outside."""
    faces = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for side in (0, 1):
            ring = []
            for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                off = [0, 0, 0]
                off[axis], off[u], off[v] = side, du, dv
                ring.append(off[0] | off[1] << 1 | off[2] << 2)
            p = _CORNERS[ring].astype(float)
            outward = np.zeros(3)
            outward[axis] = 1.0 if side else -1.0
            if np.cross(p[1] - p[0], p[2] - p[1]) @ outward < 0:
                ring = ring[::-1]
            faces.append(ring)
    return faces


def _fan_order(loop: list[int], face_edges: list[set]) -> list[int]:
    """Rotate ``loop`` so no fan diagonal joins two edges of one cell face.

    Such a diagonal lies in the face and the neighbouring cell may emit the
    same segment, which leaves an edge shared by four triangles.
    """
    n = len(loop)
    for apex in range(n):
        rot = loop[apex:] + loop[:apex]
        if not any(rot[0] in f and rot[k] in f for k in range(2, n - 1) for f in face_edges):
            return rot
    return loop


@lru_cache(maxsize=1)
def case_table() -> tuple[tuple[tuple[int, int, int], ...], ...]:
    """Triangles (as cell-edge index triples) for all 256 inside/outside cases.

    Built by walking each face: every entry into the inside region along the
    face's boundary is joined to the next exit.  This separates inside corners
    on ambiguous faces, and since neighbouring cells see a shared face the same
    way, the resulting meshes are closed.
    """
    faces = _faces()
    face_edges = [{_EDGE_INDEX[tuple(sorted((r[n], r[(n + 1) % 4])))] for n in range(4)} for r in faces]
    table = []
    for case in range(256):
        inside = [(case >> k) & 1 for k in range(8)]
        nxt = {}
        for ring in faces:
            crossings = []
            for n in range(4):
                a, b = ring[n], ring[(n + 1) % 4]
                if inside[a] != inside[b]:
                    crossings.append((_EDGE_INDEX[tuple(sorted((a, b)))], "enter" if inside[b] else "exit"))
            for n, (edge, kind) in enumerate(crossings):
                if kind == "enter":
                    nxt[edge] = crossings[(n + 1) % len(crossings)][0]
        tris = []
        remaining = dict(nxt)
        while remaining:
            start = min(remaining)
            loop = [start]
            e = remaining.pop(start)
            while e != start:
                loop.append(e)
                e = remaining.pop(e)
            loop = _fan_order(loop, face_edges)
            for k in range(1, len(loop) - 1):
                tris.append((loop[0], loop[k], loop[k + 1]))
        table.append(tuple(tris))
    return tuple(table)


@lru_cache(maxsize=1)
def _table_arrays():
    table = case_table()
    width = max(len(t) for t in table)
    arr = np.full((256, width, 3), -1, dtype=np.int64)
    for c, tris in enumerate(table):
        if tris:
            arr[c, :len(tris)] = tris
    counts = np.array([len(t) for t in table])
    return arr, counts


def marching_cubes_grid(values: np.ndarray, origin, spacing) -> TriMesh:
    """Zero level set of samples on a regular grid (inside is ``values < 0``)."""
    f = np.asarray(values, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) < 2:
        raise ValueError("need a 3-D grid with at least 2 samples per axis")
    origin = np.broadcast_to(np.asarray(origin, dtype=np.float64), (3,))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    nx, ny, nz = f.shape
    inside = f < 0.0
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(_CORNERS):
        case |= inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << k
    arr, counts = _table_arrays()
    cells = np.nonzero(counts[case] > 0)
    if cells[0].size == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cell_case = case[cells]
    cell_pos = np.stack(cells, axis=1)
    # global id of an edge: (axis, base grid point)
    edge_axis = np.array([int(np.log2(a ^ b)) for a, b in _EDGES])
    edge_base = np.array([_CORNERS[a] for a, _ in _EDGES])
    tri_local = arr[cell_case]  # (C, T, 3)
    valid = tri_local[:, :, 0] >= 0
    ci, ti = np.nonzero(valid)
    local = tri_local[ci, ti]  # (F, 3)
    base = cell_pos[ci][:, None, :] + edge_base[local]
    gid = ((edge_axis[local] * nx + base[..., 0]) * ny + base[..., 1]) * nz + base[..., 2]
    uniq, inverse = np.unique(gid.ravel(), return_inverse=True)
    ax = uniq // (nx * ny * nz)
    rest = uniq % (nx * ny * nz)
    p0 = np.stack([rest // (ny * nz), (rest // nz) % ny, rest % nz], axis=1)
    p1 = p0 + np.eye(3, dtype=np.int64)[ax]
    f0 = f[p0[:, 0], p0[:, 1], p0[:, 2]]
    f1 = f[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = f0 / (f0 - f1)
    verts = origin + (p0 + t[:, None] * (p1 - p0)) * spacing
    return TriMesh(verts, inverse.reshape(-1, 3)).cleanup()


def grid_points(resolution: int, bounds=DEFAULT_BOUNDS) -> tuple[np.ndarray, float]:
    lo, hi = bounds
    axis = np.linspace(lo, hi, resolution)
    return axis, (hi - lo) / (resolution - 1)


def marching_cubes(sdf, resolution: int = 64, bounds=DEFAULT_BOUNDS, slab: int = 8) -> TriMesh:
    """Mesh the zero level set of ``sdf`` (maps (N, 3) points to (N,) values)."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    axis, h = grid_points(resolution, bounds)
    values = np.empty((resolution,) * 3)
    yy, zz = np.meshgrid(axis, axis, indexing="ij")
    for s in range(0, resolution, slab):
        xs = axis[s:s + slab]
        pts = np.stack(np.broadcast_arrays(xs[:, None, None], yy[None], zz[None]), axis=-1).reshape(-1, 3)
        values[s:s + slab] = np.asarray(sdf(pts), dtype=np.float64).reshape(len(xs), resolution, resolution)
    return marching_cubes_grid(values, (bounds[0],) * 3, h)


def model_mesh(model, theta, psi, resolution: int = 64, bounds=DEFAULT_BOUNDS) -> TriMesh:
    from .fields import sdf_np

    return marching_cubes(lambda p: sdf_np(model, p, theta, psi), resolution, bounds)


# -- sampling and metrics ------------------------------------------------------
def sample_mesh_points(mesh: TriMesh, n: int = N_SURFACE_SAMPLES, seed=0) -> np.ndarray:
    """Area-weighted uniform samples on the surface."""
    return _sample_surface(mesh, n, seed)[0]


def _sample_surface(mesh: TriMesh, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Samples and the index of the triangle each one lies on."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c, tri


def _check_cloud(p, name) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError(f"point cloud {name} is empty")
    return p


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def nearest_distances_brute(src: np.ndarray, dst: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(len(src))
    for s in range(0, len(src), chunk):
        diff = src[s:s + chunk, None, :] - dst[None, :, :]
        out[s:s + chunk] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return out


def chamfer_l1(a, b) -> float:
    """Mean of the two directed mean nearest-neighbour distances (unsquared)."""
    a, b = _check_cloud(a, "A"), _check_cloud(b, "B")
    return 0.5 * (float(nearest_distances(a, b).mean()) + float(nearest_distances(b, a).mean()))


def chamfer_l1_brute(a, b) -> float:
    a, b = _check_cloud(a, "A"), _check_cloud(b, "B")
    return 0.5 * (float(nearest_distances_brute(a, b).mean()) + float(nearest_distances_brute(b, a).mean()))


def psnr(image_a, image_b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give +inf."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty images")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def format_db(value: float) -> str:
    return "+inf" if np.isinf(value) and value > 0 else f"{value:.4f}"


# -- articulation angle ------------------------------------------------------------
@dataclass
class AngleMeasurement:
    degrees: float
    low_confidence: bool
    n_fixed: int
    n_moving: int


def _plane_fit(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c, full_matrices=False)
    flatness = s[2] / max(s[1], 1e-12)
    return c, vt[2], flatness


def _slab_normal(n0: np.ndarray, pts: np.ndarray, normals: np.ndarray, max_deg: float = 30.0) -> np.ndarray:
    """Refine a fitted plane normal of a thin part using its two broad faces.

    A single point fit is tilted by end caps and by uneven coverage of the two
    faces.  Surface normals pick out the points of each broad face; a plane is
    fitted to each face separately and the two normals are averaged.  Mesh
    normals themselves are not averaged: on slabs about a voxel thick they
    lean toward the grid axes.
    """
    for _ in range(2):
        dots = normals @ n0
        acc = np.zeros(3)
        for sign in (1.0, -1.0):
            face = pts[sign * dots > np.cos(np.radians(max_deg))]
            if len(face) < 10:
                continue
            _, n, _ = _plane_fit(face)
            acc += n if n @ n0 > 0 else -n
        if not acc.any():
            break
        n0 = acc / np.linalg.norm(acc)
    return n0


def measure_opening_angle(mesh_or_points, joint_spec: dict, n_points: int = N_SURFACE_SAMPLES, seed=0,
                          margin: float = 0.02, hinge_exclusion: float = 0.1,
                          parallel_deg: float = 10.0) -> AngleMeasurement:
    """Dihedral angle between the parts on either side of a revolute joint.

    Points within ``hinge_exclusion`` of the hinge line or within ``margin``
    of the pivot plane (normal ``split_normal`` through ``pivot``) are
    dropped; the rest are split by side, a plane is fitted to each half and
    the angle between the two half-planes, measured around the hinge axis,
    is returned (0 = folded shut, 180 = flat).
    """
    normals = None
    if isinstance(mesh_or_points, TriMesh):
        pts, tri = _sample_surface(mesh_or_points, n_points, seed)
        v = mesh_or_points.vertices[mesh_or_points.triangles[tri]]
        normals = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    else:
        pts = _check_cloud(mesh_or_points, "points")
    pivot = np.asarray(joint_spec["pivot"], dtype=np.float64)
    axis = np.asarray(joint_spec["axis"], dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    normal = np.asarray(joint_spec["split_normal"], dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    q = pts - pivot
    q_perp = q - np.outer(q @ axis, axis)
    far = np.linalg.norm(q_perp, axis=1) > hinge_exclusion
    side = q @ normal
    sel_fixed, sel_moving = far & (side < -margin), far & (side > margin)
    fixed, moving = pts[sel_fixed], pts[sel_moving]
    if len(fixed) < 10 or len(moving) < 10:
        return AngleMeasurement(float("nan"), True, len(fixed), len(moving))
    directions, plane_normals = [], []
    for part, sel in ((fixed, sel_fixed), (moving, sel_moving)):
        c, n, _ = _plane_fit(part)
        if normals is not None:
            n = _slab_normal(n, part, normals[sel])
        d = np.cross(n, axis)
        norm = np.linalg.norm(d)
        if norm < 1e-6:
            d = (c - pivot) - ((c - pivot) @ axis) * axis
            norm = np.linalg.norm(d)
        d /= norm
        if d @ (c - pivot) < 0:
            d = -d
        directions.append(d)
        plane_normals.append(n)
    cos = float(np.clip(directions[0] @ directions[1], -1.0, 1.0))
    deg = float(np.degrees(np.arccos(cos)))
    parallel = abs(float(plane_normals[0] @ plane_normals[1])) > np.cos(np.radians(parallel_deg))
    return AngleMeasurement(deg, parallel, len(fixed), len(moving))


# -- file formats ---------------------------------------------------------------------
def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_obj(path) -> TriMesh:
    verts, tris = [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{n}: {exc}") from exc
    try:
        return TriMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_xyz(points, path) -> None:
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in np.asarray(points).tolist()))


def read_xyz(path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=2).reshape(-1, 3)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def load_points(path, n: int = N_SURFACE_SAMPLES, seed=0) -> np.ndarray:
    """Points from an .obj mesh (sampled) or an XYZ text file."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return sample_mesh_points(read_obj(path), n, seed)
    return read_xyz(path)
