"""Pinhole cameras, ray-surface intersection on signed distance fields, and
the differentiable pieces of surface rendering.

Pixel coordinates are continuous with integer values at pixel centres, so
pixel (u, v) covers [u - 0.5, u + 0.5) x [v - 0.5, v + 0.5).  Cameras follow
the computer-vision convention: x right, y down, z along the optical axis.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .fields import FieldModel, _vals, radiance, radiance_np, sdf, sdf_grad_np, sdf_np

GRAZING_EPS = 1e-8
BACKGROUND = np.zeros(3)


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3))) > 1e-9:
            raise ValueError("camera rotation is not orthonormal")
        self.width, self.height = int(self.width), int(self.height)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2].copy()

    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def world_from_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrices(cls, K, world_from_camera, width: int, height: int) -> Camera:
        K = np.asarray(K, dtype=np.float64)
        M = np.asarray(world_from_camera, dtype=np.float64)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], M[:3, :3], M[:3, 3], width, height)

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), *, fx: float, fy: float,
                width: int, height: int, cx: float | None = None, cy: float | None = None) -> Camera:
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(z, up)) > 0.99 * np.linalg.norm(up):
            up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z], axis=1)
        # re-orthonormalise to machine precision
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        cx = (width - 1) / 2.0 if cx is None else cx
        cy = (height - 1) / 2.0 if cy is None else cy
        return cls(fx, fy, cx, cy, R, eye, width, height)

    def all_pixels(self) -> np.ndarray:
        """(H*W, 2) pixel centres in row-major order, columns (u, v)."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)


@dataclass
class Rays:
    origins: np.ndarray
    directions: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    in_bounds: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def subset(self, idx) -> Rays:
        return Rays(self.origins[idx], self.directions[idx], self.t_near[idx], self.t_far[idx],
                    self.in_bounds[idx])

    def at(self, t) -> np.ndarray:
        t = np.asarray(t)
        return self.origins + t[..., None] * self.directions if t.ndim == 1 else \
            self.origins[:, None, :] + t[..., None] * self.directions[:, None, :]


@dataclass
class RenderSettings:
    sphere_trace_iters: int = 32
    eps_hit: float = 5e-5
    n_ray_samples: int = 100
    secant_iters: int = 8
    scene_bound_radius: float = 3.0

    def __post_init__(self):
        if min(self.sphere_trace_iters, self.n_ray_samples, self.secant_iters) < 1:
            raise ValueError("render iteration/sample counts must be >= 1")
        if self.eps_hit <= 0:
            raise ValueError("eps_hit must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SurfaceHits:
    hit: np.ndarray
    t0: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    gradients: np.ndarray
    min_sdf: np.ndarray
    min_t: np.ndarray

    def __len__(self) -> int:
        return len(self.hit)


class ScalarField(Protocol):
    def values(self, x: np.ndarray) -> np.ndarray: ...

    def gradients(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class LearnedField:
    """Adapter exposing a field model with fixed codes to the tracer."""

    def __init__(self, model: FieldModel, theta, psi):
        self.model = model
        self.theta = _vals(theta)
        self.psi = _vals(psi)

    def values(self, x):
        return sdf_np(self.model, x, self.theta, self.psi)

    def gradients(self, x):
        return sdf_grad_np(self.model, x, self.theta, self.psi)


class FunctionField:
    """Adapter for a plain callable, gradients by central differences."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], grad_fn=None, h: float = 1e-6):
        self.fn = fn
        self.grad_fn = grad_fn
        self.h = h

    def values(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=np.float64).reshape(-1, 3)), dtype=np.float64)

    def gradients(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        f = self.values(x)
        if self.grad_fn is not None:
            return f, np.asarray(self.grad_fn(x), dtype=np.float64)
        g = np.empty_like(x)
        for k in range(3):
            e = np.zeros(3)
            e[k] = self.h
            g[:, k] = (self.values(x + e) - self.values(x - e)) / (2 * self.h)
        return f, g


# -- rays ------------------------------------------------------------------
def bound_interval(origins: np.ndarray, directions: np.ndarray, radius: float):
    """Entry/exit of rays through the origin-centred sphere of ``radius``."""
    b = np.einsum("ij,ij->i", origins, directions)
    c = np.einsum("ij,ij->i", origins, origins) - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = np.maximum(-b - root, 0.0)
    t_far = -b + root
    inside = (disc > 0.0) & (t_far > t_near)
    closest = np.maximum(-b, 0.0)
    t_near = np.where(inside, t_near, closest)
    t_far = np.where(inside, t_far, closest)
    return t_near, t_far, inside


def generate_rays(camera: Camera, pixels, bound_radius: float = 3.0) -> Rays:
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = px[:, 0], px[:, 1]
    bad = (u < -0.5) | (u >= camera.width - 0.5) | (v < -0.5) | (v >= camera.height - 0.5)
    if np.any(bad):
        first = px[np.argmax(bad)]
        raise ValueError(f"pixel {tuple(first)} outside {camera.width}x{camera.height} image")
    d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=1)
    d = d_cam @ camera.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.translation, d.shape).copy()
    t_near, t_far, inside = bound_interval(o, d, bound_radius)
    return Rays(o, d, t_near, t_far, inside)


# -- tracing -----------------------------------------------------------------
# offsets eps_hit * 2**k, k = 1..12, reach about 0.2 for the default eps_hit
PROBE_GROWTH, PROBE_STEPS = 2.0, 12
# gaps between positive dense samples are searched for hidden crossings
# assuming the field's gradient norm stays below LIPSCHITZ_GUESS
LIPSCHITZ_GUESS, GAP_SPLIT, GAP_MIN_WIDTH = 2.0, 8, 2.5e-4


def _sphere_trace(rays: Rays, field: ScalarField, settings: RenderSettings):
    n = len(rays)
    t = rays.t_near.copy()
    converged = np.zeros(n, dtype=bool)
    active = rays.in_bounds.copy()
    for _ in range(settings.sphere_trace_iters):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        f = field.values(rays.origins[idx] + t[idx, None] * rays.directions[idx])
        done = np.abs(f) < settings.eps_hit
        converged[idx[done]] = True
        overshoot = (f < 0.0) & ~done
        step = ~done & ~overshoot
        t[idx[step]] += f[step]
        exited = t[idx] > rays.t_far[idx]
        active[idx[done | overshoot | exited]] = False
    return t, converged


def _dense_samples(rays: Rays, field: ScalarField, n_samples: int, subset=None):
    idx = np.arange(len(rays)) if subset is None else subset
    frac = np.linspace(0.0, 1.0, n_samples) if n_samples > 1 else np.array([0.5])
    ts = rays.t_near[idx, None] + (rays.t_far[idx] - rays.t_near[idx])[:, None] * frac[None, :]
    pts = rays.origins[idx, None, :] + ts[..., None] * rays.directions[idx, None, :]
    fs = field.values(pts.reshape(-1, 3)).reshape(ts.shape)
    return ts, fs


def _secant(rays: Rays, field: ScalarField, idx, lo, hi, f_lo, f_hi, iters: int):
    """Illinois-style regula falsi on brackets with f(lo) > 0 > f(hi)."""
    lo, hi, f_lo, f_hi = lo.copy(), hi.copy(), f_lo.copy(), f_hi.copy()
    side = np.zeros(len(idx), dtype=np.int8)
    t = lo.copy()
    o, d = rays.origins[idx], rays.directions[idx]
    for _ in range(iters):
        # f_hi < 0 < f_lo always holds, so the denominator is never zero
        t = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        f = field.values(o + t[:, None] * d)
        neg = f < 0.0
        # an endpoint retained twice in a row gets its value halved
        f_lo_new = np.where(neg, np.where(side == -1, 0.5 * f_lo, f_lo), f)
        f_hi_new = np.where(neg, f, np.where(side == 1, 0.5 * f_hi, f_hi))
        lo = np.where(neg, lo, t)
        hi = np.where(neg, t, hi)
        f_lo, f_hi = f_lo_new, f_hi_new
        side = np.where(neg, -1, 1).astype(np.int8)
    return t


def _confirm_crossing(rays: Rays, field: ScalarField, idx, t_st, settings: RenderSettings) -> np.ndarray:
    """Whether each converged sphere-tracing endpoint is a real sign change.

    A tracer can settle within ``eps_hit`` of a surface it only grazes.
    Endpoints with f >= 0 probe ahead at geometrically growing offsets; the
    first negative probe is refined by secant steps and replaces ``t_st``
    in place, and endpoints with no negative probe are rejected.
    """
    ok = np.zeros(len(idx), dtype=bool)
    t = t_st[idx]
    valid = np.isfinite(t) & (t <= rays.t_far[idx])
    sub = np.nonzero(valid)[0]
    if sub.size == 0:
        return ok
    o, d = rays.origins[idx[sub]], rays.directions[idx[sub]]
    f0 = field.values(o + t[sub, None] * d)
    ok[sub[f0 < 0.0]] = True
    lo, f_lo = t[sub].copy(), f0.copy()
    hi, f_hi = np.full(sub.size, np.nan), np.full(sub.size, np.nan)
    pending = f0 >= 0.0
    for k in range(1, PROBE_STEPS + 1):
        p = np.nonzero(pending)[0]
        if p.size == 0:
            break
        tp = t[sub[p]] + settings.eps_hit * PROBE_GROWTH ** k
        fp = field.values(o[p] + tp[:, None] * d[p])
        neg = fp < 0.0
        hi[p[neg]], f_hi[p[neg]] = tp[neg], fp[neg]
        lo[p[~neg]], f_lo[p[~neg]] = tp[~neg], fp[~neg]
        pending[p[neg]] = False
    found = np.nonzero(np.isfinite(hi))[0]
    if found.size:
        t_ref = _secant(rays, field, idx[sub[found]], lo[found], hi[found], f_lo[found], f_hi[found],
                        settings.secant_iters)
        t_st[idx[sub[found]]] = t_ref
        ok[sub[found]] = True
    return ok


def _refine_gaps(rays: Rays, field: ScalarField, didx, ts, fs, t_cand, lipschitz: float = LIPSCHITZ_GUESS,
                 split: int = GAP_SPLIT, min_width: float = GAP_MIN_WIDTH):
    """Earliest bracket hidden between two positive samples, per ray.

    Two samples ``fa, fb > 0`` a distance ``w`` apart can enclose a crossing
    only if ``fa + fb < L w`` for a field with gradient norm at most ``L``.
    Such gaps ahead of ``t_cand`` are split into ``split`` pieces, level by
    level, until they are narrower than ``min_width``.  Returns rows into
    ``didx`` with their brackets (lo, hi, f_lo, f_hi).
    """
    rows, k = np.nonzero((fs[:, :-1] > 0.0) & (fs[:, 1:] > 0.0) & (ts[:, :-1] < t_cand[:, None])
                         & (fs[:, :-1] + fs[:, 1:] < lipschitz * (ts[:, 1:] - ts[:, :-1])))
    a, b = ts[rows, k], ts[rows, k + 1]
    fa, fb = fs[rows, k], fs[rows, k + 1]
    best = t_cand.copy()
    found = {}
    frac = np.linspace(0.0, 1.0, split + 1)
    while rows.size and np.max(b - a) > min_width:
        keep = a < best[rows]
        rows, a, b, fa, fb = rows[keep], a[keep], b[keep], fa[keep], fb[keep]
        if rows.size == 0:
            break
        sub_t = a[:, None] + (b - a)[:, None] * frac[None, :]
        inner = sub_t[:, 1:-1]
        r = didx[rows]
        pts = rays.origins[r, None, :] + inner[..., None] * rays.directions[r, None, :]
        f_in = field.values(pts.reshape(-1, 3)).reshape(inner.shape)
        sub_f = np.concatenate([fa[:, None], f_in, fb[:, None]], axis=1)
        neg = sub_f < 0.0
        has = neg.any(axis=1)
        for g in np.nonzero(has)[0]:
            j = int(np.argmax(neg[g]))
            lo, hi = sub_t[g, j - 1], sub_t[g, j]
            row = int(rows[g])
            if lo < best[row]:
                best[row] = lo
                found[row] = (lo, hi, sub_f[g, j - 1], sub_f[g, j])
        # gaps between positive sub-samples that still cannot be excluded
        ok = ~has
        sa, sb = sub_t[ok, :-1], sub_t[ok, 1:]
        fa2, fb2 = sub_f[ok, :-1], sub_f[ok, 1:]
        gi, gk = np.nonzero(fa2 + fb2 < lipschitz * (sb - sa))
        rows = rows[ok][gi]
        a, b, fa, fb = sa[gi, gk], sb[gi, gk], fa2[gi, gk], fb2[gi, gk]
    sel = np.array(sorted(found), dtype=np.int64)
    if sel.size == 0:
        return sel, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0)
    lo, hi, f_lo, f_hi = (np.array([found[int(i)][c] for i in sel]) for c in range(4))
    return sel, lo, hi, f_lo, f_hi


def trace_first_intersection(rays: Rays, field: ScalarField, settings: RenderSettings,
                             need_dense=None) -> SurfaceHits:
    """First surface crossing along every ray.

    Sphere tracing proposes a hit; ``n_ray_samples`` uniform samples over the
    ray's bounded interval give ``min_sdf`` and detect any earlier sign change
    the tracer stepped over, which is then refined by secant steps.  The
    samples sit at fixed fractions of the interval, so the minimising sample
    does not move when the field changes and ``min_sdf`` is differentiable
    through it.  A ray
    whose first sample is already inside has no entry point and is a miss.

    ``need_dense`` (boolean per ray) limits dense sampling to a subset when
    the caller does not need ``min_sdf`` for the rest; rays skipped this way
    rely on sphere tracing alone and report ``min_sdf = nan``.
    """
    n = len(rays)
    t_st, converged = _sphere_trace(rays, field, settings)
    cidx = np.nonzero(converged & rays.in_bounds)[0]
    converged[cidx] = _confirm_crossing(rays, field, cidx, t_st, settings)
    hit = np.zeros(n, dtype=bool)
    t0 = np.full(n, np.nan)
    min_sdf = np.full(n, np.nan)
    min_t = rays.t_near.copy()

    dense = rays.in_bounds.copy()
    if need_dense is not None:
        dense &= np.asarray(need_dense, dtype=bool) | ~converged
    didx = np.nonzero(dense)[0]

    # sphere-tracer hits are accepted unless dense sampling finds an earlier crossing
    st_only = rays.in_bounds & converged & ~dense
    hit[st_only] = True
    t0[st_only] = t_st[st_only]

    if didx.size:
        ts, fs = _dense_samples(rays, field, settings.n_ray_samples, didx)
        am = np.argmin(fs, axis=1)
        rows = np.arange(len(didx))
        min_sdf[didx] = fs[rows, am]
        min_t[didx] = ts[rows, am]
        inside = fs < 0.0
        first = np.where(inside.any(axis=1), np.argmax(inside, axis=1), -1)
        has_bracket = first >= 1
        st_hit = converged[didx]
        t_bracket = np.where(has_bracket, ts[rows, np.maximum(first, 0)], np.inf)
        use_st = st_hit & (t_bracket >= t_st[didx])
        use_sec = has_bracket & ~use_st
        hit[didx[use_st]] = True
        t0[didx[use_st]] = t_st[didx[use_st]]
        lo = np.full(len(didx), np.nan)
        hi, f_lo, f_hi = lo.copy(), lo.copy(), lo.copy()
        if np.any(use_sec):
            sel = np.nonzero(use_sec)[0]
            k = first[sel]
            lo[sel], hi[sel], f_lo[sel], f_hi[sel] = ts[sel, k - 1], ts[sel, k], fs[sel, k - 1], fs[sel, k]
        t_cand = np.where(use_st, t_st[didx], np.where(use_sec, lo, rays.t_far[didx]))
        g_rows, g_lo, g_hi, g_flo, g_fhi = _refine_gaps(rays, field, didx, ts, fs, t_cand)
        lo[g_rows], hi[g_rows], f_lo[g_rows], f_hi[g_rows] = g_lo, g_hi, g_flo, g_fhi
        sel = np.nonzero(np.isfinite(lo))[0]
        if sel.size:
            t_sec = _secant(rays, field, didx[sel], lo[sel], hi[sel], f_lo[sel], f_hi[sel], settings.secant_iters)
            hit[didx[sel]] = True
            t0[didx[sel]] = t_sec

    out = np.nonzero(~rays.in_bounds)[0]
    if out.size:
        min_t[out] = rays.t_near[out]
        min_sdf[out] = field.values(rays.origins[out] + min_t[out, None] * rays.directions[out])

    points = np.zeros((n, 3))
    normals = np.zeros((n, 3))
    grads = np.zeros((n, 3))
    hidx = np.nonzero(hit)[0]
    if hidx.size:
        points[hidx] = rays.origins[hidx] + t0[hidx, None] * rays.directions[hidx]
        _, g = field.gradients(points[hidx])
        grads[hidx] = g
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        normals[hidx] = g / np.where(gn > 0, gn, 1.0)
    return SurfaceHits(hit, t0, points, normals, grads, min_sdf, min_t)


def trace(rays: Rays, theta, psi, model: FieldModel, settings: RenderSettings, need_dense=None) -> SurfaceHits:
    return trace_first_intersection(rays, LearnedField(model, theta, psi), settings, need_dense)


def brute_force_first_hit(rays: Rays, field: ScalarField, n_samples: int = 2000,
                          bisection_iters: int = 50, block: int = 250) -> tuple[np.ndarray, np.ndarray]:
    """Reference intersection: dense sampling plus bisection, no sphere tracing.

    Samples are evaluated front to back in blocks and a ray stops once it
    has an inside sample; the result equals sampling everything up front.
    """
    n = len(rays)
    hit = np.zeros(n, dtype=bool)
    t0 = np.full(n, np.nan)
    frac = np.linspace(0.0, 1.0, n_samples) if n_samples > 1 else np.array([0.5])
    first = np.full(n, -1)
    active = rays.in_bounds.copy()
    for b0 in range(0, len(frac), block):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        fr = frac[b0:b0 + block]
        for s in range(0, idx.size, 256):
            sub = idx[s:s + 256]
            ts = rays.t_near[sub, None] + (rays.t_far[sub] - rays.t_near[sub])[:, None] * fr[None, :]
            pts = rays.origins[sub, None, :] + ts[..., None] * rays.directions[sub, None, :]
            inside = field.values(pts.reshape(-1, 3)).reshape(ts.shape) < 0.0
            found = inside.any(axis=1)
            first[sub[found]] = b0 + np.argmax(inside[found], axis=1)
            active[sub[found]] = False
    sel = np.nonzero(first >= 1)[0]
    if sel.size:
        span = rays.t_far[sel] - rays.t_near[sel]
        lo = rays.t_near[sel] + span * frac[first[sel] - 1]
        hi = rays.t_near[sel] + span * frac[first[sel]]
        o, d = rays.origins[sel], rays.directions[sel]
        for _ in range(bisection_iters):
            mid = 0.5 * (lo + hi)
            neg = field.values(o + mid[:, None] * d) < 0.0
            hi = np.where(neg, mid, hi)
            lo = np.where(neg, lo, mid)
        hit[sel] = True
        t0[sel] = 0.5 * (lo + hi)
    return hit, t0


# -- differentiable pieces ---------------------------------------------------
def differentiable_hit(rays: Rays, theta, psi, model, hits: SurfaceHits, idx=None):
    """Surface points as tape nodes via first-order implicit differentiation.

    x_hat = x0 - v / <grad f(x0), v> * (f(x0) - stop_grad(f(x0)))

    The value is x0 bit for bit; derivatives follow from f's dependence on
    network parameters and codes.  Returns (x_hat, kept) where ``kept``
    indexes the rays used; grazing rays are dropped.
    """
    idx = np.nonzero(hits.hit)[0] if idx is None else np.asarray(idx)
    if not np.all(hits.hit[idx]):
        raise ValueError("differentiable_hit called on rays without a surface hit")
    v = rays.directions[idx]
    denom = np.einsum("ij,ij->i", hits.gradients[idx], v)
    keep = np.abs(denom) >= GRAZING_EPS
    idx, v, denom = idx[keep], v[keep], denom[keep]
    x0 = hits.points[idx]
    f = sdf(Tensor(x0), theta, psi, model)
    residual = f - f.detach()
    step = Tensor(v / denom[:, None])
    xhat = Tensor(x0) - step * T.reshape(residual, (len(idx), 1))
    return xhat, idx


def soft_mask_logits(rays: Rays, theta, psi, model, hits: SurfaceHits, alpha: float, idx=None) -> Tensor:
    """-alpha * f at each ray's minimising sample, as tape nodes."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    idx = np.arange(len(rays)) if idx is None else np.asarray(idx)
    pts = rays.origins[idx] + hits.min_t[idx, None] * rays.directions[idx]
    return sdf(Tensor(pts), theta, psi, model) * (-alpha)


def soft_mask(rays: Rays, theta, psi, model, hits: SurfaceHits, alpha: float, idx=None) -> Tensor:
    return T.sigmoid(soft_mask_logits(rays, theta, psi, model, hits, alpha, idx))


def soft_mask_value(min_sdf, alpha: float) -> np.ndarray:
    return T._sigmoid_np(-alpha * np.asarray(min_sdf, dtype=np.float64))


# -- forward rendering -------------------------------------------------------
def render_rays(rays: Rays, theta, phi, psi, model: FieldModel, settings: RenderSettings,
                alpha: float = 50.0):
    """Colours, soft mask and hits for a ray batch; misses are background."""
    hits = trace(rays, theta, psi, model, settings)
    rgb = np.broadcast_to(BACKGROUND, (len(rays), 3)).copy()
    h = np.nonzero(hits.hit)[0]
    if h.size:
        rgb[h] = radiance_np(model, hits.points[h], hits.normals[h], rays.directions[h], phi)
    return rgb, soft_mask_value(hits.min_sdf, alpha), hits


def render_pixel(ray: Rays, theta, phi, psi, model: FieldModel, settings: RenderSettings) -> np.ndarray:
    rgb, _, _ = render_rays(ray, theta, phi, psi, model, settings)
    return rgb[0] if len(ray) == 1 else rgb


def render_image(camera: Camera, codes, model: FieldModel, settings: RenderSettings,
                 alpha: float = 50.0, threads: int = 1, chunk: int = 1024):
    """(H, W, 3) colour image and (H, W) soft mask for codes (theta, phi, psi)."""
    theta, phi, psi = codes
    rays = generate_rays(camera, camera.all_pixels(), settings.scene_bound_radius)
    starts = list(range(0, len(rays), chunk))

    def work(s):
        return render_rays(rays.subset(slice(s, s + chunk)), theta, phi, psi, model, settings, alpha)[:2]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    rgb = np.concatenate([p[0] for p in parts]).reshape(camera.height, camera.width, 3)
    mask = np.concatenate([p[1] for p in parts]).reshape(camera.height, camera.width)
    return rgb, mask
