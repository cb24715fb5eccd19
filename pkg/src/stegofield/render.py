"""Pinhole rays, stratified sampling, and emission-absorption compositing.

Camera convention: +x right, +y up, looking along -z, with a camera-to-world
matrix (the layout of the synthetic Blender datasets). A pixel color is the
transmittance-weighted sum of per-sample colors,

    C = sum_i T_i * (1 - exp(-tau_i * delta_i)) * c_i,
    T_i = exp(-sum_{j<i} tau_j * delta_j),

plus the residual transmittance times the background color.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .field import MODE_RADIANCE3D, StegoField, field_query_3d
from .keys import KeySet

_ORTHONORMAL_TOL = 1e-4


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: 4x4 camera-to-world pose, horizontal fov in radians."""

    c2w: np.ndarray
    fov_x: float
    width: int
    height: int
    near: float = 2.0
    far: float = 6.0

    def __post_init__(self):
        c2w = np.asarray(self.c2w, dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {c2w.shape}")
        rot = c2w[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise ValueError("rotation block of the pose is not orthonormal")
        if not 0.0 < self.fov_x < np.pi:
            raise ValueError(f"fov {self.fov_x} outside (0, pi)")
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got {self.near}, {self.far}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "c2w", c2w)

    @property
    def focal(self) -> float:
        return 0.5 * self.width / np.tan(0.5 * self.fov_x)

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


def generate_rays(camera: Camera, pixels: np.ndarray):
    """Rays through pixel centers. pixels: (B, 2) integer (row, col).

    Returns (origins (B,3), unit directions (B,3)).
    """
    px = np.asarray(pixels)
    if px.ndim != 2 or px.shape[1] != 2:
        raise ValueError(f"pixels must be (B, 2), got {px.shape}")
    rows, cols = px[:, 0].astype(np.float64), px[:, 1].astype(np.float64)
    if (np.any(px[:, 0] < 0) or np.any(px[:, 0] >= camera.height)
            or np.any(px[:, 1] < 0) or np.any(px[:, 1] >= camera.width)):
        raise ValueError("pixel outside image bounds")
    f = camera.focal
    dirs_cam = np.stack([
        (cols + 0.5 - 0.5 * camera.width) / f,
        -(rows + 0.5 - 0.5 * camera.height) / f,
        -np.ones_like(cols),
    ], axis=-1)
    rot = camera.c2w[:3, :3]
    dirs = dirs_cam @ rot.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.origin, dirs.shape).copy()
    return origins, dirs


def generate_ray(camera: Camera, pixel) -> Ray:
    """Single-pixel convenience wrapper around `generate_rays`."""
    origins, dirs = generate_rays(camera, np.asarray(pixel).reshape(1, 2))
    return Ray(origins[0], dirs[0])


def project_point(camera: Camera, point: np.ndarray) -> np.ndarray:
    """World point -> (row, col) pixel coordinates (pixel-center convention)."""
    p_cam = camera.c2w[:3, :3].T @ (np.asarray(point, dtype=np.float64) - camera.origin)
    if p_cam[2] >= 0:
        raise ValueError("point is behind the camera")
    f = camera.focal
    col = -f * p_cam[0] / p_cam[2] + 0.5 * camera.width - 0.5
    row = f * p_cam[1] / p_cam[2] + 0.5 * camera.height - 0.5
    return np.array([row, col])


def sample_along_ray(near, far, n: int, rng: np.random.Generator | None = None):
    """Stratified depths over [near, far]: one sample per equal bin.

    Without an rng the samples sit at bin midpoints. near/far may be scalars
    or per-ray arrays of shape (B,). Returns (ts, deltas), each (..., n); the
    last spacing uses the nominal bin width so midpoint spacing is constant.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if np.any(far <= near):
        raise ValueError("need near < far")
    width = (far - near)[..., None] / n
    edges = near[..., None] + width * np.arange(n)
    if rng is None:
        ts = edges + 0.5 * width
    else:
        ts = edges + width * rng.random(edges.shape)
    deltas = np.concatenate([np.diff(ts, axis=-1), width], axis=-1)
    return ts, deltas


def composite(colors: np.ndarray, densities: np.ndarray, deltas: np.ndarray):
    """Integrate per-sample colors and densities into a pixel color.

    Shapes: colors (..., n, 3), densities (..., n), deltas (..., n).
    Returns (color (..., 3), residual transmittance (...,)).
    """
    colors = np.asarray(colors)
    densities = np.asarray(densities)
    deltas = np.asarray(deltas)
    if colors.shape[:-1] != densities.shape or densities.shape != deltas.shape:
        raise ValueError("colors/densities/deltas length mismatch")
    if np.any(densities < 0):
        raise ValueError("densities must be non-negative")
    if np.any(deltas <= 0):
        raise ValueError("spacings must be positive")
    optical = densities * deltas
    accum = np.cumsum(optical, axis=-1)
    trans = np.exp(-(accum - optical))          # T_i, exclusive prefix
    alpha = -np.expm1(-optical)                 # 1 - exp(-tau*delta)
    weights = trans * alpha
    color = np.sum(weights[..., None] * colors, axis=-2)
    residual = np.exp(-accum[..., -1])
    return color, residual


def composite_pixel(colors, densities, deltas, background):
    """`composite` plus the residual-transmittance background term."""
    color, residual = composite(colors, densities, deltas)
    return color + residual[..., None] * np.asarray(background)


def composite_backward(colors, densities, deltas, background, grad_pixel):
    """Gradients of `composite_pixel` w.r.t. per-sample colors and densities.

    Exploits T_{i+1} = T_i - w_i: d(pixel)/d(tau_i) collapses to a reversed
    cumulative sum over the downstream weighted colors.
    """
    optical = densities * deltas
    accum = np.cumsum(optical, axis=-1)
    trans = np.exp(-(accum - optical))
    alpha = -np.expm1(-optical)
    weights = trans * alpha
    residual = np.exp(-accum[..., -1])

    grad_colors = weights[..., None] * grad_pixel[..., None, :]

    s = np.sum(colors * grad_pixel[..., None, :], axis=-1)      # (..., n)
    ws = weights * s
    # sum of w_j * s_j over j > i
    downstream = np.flip(np.cumsum(np.flip(ws, axis=-1), axis=-1), axis=-1) - ws
    trans_next = trans - weights                                # T_{i+1}
    bg_term = residual * np.sum(np.asarray(background) * grad_pixel, axis=-1)
    grad_density = deltas * (trans_next * s - downstream - bg_term[..., None])
    return grad_colors, grad_density


def ray_box_range(origins, dirs, box_min, box_max):
    """Per-ray [t0, t1] over which the ray is inside the axis-aligned box.

    Returns (t0, t1); the ray misses the box wherever t1 <= t0.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        lo = (box_min - origins) * inv
        hi = (box_max - origins) * inv
    # axis-parallel rays: inf bounds sort out through min/max below
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    lo = np.where(np.isnan(lo), -np.inf, lo)
    hi = np.where(np.isnan(hi), np.inf, hi)
    return lo.max(axis=-1), hi.min(axis=-1)


def _scene_box(field: StegoField):
    """World-space box that maps onto the unit query cube."""
    box_min = np.asarray(field.scene_offset, dtype=np.float64)
    box_max = box_min + 1.0 / np.asarray(field.scene_scale, dtype=np.float64)
    return box_min, box_max


def clip_to_scene(field: StegoField, origins, dirs, near, far):
    """Clip [near, far] to the span each ray spends inside the scene box.

    The span is pulled slightly inward so world-to-unit mapped points stay
    strictly inside [0,1]^3 despite rounding. Returns (near, far, hit mask).
    """
    box_min, box_max = _scene_box(field)
    t0, t1 = ray_box_range(origins, dirs, box_min, box_max)
    lo = np.maximum(t0, near)
    hi = np.minimum(t1, far)
    span = hi - lo
    lo = lo + 1e-5 * span
    hi = hi - 1e-5 * span
    return lo, hi, hi > lo


def render_rays(field: StegoField, origins, dirs, key_set: KeySet, background,
                near: float, far: float, n_samples: int = 64,
                rng: np.random.Generator | None = None):
    """Color a batch of rays against the field under the given key set."""
    background = np.asarray(background, dtype=np.float64)
    t_near, t_far, hit = clip_to_scene(field, origins, dirs, near, far)

    out = np.tile(background, (origins.shape[0], 1))
    if not np.any(hit):
        return out

    ts, deltas = sample_along_ray(t_near[hit], t_far[hit], n_samples, rng)
    pts = origins[hit][:, None, :] + ts[..., None] * dirs[hit][:, None, :]
    unit = field.world_to_unit(pts.reshape(-1, 3))
    d_rep = np.repeat(dirs[hit], n_samples, axis=0)
    color, density = field_query_3d(field, unit, d_rep, key_set)
    color = color.reshape(-1, n_samples, 3).astype(np.float64)
    density = density.reshape(-1, n_samples).astype(np.float64)
    out[hit] = composite_pixel(color, density, deltas, background)
    return out


def _worker_threads() -> int:
    try:
        return max(0, int(os.environ.get("STEGOFIELD_THREADS", "0")))
    except ValueError:
        return 0


def render_image(field: StegoField, camera: Camera, key_set: KeySet,
                 background=None, n_samples: int = 64, chunk: int = 8192,
                 seed=None) -> np.ndarray:
    """Render a full view to an (H, W, 3) float image in [0, 1].

    Deterministic for a given seed (and bit-identical without one). Pixel
    chunks may run on a small thread pool (STEGOFIELD_THREADS); the output is
    assembled by index so parallel order cannot change the result.
    """
    if field.mode != MODE_RADIANCE3D:
        raise ValueError("render_image needs a 3d-mode field")
    if background is None:
        background = np.ones(3) if field.white_background else np.zeros(3)
    rows, cols = np.meshgrid(np.arange(camera.height), np.arange(camera.width),
                             indexing="ij")
    pixels = np.stack([rows.ravel(), cols.ravel()], axis=-1)
    origins, dirs = generate_rays(camera, pixels)

    chunks = [slice(i, min(i + chunk, pixels.shape[0]))
              for i in range(0, pixels.shape[0], chunk)]

    def run(sl: slice):
        rng = None if seed is None else np.random.default_rng((seed, sl.start))
        return render_rays(field, origins[sl], dirs[sl], key_set, background,
                           camera.near, camera.far, n_samples, rng)

    out = np.empty((pixels.shape[0], 3), dtype=np.float64)
    n_threads = _worker_threads()
    if n_threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for sl, result in zip(chunks, pool.map(run, chunks)):
                out[sl] = result
    else:
        for sl in chunks:
            out[sl] = run(sl)
    img = out.reshape(camera.height, camera.width, 3)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
