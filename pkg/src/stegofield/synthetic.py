"""Procedural soft-sphere scenes: analytic density fields with exact renders.

Used to build tiny posed-image datasets without external assets. A scene is
a handful of soft-edged colored spheres; ground-truth views are obtained by
densely sampling the analytic field through the same compositing integral
the model is trained against.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .field import MODE_RADIANCE3D
from .render import Camera, composite, generate_rays, ray_box_range, sample_along_ray
from .scene_io import SceneDataset, save_png

BOX_MIN = -1.5
BOX_MAX = 1.5


@dataclass(frozen=True)
class SoftSphere:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]
    density: float = 40.0
    edge: float = 0.08


@dataclass(frozen=True)
class SphereScene:
    spheres: tuple[SoftSphere, ...]

    def sample(self, points: np.ndarray):
        """Analytic (color, density) at world points (B, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        total = np.zeros(pts.shape[0])
        color_acc = np.zeros((pts.shape[0], 3))
        for s in self.spheres:
            dist = np.linalg.norm(pts - np.asarray(s.center), axis=-1)
            # smooth indicator of the interior
            occ = s.density / (1.0 + np.exp((dist - s.radius) / s.edge))
            total += occ
            color_acc += occ[:, None] * np.asarray(s.color)
        color = np.where(total[:, None] > 1e-9, color_acc / np.maximum(total, 1e-9)[:, None], 0.5)
        return color, total


def two_demo_scenes() -> tuple[SphereScene, SphereScene]:
    """A red/green two-sphere scene and a visually distinct blue/yellow one."""
    cover = SphereScene((
        SoftSphere((-0.45, 0.0, 0.1), 0.55, (0.9, 0.15, 0.1)),
        SoftSphere((0.5, 0.25, -0.2), 0.4, (0.1, 0.75, 0.2)),
    ))
    hidden = SphereScene((
        SoftSphere((0.1, -0.35, 0.0), 0.7, (0.1, 0.2, 0.9)),
        SoftSphere((-0.4, 0.5, 0.3), 0.35, (0.95, 0.85, 0.1)),
    ))
    return cover, hidden


def ring_cameras(n_views: int, width: int, height: int, radius: float = 4.0,
                 elevation: float = 0.5, fov_x: float = 0.69,
                 near: float = 2.0, far: float = 6.0,
                 phase: float = 0.0) -> list[Camera]:
    """Cameras on a ring around the origin, all looking at the center."""
    cameras = []
    for i in range(n_views):
        angle = phase + 2.0 * np.pi * i / n_views
        pos = np.array([radius * np.cos(angle), radius * np.sin(angle), elevation])
        z_axis = pos / np.linalg.norm(pos)        # camera looks along -z: away -> origin
        up = np.array([0.0, 0.0, 1.0])
        x_axis = np.cross(up, z_axis)
        x_axis /= np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
        c2w = np.eye(4)
        c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x_axis, y_axis, z_axis, pos
        cameras.append(Camera(c2w=c2w, fov_x=fov_x, width=width, height=height,
                              near=near, far=far))
    return cameras


def render_scene_views(scene: SphereScene, cameras: list[Camera],
                       n_samples: int = 192, white_background: bool = True):
    """Exact renders of the analytic scene: (images (N,H,W,3), alphas (N,H,W))."""
    bg = 1.0 if white_background else 0.0
    images, alphas = [], []
    box_min = np.full(3, BOX_MIN)
    box_max = np.full(3, BOX_MAX)
    for cam in cameras:
        rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width),
                                 indexing="ij")
        pixels = np.stack([rows.ravel(), cols.ravel()], axis=-1)
        origins, dirs = generate_rays(cam, pixels)
        t0, t1 = ray_box_range(origins, dirs, box_min, box_max)
        t0 = np.maximum(t0, cam.near)
        t1 = np.minimum(t1, cam.far)
        hit = t1 > t0
        img = np.full((pixels.shape[0], 3), bg)
        alpha = np.zeros(pixels.shape[0])
        if np.any(hit):
            ts, deltas = sample_along_ray(t0[hit], t1[hit], n_samples)
            pts = origins[hit][:, None, :] + ts[..., None] * dirs[hit][:, None, :]
            color, density = scene.sample(pts.reshape(-1, 3))
            color = color.reshape(-1, n_samples, 3)
            density = density.reshape(-1, n_samples)
            rgb, residual = composite(color, density, deltas)
            img[hit] = rgb + residual[:, None] * bg
            alpha[hit] = 1.0 - residual
        images.append(np.clip(img.reshape(cam.height, cam.width, 3), 0, 1))
        alphas.append(alpha.reshape(cam.height, cam.width))
    return np.stack(images).astype(np.float32), np.stack(alphas).astype(np.float32)


def make_scene_dataset(scene: SphereScene, n_views: int = 8, width: int = 64,
                       height: int = 64, split: str = "train",
                       white_background: bool = True, phase: float = 0.0,
                       n_samples: int = 192) -> SceneDataset:
    """Posed-image dataset of an analytic scene."""
    cameras = ring_cameras(n_views, width, height, phase=phase)
    images, _ = render_scene_views(scene, cameras, n_samples, white_background)
    return SceneDataset(
        mode=MODE_RADIANCE3D,
        images=images,
        cameras=cameras,
        split=split,
        scene_scale=np.full(3, 1.0 / (BOX_MAX - BOX_MIN)),
        scene_offset=np.full(3, BOX_MIN),
        white_background=white_background,
    )


def export_blender_layout(scene: SphereScene, out_dir, n_views: int = 8,
                          width: int = 64, height: int = 64,
                          split: str = "train", phase: float = 0.0,
                          n_samples: int = 192) -> str:
    """Write the scene as a transforms_<split>.json dataset with RGBA PNGs.

    Alpha holds per-pixel opacity and colors are un-premultiplied, so loaders
    can recomposite over any background.
    """
    cameras = ring_cameras(n_views, width, height, phase=phase)
    images, alphas = render_scene_views(scene, cameras, n_samples,
                                        white_background=False)
    os.makedirs(os.path.join(out_dir, split), exist_ok=True)
    frames = []
    for i, cam in enumerate(cameras):
        rgb = images[i]
        alpha = alphas[i]
        straight = np.where(alpha[..., None] > 1e-6, rgb / np.maximum(alpha[..., None], 1e-6), 0.0)
        rgba = np.concatenate([np.clip(straight, 0, 1), alpha[..., None]], axis=-1)
        name = f"./{split}/r_{i}"
        save_png(os.path.join(out_dir, f"{name}.png"), rgba)
        frames.append({
            "file_path": name,
            "transform_matrix": cam.c2w.tolist(),
        })
    meta = {"camera_angle_x": cameras[0].fov_x, "frames": frames}
    meta_path = os.path.join(out_dir, f"transforms_{split}.json")
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=1)
    return meta_path
