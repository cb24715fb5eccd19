"""Dataset loading and the bit-exact, key-free checkpoint format.

Checkpoints carry geometry, decoder widths and raw parameters, nothing else:
no key material and no scene labels ever touch the file, so a stego-trained
checkpoint is byte-length-identical to a plain one with the same
configuration.

Binary layout (little-endian):

    "SNGP" | u32 version
    u32 levels, u32 log2(table_size), u32 features, u32 coarsest, u32 finest
    u8 dim, u8 mode, u8 white_background, u8 n_widths        (block is 8-aligned)
    u32 widths[n_widths], zero-padded to an 8-byte boundary
    f32 scene_scale[3], f32 scene_offset[3]
    f32 tables, level by level, row-major
    per decoder layer: f32 weight matrix row-major, then f32 biases
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError
from .field import MODE_IMAGE2D, MODE_RADIANCE3D, StegoField
from .hashgrid import HashGridConfig
from .mlp import MlpParams, MlpSpec
from .render import Camera

CHECKPOINT_MAGIC = b"SNGP"
CHECKPOINT_VERSION = 1

_MODE_CODES = {MODE_IMAGE2D: 0, MODE_RADIANCE3D: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

# world box of the synthetic Blender scenes, mapped onto the unit cube
BLENDER_BOX_MIN = -1.5
BLENDER_BOX_MAX = 1.5
BLENDER_NEAR = 2.0
BLENDER_FAR = 6.0


@dataclass
class SceneDataset:
    """Posed images (3d mode) or a single target image (2d mode)."""

    mode: str
    images: np.ndarray                       # (N, H, W, 3) float32 in [0, 1]
    cameras: list[Camera] | None
    split: str
    scene_scale: np.ndarray
    scene_offset: np.ndarray
    white_background: bool = True

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be (N, H, W, 3), got {self.images.shape}")
        if self.mode == MODE_RADIANCE3D:
            if self.cameras is None or len(self.cameras) != self.images.shape[0]:
                raise ValueError("3d datasets need one camera per image")

    @property
    def n_views(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]


def load_png(path, white_background: bool = True) -> np.ndarray:
    """Decode a PNG into (H, W, 3) float32 in [0, 1].

    RGBA is composited over white or black; grayscale is replicated to RGB.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode PNG {path}: {exc}") from None
    if mode in ("L", "I;16", "I"):
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif mode == "LA":
        gray, alpha = arr[:, :, 0], arr[:, :, 1]
        arr = np.repeat(gray[:, :, None], 3, axis=2)
        arr = _composite_alpha(arr, alpha, white_background)
    elif mode == "RGB":
        pass
    elif mode == "RGBA":
        arr = _composite_alpha(arr[:, :, :3], arr[:, :, 3], white_background)
    else:
        raise DataError(f"unsupported PNG mode {mode!r} in {path}")
    return arr.astype(np.float32)


def _composite_alpha(rgb, alpha, white_background):
    bg = 1.0 if white_background else 0.0
    return rgb * alpha[:, :, None] + bg * (1.0 - alpha[:, :, None])


def save_png(path, img: np.ndarray) -> None:
    """Quantize a float image with round(255*clamp(v,0,1)) and write 8-bit PNG."""
    arr = np.asarray(img)
    quant = np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(quant).save(path, format="PNG")


def load_image_2d(path) -> SceneDataset:
    """Single-image 2d dataset with pixel coordinates normalized to [0,1]^2."""
    img = load_png(path)
    return SceneDataset(
        mode=MODE_IMAGE2D,
        images=img[None],
        cameras=None,
        split="train",
        scene_scale=np.ones(3),
        scene_offset=np.zeros(3),
    )


def load_image_pair(cover_path, hidden_path) -> tuple[SceneDataset, SceneDataset]:
    """Two single-image 2d datasets; dimensions need not match."""
    return load_image_2d(cover_path), load_image_2d(hidden_path)


def load_blender_dataset(path, split: str = "train", white_background: bool = True,
                         box_min: float = BLENDER_BOX_MIN,
                         box_max: float = BLENDER_BOX_MAX) -> SceneDataset:
    """Load a transforms_<split>.json dataset of posed PNGs.

    fov comes from camera_angle_x; pose matrices are camera-to-world with the
    camera looking along -z.
    """
    meta_path = os.path.join(path, f"transforms_{split}.json")
    try:
        with open(meta_path, "r") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {meta_path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {meta_path}: {exc}") from None

    if "camera_angle_x" not in meta or "frames" not in meta:
        raise DataError(f"{meta_path} must define camera_angle_x and frames")
    fov_x = float(meta["camera_angle_x"])

    images, cameras = [], []
    for frame in meta["frames"]:
        matrix = np.asarray(frame.get("transform_matrix", []), dtype=np.float64)
        if matrix.shape != (4, 4):
            raise DataError(f"frame pose must be 4x4, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise DataError("frame pose contains non-finite values")
        file_path = frame.get("file_path")
        if not file_path:
            raise DataError("frame without file_path")
        img_path = os.path.join(path, file_path)
        if not os.path.splitext(img_path)[1]:
            img_path += ".png"
        img = load_png(img_path, white_background)
        if images and img.shape != images[0].shape:
            raise DataError(
                f"inconsistent image sizes: {img.shape} vs {images[0].shape}")
        images.append(img)
        try:
            cameras.append(Camera(c2w=matrix, fov_x=fov_x, width=img.shape[1],
                                  height=img.shape[0], near=BLENDER_NEAR,
                                  far=BLENDER_FAR))
        except ValueError as exc:
            raise DataError(f"bad camera pose: {exc}") from None
    if not images:
        raise DataError(f"{meta_path} holds no frames")

    scale = np.full(3, 1.0 / (box_max - box_min))
    offset = np.full(3, box_min)
    return SceneDataset(
        mode=MODE_RADIANCE3D,
        images=np.stack(images),
        cameras=cameras,
        split=split,
        scene_scale=scale,
        scene_offset=offset,
        white_background=white_background,
    )


def _header_bytes(field: StegoField) -> bytes:
    cfg = field.config
    widths = field.mlp.spec.widths
    head = struct.pack(
        "<4sIIIIIIBBBB",
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        cfg.levels, cfg.table_size.bit_length() - 1, cfg.features,
        cfg.coarsest, cfg.finest,
        cfg.dim, _MODE_CODES[field.mode], int(field.white_background), len(widths),
    )
    body = struct.pack(f"<{len(widths)}I", *widths)
    if len(body) % 8:
        body += b"\x00" * (8 - len(body) % 8)
    bbox = np.concatenate([
        np.asarray(field.scene_scale, dtype="<f4"),
        np.asarray(field.scene_offset, dtype="<f4"),
    ]).tobytes()
    return head + body + bbox


def checkpoint_length(config: HashGridConfig, spec: MlpSpec) -> int:
    """Exact file size in bytes; depends only on geometry and decoder widths."""
    widths_bytes = 4 * len(spec.widths)
    if widths_bytes % 8:
        widths_bytes += 8 - widths_bytes % 8
    header = 32 + widths_bytes + 24
    return header + 4 * config.levels * config.table_size * config.features \
        + 4 * spec.n_params


def save_checkpoint(field: StegoField, path) -> None:
    """Write the field to `path`. Parameters are stored as little-endian f32."""
    for arr in field.param_arrays():
        if not np.all(np.isfinite(arr)):
            raise DataError("refusing to save non-finite parameters")
    payload = [_header_bytes(field), np.ascontiguousarray(field.tables, dtype="<f4").tobytes()]
    for w, b in zip(field.mlp.weights, field.mlp.biases):
        payload.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        payload.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    blob = b"".join(payload)
    assert len(blob) == checkpoint_length(field.config, field.mlp.spec)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> StegoField:
    """Read a checkpoint back into a field. Never touches any key."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None

    def take(n: int) -> bytes:
        nonlocal cursor
        if cursor + n > len(blob):
            raise DataError(f"truncated checkpoint {path}")
        out = blob[cursor:cursor + n]
        cursor += n
        return out

    cursor = 0
    magic, version = struct.unpack("<4sI", take(8))
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    levels, log2t, features, coarsest, finest, dim, mode_code, white_bg, n_widths = \
        struct.unpack("<IIIIIBBBB", take(24))
    if mode_code not in _MODE_NAMES:
        raise DataError(f"unknown mode code {mode_code}")
    config = HashGridConfig(levels=levels, table_size=2**log2t, features=features,
                            coarsest=coarsest, finest=finest, dim=dim)
    widths = struct.unpack(f"<{n_widths}I", take(4 * n_widths))
    if (4 * n_widths) % 8:
        take(8 - (4 * n_widths) % 8)
    bbox = np.frombuffer(take(24), dtype="<f4")
    scene_scale = bbox[:3].astype(np.float64)
    scene_offset = bbox[3:].astype(np.float64)

    n_table = levels * 2**log2t * features
    tables = np.frombuffer(take(4 * n_table), dtype="<f4").reshape(
        levels, 2**log2t, features).copy()
    spec = MlpSpec(tuple(int(w) for w in widths))
    weights, biases = [], []
    for nin, nout in zip(spec.widths, spec.widths[1:]):
        weights.append(np.frombuffer(take(4 * nin * nout), dtype="<f4")
                       .reshape(nin, nout).copy())
        biases.append(np.frombuffer(take(4 * nout), dtype="<f4").copy())
    if cursor != len(blob):
        raise DataError(f"trailing bytes in checkpoint {path}")

    field = StegoField(
        config=config,
        tables=tables,
        mlp=MlpParams(weights, biases),
        mode=_MODE_NAMES[mode_code],
        scene_scale=scene_scale,
        scene_offset=scene_offset,
        white_background=bool(white_bg),
    )
    for arr in field.param_arrays():
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite parameters in checkpoint {path}")
    return field


def scan_for_primes(blob: bytes, primes) -> list[int]:
    """Return the primes whose 8-byte little-endian encoding occurs in `blob`."""
    found = []
    for p in primes:
        needle = int(p).to_bytes(8, "little")
        if needle in blob:
            found.append(int(p))
    return found


def write_train_log(path, records) -> None:
    """Append JSON-lines evaluation records: {iter, scene, loss, psnr?}."""
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
