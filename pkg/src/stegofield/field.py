"""The keyed scene field: hash encoding + decoder, switched by the hash key.

One parameter set (tables + decoder weights) answers queries under any key
set. Under the default key it behaves exactly like a standard hash-grid
field; under a secret key the lookups are re-routed and the same parameters
produce a different scene. Queries never mutate parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .hashgrid import HashGridConfig, encode, init_tables
from .keys import KeySet
from .mlp import DENSITY_EXP_CLAMP, MlpParams, MlpSpec, init_mlp

MODE_IMAGE2D = "image2d"
MODE_RADIANCE3D = "radiance3d"

SH_WIDTH = 16

# Real spherical-harmonics basis constants, bands 0..3.
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)


def encode_direction(dirs: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Evaluate the 16-value spherical-harmonics basis (bands 0..3) at unit dirs.

    dirs: (..., 3), must be unit-norm within `tol`.
    """
    d = np.asarray(dirs, dtype=np.float64)
    if d.shape[-1] != 3:
        raise ValueError(f"directions must have 3 components, got shape {d.shape}")
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("direction vectors must be unit length")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (SH_WIDTH,), dtype=np.float64)
    out[..., 0] = _C0
    out[..., 1] = -_C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = -_C1 * x
    out[..., 4] = _C2[0] * x * y
    out[..., 5] = _C2[1] * y * z
    out[..., 6] = _C2[2] * (3.0 * zz - 1.0)
    out[..., 7] = _C2[3] * x * z
    out[..., 8] = _C2[4] * (xx - yy)
    out[..., 9] = _C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = _C3[1] * x * y * z
    out[..., 11] = _C3[2] * y * (5.0 * zz - 1.0)
    out[..., 12] = _C3[3] * z * (5.0 * zz - 3.0)
    out[..., 13] = _C3[4] * x * (5.0 * zz - 1.0)
    out[..., 14] = _C3[5] * z * (xx - yy)
    out[..., 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def density_activation(raw: np.ndarray) -> np.ndarray:
    """exp, clamped so density never exceeds e^10."""
    return np.exp(np.minimum(raw, DENSITY_EXP_CLAMP))


@dataclass
class StegoField:
    """Hash-grid feature tables plus decoder weights, queryable under any key."""

    config: HashGridConfig
    tables: np.ndarray
    mlp: MlpParams
    mode: str
    scene_scale: np.ndarray = dc_field(default_factory=lambda: np.ones(3))
    scene_offset: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    white_background: bool = True

    def __post_init__(self):
        if self.mode not in (MODE_IMAGE2D, MODE_RADIANCE3D):
            raise ValueError(f"unknown mode {self.mode!r}")
        expected = (self.config.levels, self.config.table_size, self.config.features)
        if self.tables.shape != expected:
            raise ValueError(f"tables shape {self.tables.shape} != {expected}")
        want_in = self.config.feature_width + (SH_WIDTH if self.mode == MODE_RADIANCE3D else 0)
        got_in = self.mlp.weights[0].shape[0]
        if got_in != want_in:
            raise ValueError(f"decoder input width {got_in} != required {want_in}")
        want_out = 4 if self.mode == MODE_RADIANCE3D else 3
        if self.mlp.weights[-1].shape[1] != want_out:
            raise ValueError(f"decoder output width must be {want_out} in mode {self.mode}")

    @property
    def dtype(self):
        return self.tables.dtype

    def world_to_unit(self, points: np.ndarray) -> np.ndarray:
        """Map scene coordinates into the [0,1]^3 query cube."""
        return (np.asarray(points, dtype=np.float64) - self.scene_offset) * self.scene_scale

    def param_arrays(self) -> list[np.ndarray]:
        return [self.tables] + self.mlp.arrays()


def new_field(config: HashGridConfig, mode: str, seed=None, hidden_width: int = 64,
              dtype=np.float32) -> StegoField:
    """Fresh field: randomly initialized tables and a 4-layer decoder."""
    in_width = config.feature_width + (SH_WIDTH if mode == MODE_RADIANCE3D else 0)
    out_width = 4 if mode == MODE_RADIANCE3D else 3
    spec = MlpSpec((in_width, hidden_width, hidden_width, out_width))
    rng = np.random.default_rng(seed)
    tables = init_tables(config, seed=rng, dtype=dtype)
    mlp = init_mlp(spec, seed=rng, dtype=dtype)
    return StegoField(config=config, tables=tables, mlp=mlp, mode=mode)


def field_query_2d(field: StegoField, x: np.ndarray, key_set: KeySet) -> np.ndarray:
    """RGB in [0,1] for points in [0,1]^2 under the given key set."""
    if field.mode != MODE_IMAGE2D:
        raise ValueError(f"field mode is {field.mode}, expected {MODE_IMAGE2D}")
    from .mlp import mlp_forward
    feats = encode(x, key_set, field.tables, field.config)
    raw, _ = mlp_forward(field.mlp, feats)
    return sigmoid(raw)


def field_query_3d(field: StegoField, x: np.ndarray, dirs: np.ndarray,
                   key_set: KeySet):
    """(color, density) for unit-cube points and unit view directions."""
    if field.mode != MODE_RADIANCE3D:
        raise ValueError(f"field mode is {field.mode}, expected {MODE_RADIANCE3D}")
    from .mlp import mlp_forward
    feats = encode(x, key_set, field.tables, field.config)
    sh = encode_direction(dirs).astype(feats.dtype)
    raw, _ = mlp_forward(field.mlp, np.concatenate([feats, sh], axis=1))
    color = sigmoid(raw[:, :3])
    density = density_activation(raw[:, 3])
    return color, density
