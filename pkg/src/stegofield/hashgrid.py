"""Multi-resolution keyed hash encoding over a shared feature table.

Each of L resolution levels hashes the 2^d corner vertices of the grid cell
containing a query point into a table of T trainable F-vectors, then blends
them d-linearly. The hash of a vertex v under a prime key (k_1..k_d) is

    (XOR_i  v_i * k_i)  mod T

with the products taken in wrapping unsigned 64-bit arithmetic and T a power
of two, so the modulo is a bit-mask. Swapping the key re-routes every lookup
while the table itself stays untouched; that is the entire switching
mechanism, and it is applied uniformly at all levels (no dense fallback at
coarse levels, which would leak key-independent structure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .keys import KeySet, PrimeKey, level_prime_matrix

_U64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class HashGridConfig:
    """Geometry of the encoding: L levels of T entries with F features each.

    Level resolutions grow geometrically from `coarsest` to `finest`.
    """

    levels: int = 16
    table_size: int = 2**19
    features: int = 2
    coarsest: int = 16
    finest: int = 512
    dim: int = 3

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("need at least one level")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError(f"table_size {self.table_size} must be a power of two")
        if self.features < 1:
            raise ValueError("need at least one feature per entry")
        if not 1 <= self.coarsest <= self.finest:
            raise ValueError("need 1 <= coarsest <= finest")
        if self.dim not in (2, 3):
            raise ValueError(f"unsupported dim {self.dim}")

    @property
    def growth(self) -> float:
        """Per-level geometric resolution factor."""
        if self.levels == 1:
            return 1.0
        return math.exp((math.log(self.finest) - math.log(self.coarsest)) / (self.levels - 1))

    @property
    def feature_width(self) -> int:
        """Length of one encoded feature vector (levels * features)."""
        return self.levels * self.features


def level_resolution(level: int, config: HashGridConfig) -> int:
    """Grid resolution of a 0-based level; the last level is pinned to `finest`."""
    if not 0 <= level < config.levels:
        raise ValueError(f"level {level} outside [0, {config.levels})")
    if level == config.levels - 1:
        return config.finest
    return int(math.floor(config.coarsest * config.growth**level))


def level_resolutions(config: HashGridConfig) -> np.ndarray:
    return np.array([level_resolution(l, config) for l in range(config.levels)], dtype=np.int64)


def init_tables(config: HashGridConfig, seed=None, scale: float = 1e-4,
                dtype=np.float32) -> np.ndarray:
    """Fresh (L, T, F) feature table, uniform in [-scale, scale]."""
    rng = np.random.default_rng(seed)
    shape = (config.levels, config.table_size, config.features)
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def hash_index(vertex, key: PrimeKey, table_size: int) -> int:
    """Hash one integer vertex into [0, table_size) under the given key."""
    if table_size < 1 or table_size & (table_size - 1):
        raise ValueError(f"table_size {table_size} must be a power of two")
    acc = 0
    for x, k in zip(vertex, key.primes, strict=True):
        acc ^= (int(x) * k) & _U64_MASK
    return acc & (table_size - 1)


def hash_vertices(vertices: np.ndarray, primes: np.ndarray, table_size: int) -> np.ndarray:
    """Vectorized vertex hash: (..., d) uint64 vertices -> (...,) indices.

    Bit-exact with `hash_index`; relies on numpy's wrapping uint64 multiply.
    """
    v = np.ascontiguousarray(vertices, dtype=np.uint64)
    p = np.asarray(primes, dtype=np.uint64)
    acc = v[..., 0] * p[..., 0]
    for i in range(1, v.shape[-1]):
        acc = acc ^ (v[..., i] * p[..., i])
    return acc & np.uint64(table_size - 1)


class EncodeTape:
    """Per-batch lookup record reused by encode and its backward pass.

    flat_indices: (B, L, 2^d) int64 slots into the level-flattened table
    (level l owns [l*T, (l+1)*T)); weights: matching d-linear blend weights.
    """

    __slots__ = ("flat_indices", "weights")

    def __init__(self, flat_indices: np.ndarray, weights: np.ndarray):
        self.flat_indices = flat_indices
        self.weights = weights

    def take(self, batch_index: np.ndarray) -> "EncodeTape":
        """Tape restricted to a subset of the batch (used by cached grids)."""
        return EncodeTape(self.flat_indices[batch_index],
                          self.weights[batch_index])


def encode_tape(x: np.ndarray, key_set: KeySet, config: HashGridConfig,
                weight_dtype=np.float32) -> EncodeTape:
    """Hash the cell corners of each point and compute their blend weights.

    Corner hashes reuse the base-vertex products: with offset bits o_i in
    {0,1}, (v_i + o_i) * k_i is v_i * k_i, plus k_i when the bit is set, so
    the corner loop is XOR-only.
    """
    weight_dtype = np.dtype(weight_dtype)
    pos_dtype = np.float64 if weight_dtype == np.float64 else np.float32
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != config.dim:
        raise ValueError(f"expected points of shape (B, {config.dim}), got {x.shape}")
    if np.any(x < 0.0) or np.any(x > 1.0):
        bad = x[np.any((x < 0.0) | (x > 1.0), axis=1)][0]
        raise ValueError(f"point {bad} outside the unit cube")
    if key_set.dim != config.dim:
        raise ValueError(f"key dimensionality {key_set.dim} != grid dim {config.dim}")

    levels, dim = config.levels, config.dim
    batch = x.shape[0]
    n_corners = 2**dim
    primes = level_prime_matrix(key_set, levels)            # (L, d)
    res = level_resolutions(config).astype(pos_dtype)       # (L,)

    pos = x.astype(pos_dtype)[:, None, :] * res[None, :, None]   # (B, L, d)
    base = np.floor(pos)
    np.minimum(base, res[None, :, None] - 1.0, out=base)    # x = 1.0 -> last cell
    frac = (pos - base).astype(weight_dtype)
    base_u = base.astype(np.uint64)

    # per-axis ingredients of every corner hash and weight
    prod0 = [base_u[..., i] * primes[None, :, i] for i in range(dim)]
    prod1 = [prod0[i] + primes[None, :, i] for i in range(dim)]
    w1 = [frac[..., i] for i in range(dim)]
    w0 = [1.0 - frac[..., i] for i in range(dim)]

    mask = np.uint64(config.table_size - 1)
    level_offset = np.arange(levels, dtype=np.int64) * config.table_size
    flat = np.empty((batch, levels, n_corners), dtype=np.int64)
    weights = np.empty((batch, levels, n_corners), dtype=weight_dtype)
    for c in range(n_corners):
        bits = [(c >> i) & 1 for i in range(dim)]
        acc = prod1[0] if bits[0] else prod0[0]
        w = w1[0] if bits[0] else w0[0]
        for i in range(1, dim):
            acc = acc ^ (prod1[i] if bits[i] else prod0[i])
            w = w * (w1[i] if bits[i] else w0[i])
        flat[:, :, c] = (acc & mask).astype(np.int64)
        flat[:, :, c] += level_offset[None, :]
        weights[:, :, c] = w
    return EncodeTape(flat, weights)


def encode(x: np.ndarray, key_set: KeySet, tables: np.ndarray,
           config: HashGridConfig, tape: EncodeTape | None = None) -> np.ndarray:
    """Encode points in [0,1]^d into (B, L*F) interpolated features.

    Passing a precomputed `tape` (from `encode_tape`) skips the hashing.
    """
    if tape is None:
        tape = encode_tape(x, key_set, config, tables.dtype)
    batch = tape.flat_indices.shape[0]
    flat_tables = tables.reshape(-1, config.features)
    corner_feats = np.take(flat_tables, tape.flat_indices, axis=0)  # (B, L, C, F)
    out = np.einsum("blc,blcf->blf", tape.weights, corner_feats)
    return np.ascontiguousarray(out, dtype=tables.dtype).reshape(batch, -1)


def encode_backward(x: np.ndarray, key_set: KeySet, grad_out: np.ndarray,
                    grad_tables: np.ndarray, config: HashGridConfig,
                    tape: EncodeTape | None = None) -> None:
    """Accumulate d(loss)/d(tables) into `grad_tables` given d(loss)/d(features).

    grad_out is (B, L*F); each touched slot receives weight * grad. Scatter-add
    is a bincount over the level-flattened slot index, so repeated slots (hash
    collisions inside the batch) accumulate correctly and deterministically.
    """
    if tape is None:
        tape = encode_tape(x, key_set, config, grad_tables.dtype)
    batch, levels, _ = tape.flat_indices.shape
    features = config.features
    grad = np.asarray(grad_out).reshape(batch, levels, features)
    flat_idx = tape.flat_indices.ravel()
    n_slots = levels * config.table_size
    flat_grad = grad_tables.reshape(n_slots, features)
    for f in range(features):
        contrib = tape.weights * grad[:, :, f][:, :, None]   # (B, L, C)
        sums = np.bincount(flat_idx, weights=contrib.ravel(), minlength=n_slots)
        flat_grad[:, f] += sums.astype(grad_tables.dtype, copy=False)
