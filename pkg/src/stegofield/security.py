"""Key-space arithmetic, hash fill-rate/collision analysis, partial-key attacks.

Key-space sizes blow past float range for multi-key setups, so everything is
carried in log2 domain, with an exact big-integer value attached while it
still fits in 256 bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expi

from .field import MODE_IMAGE2D, StegoField
from .hashgrid import hash_vertices, level_resolution
from .keys import KeySet, generate_key, level_prime_matrix
from .metrics import psnr
from .render import render_image
from .scene_io import SceneDataset
from .train import make_mixed_keyset, render_image_2d

# prime-counting values at the pool bounds
PRIMES_BELOW_1E10 = 455_052_511
PRIMES_BELOW_1E7 = 664_579
AVAILABLE_PRIMES = PRIMES_BELOW_1E10 - PRIMES_BELOW_1E7

SECONDS_PER_YEAR = 3.15e7
_EXACT_BITS_LIMIT = 256


def available_primes() -> int:
    """Number of primes in the key pool [10^7, 10^10]."""
    return AVAILABLE_PRIMES


def available_primes_li_estimate() -> float:
    """Logarithmic-integral estimate of the pool size (sanity cross-check)."""
    li = lambda x: float(expi(math.log(x)))
    return li(1e10) - li(1e7)


@dataclass(frozen=True)
class KeySpaceReport:
    pool_size: int            # U
    dim: int
    n_keys: int               # m
    bits: float               # log2 of the key-space size
    key_space: int | None     # exact value while it fits in 256 bits

    @property
    def log10_size(self) -> float:
        return self.bits * math.log10(2.0)


def key_space(pool_size: int = AVAILABLE_PRIMES, dim: int = 3,
              n_keys: int = 1) -> KeySpaceReport:
    """Size of the search space for d*m independent primes from the pool."""
    if pool_size < 1 or dim < 1 or n_keys < 1:
        raise ValueError("pool size, dim and key count must be positive")
    bits = dim * n_keys * math.log2(pool_size)
    exact = pool_size ** (dim * n_keys) if bits <= _EXACT_BITS_LIMIT else None
    return KeySpaceReport(pool_size, dim, n_keys, bits, exact)


def brute_force_log10_years(key_space_bits: float, fps: float = 20.0) -> float:
    """log10 of the expected brute-force time in years (half-space search)."""
    if fps <= 0:
        raise ValueError("render rate must be positive")
    return (key_space_bits * math.log10(2.0) + math.log10(0.5)
            - math.log10(fps) - math.log10(SECONDS_PER_YEAR))


def brute_force_years(key_space_size: float | int, fps: float = 20.0) -> float:
    """Expected years to brute-force at `fps` rendered guesses per second.

    Assumes the search succeeds after half the space on average. Computed in
    log domain; returns inf when the result exceeds float range.
    """
    if key_space_size <= 0:
        raise ValueError("key space must be positive")
    # math.log accepts arbitrary-precision ints
    bits = math.log(key_space_size) / math.log(2.0)
    log10_years = brute_force_log10_years(bits, fps)
    if log10_years > 308:
        return float("inf")
    return 10.0 ** log10_years


@dataclass(frozen=True)
class FillRateReport:
    active_cells: tuple[int, ...]     # kappa per scene
    table_size: int
    per_scene: tuple[float, ...]      # kappa_i / T
    combined: float                   # sum(kappa) / T
    expected_collisions: float        # under independent uniform hashing


def expected_collisions(total_cells: int, table_size: int) -> float:
    """Expected number of cell->slot assignments landing on occupied slots.

    With k uniform independent assignments into T slots the expected number
    of distinct occupied slots is T*(1-(1-1/T)^k); the rest collided.
    """
    if table_size < 1:
        raise ValueError("table size must be positive")
    if total_cells < 0:
        raise ValueError("cell counts must be non-negative")
    occupied = table_size * -math.expm1(total_cells * math.log1p(-1.0 / table_size))
    return total_cells - occupied


def fill_rate(active_cells, table_size: int) -> FillRateReport:
    """Fill rates and expected collision count for per-scene active-cell counts."""
    kappas = tuple(int(k) for k in active_cells)
    if any(k < 0 for k in kappas):
        raise ValueError("cell counts must be non-negative")
    if table_size < 1:
        raise ValueError("table size must be positive")
    total = sum(kappas)
    return FillRateReport(
        active_cells=kappas,
        table_size=table_size,
        per_scene=tuple(k / table_size for k in kappas),
        combined=total / table_size,
        expected_collisions=expected_collisions(total, table_size),
    )


def collision_monte_carlo(n_cells: int, table_size: int, dim: int = 3,
                          trials: int = 20, seed=None, resolution: int = 128):
    """Collision counts from hashing random distinct vertices with random keys.

    Returns (mean, std) of the per-trial collision count (cells minus distinct
    slots hit), using the production keyed hash rather than the uniform model.
    """
    rng = np.random.default_rng(seed)
    counts = []
    for _ in range(trials):
        key = generate_key(dim, rng=rng)
        vertices = _distinct_vertices(n_cells, dim, resolution, rng)
        idx = hash_vertices(vertices, key.as_array(), table_size)
        counts.append(n_cells - np.unique(idx).size)
    counts = np.asarray(counts, dtype=np.float64)
    return float(counts.mean()), float(counts.std())


def _distinct_vertices(count: int, dim: int, resolution: int, rng) -> np.ndarray:
    if count > resolution**dim:
        raise ValueError("more cells requested than the grid holds")
    flat = rng.choice(resolution**dim, size=count, replace=False)
    coords = []
    for _ in range(dim):
        flat, rem = np.divmod(flat, resolution)
        coords.append(rem)
    return np.stack(coords, axis=-1).astype(np.uint64)


def active_cell_count(field, key_set: KeySet, level: int | None = None,
                      threshold: float = 0.01, chunk: int = 65536) -> int:
    """Count grid cells whose center density clears tau*delta >= threshold.

    Evaluated on the resolution of `level` (default: the finest level), with
    delta taken as one cell width. Gives the kappa inputs for `fill_rate`
    from a trained 3d field.
    """
    from .field import field_query_3d
    cfg = field.config
    if level is None:
        level = cfg.levels - 1
    res = level_resolution(level, cfg)
    delta = 1.0 / (res * float(np.max(field.scene_scale)))
    axes = [(np.arange(res) + 0.5) / res] * 3
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dirs = np.zeros_like(grid)
    dirs[:, 2] = 1.0
    active = 0
    for start in range(0, grid.shape[0], chunk):
        sl = slice(start, min(start + chunk, grid.shape[0]))
        _, density = field_query_3d(field, grid[sl], dirs[sl], key_set)
        active += int(np.count_nonzero(density * delta >= threshold))
    return active


def partial_key_attack(field: StegoField, secret: KeySet,
                       cover_data: SceneDataset, hidden_data: SceneDataset,
                       provisions=(0.0, 0.25, 0.5, 0.75, 1.0),
                       n_views: int = 2, n_samples: int = 64) -> list[dict]:
    """Render under partially disclosed key sets and score against both scenes.

    For each provision the first round(p*m) key slots are the true secret
    keys and the rest fall back to the default key. Returns one record per
    provision: {provision, psnr_cover, psnr_hidden}.
    """
    rows = []
    for provision in provisions:
        mixed = make_mixed_keyset(secret, provision)
        cover_scores, hidden_scores = [], []
        if field.mode == MODE_IMAGE2D:
            pred_c = render_image_2d(field, mixed, cover_data.height, cover_data.width)
            pred_h = render_image_2d(field, mixed, hidden_data.height, hidden_data.width)
            cover_scores.append(psnr(pred_c, cover_data.images[0]))
            hidden_scores.append(psnr(pred_h, hidden_data.images[0]))
        else:
            for i in range(min(n_views, cover_data.n_views)):
                pred = render_image(field, cover_data.cameras[i], mixed,
                                    n_samples=n_samples)
                cover_scores.append(psnr(pred, cover_data.images[i]))
            for i in range(min(n_views, hidden_data.n_views)):
                pred = render_image(field, hidden_data.cameras[i], mixed,
                                    n_samples=n_samples)
                hidden_scores.append(psnr(pred, hidden_data.images[i]))
        rows.append({
            "provision": float(provision),
            "psnr_cover": float(np.mean(cover_scores)),
            "psnr_hidden": float(np.mean(hidden_scores)),
        })
    return rows
