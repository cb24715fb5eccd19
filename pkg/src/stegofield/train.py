"""Dual-scene training: one parameter set fitted to several scenes at once.

Every iteration picks one scene from the roster uniformly at random, routes
the hash lookups through that scene's key set (the cover scene always uses
the default key), fits a pixel or ray batch from a random view with
MSE + beta * L1(tables), and applies one Adam step. Nothing about the roster
or the keys is written into the parameters' layout, so the resulting
checkpoint is indistinguishable in size and structure from a single-scene
fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (MODE_IMAGE2D, MODE_RADIANCE3D, StegoField, sigmoid)
from .hashgrid import encode, encode_backward, encode_tape
from .keys import KeySet, default_key, default_key_set
from .metrics import psnr
from .mlp import (AdamState, DENSITY_EXP_CLAMP, adam_step, check_finite,
                  mlp_backward, mlp_forward, mse_loss, sparsity_loss)
from .render import (clip_to_scene, composite_backward, composite_pixel,
                     generate_rays, render_image, sample_along_ray)
from .scene_io import SceneDataset, write_train_log


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training loop; defaults are the desk-scale settings."""

    iters: int
    lr: float = 1e-2
    beta: float = 1e-6
    batch_size: int = 4096        # pixels per step (2d) or rays per step (3d)
    n_samples: int = 64           # samples per ray (3d)
    seed: int = 0
    eval_every: int = 500
    eval_views: int = 4
    full_image: bool = False      # fit whole views instead of sampled batches

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("need at least one iteration")
        if self.lr <= 0 or self.lr > 0.1:
            raise ValueError("learning rate must be in (0, 0.1]")
        if self.beta < 0:
            raise ValueError("sparsity weight must be >= 0")


@dataclass
class TrainScene:
    """One roster entry: a dataset, the key set that addresses it, a name."""

    name: str
    dataset: SceneDataset
    key_set: KeySet
    eval_dataset: SceneDataset | None = None


@dataclass
class TrainReport:
    """Loss curve and periodic evaluation records."""

    losses: list = dc_field(default_factory=list)       # (iter, scene, loss)
    evals: list = dc_field(default_factory=list)        # JSON-able dicts


def build_roster(cover: SceneDataset, hidden=(), dim: int = 2) -> list[TrainScene]:
    """Cover scene under the default key plus hidden scenes under their keys.

    Hidden key sets must be pairwise disjoint in primes and must not reuse
    any default-key prime.
    """
    roster = [TrainScene("cover", cover, default_key_set(dim))]
    seen = set(default_key(dim).primes)
    for i, (dataset, key_set) in enumerate(hidden):
        if key_set.dim != dim:
            raise ValueError(f"hidden key set {i} has dim {key_set.dim}, expected {dim}")
        overlap = key_set.all_primes() & seen
        if overlap:
            raise ValueError(f"hidden key set {i} reuses primes {sorted(overlap)}")
        seen |= key_set.all_primes()
        roster.append(TrainScene(f"hidden{i}" if len(hidden) > 1 else "hidden",
                                 dataset, key_set))
    return roster


def make_mixed_keyset(secret: KeySet, provision: float) -> KeySet:
    """Key set with only the first `provision` fraction of the secret keys.

    The remaining slots fall back to the default key, modelling an attacker
    who learned part of a multi-key set. provision * m must be integral.
    """
    m = secret.m
    count_f = provision * m
    count = round(count_f)
    if abs(count_f - count) > 1e-9 or not 0 <= count <= m:
        raise ValueError(f"provision {provision} is not a multiple of 1/{m} in [0, 1]")
    fallback = default_key(secret.dim)
    keys = secret.keys[:count] + (fallback,) * (m - count)
    return KeySet(keys)


class Trainer:
    """Owns the mutable training state: field, optimizer moments, RNG."""

    def __init__(self, field: StegoField, roster: list[TrainScene],
                 config: TrainConfig, log_path=None):
        if not roster:
            raise ValueError("empty scene roster")
        for scene in roster:
            if scene.dataset.mode != field.mode:
                raise ValueError(f"scene {scene.name} mode {scene.dataset.mode} "
                                 f"!= field mode {field.mode}")
            if scene.dataset.images.size == 0:
                raise ValueError(f"scene {scene.name} has no data")
        self.field = field
        self.roster = roster
        self.config = config
        self.log_path = log_path
        self.rng = np.random.default_rng(config.seed)
        self.adam = AdamState.for_arrays(field.param_arrays())
        self.iteration = 0
        self.report = TrainReport()
        self._scratch = np.empty_like(field.tables)
        if field.mode == MODE_RADIANCE3D:
            ds = roster[0].dataset
            field.scene_scale = np.asarray(ds.scene_scale, dtype=np.float64)
            field.scene_offset = np.asarray(ds.scene_offset, dtype=np.float64)
            field.white_background = ds.white_background
        # 2d scenes sample from a fixed pixel grid, so the hash lookups per
        # scene can be computed once and sliced per batch
        self._grid_tapes = {}
        if field.mode == MODE_IMAGE2D:
            for scene in roster:
                h, w = scene.dataset.height, scene.dataset.width
                rows, cols = np.divmod(np.arange(h * w), w)
                x = np.stack([(cols + 0.5) / w, (rows + 0.5) / h], axis=-1)
                self._grid_tapes[scene.name] = encode_tape(
                    x, scene.key_set, field.config, field.dtype)

    def step(self) -> float:
        """One iteration: fit a random batch of a random scene, Adam update."""
        scene = self.roster[int(self.rng.integers(len(self.roster)))]
        if self.field.mode == MODE_IMAGE2D:
            loss = self._step_2d(scene)
        else:
            loss = self._step_3d(scene)
        check_finite(loss, f"training loss at iteration {self.iteration}")
        self.iteration += 1
        self.report.losses.append((self.iteration, scene.name, loss))
        if self.config.eval_every and self.iteration % self.config.eval_every == 0:
            self.evaluate()
        return loss

    def run(self) -> TrainReport:
        for _ in range(self.config.iters):
            self.step()
        return self.report

    # -- per-mode forward/backward ------------------------------------------

    def _pixel_batch(self, height: int, width: int):
        if self.config.full_image:
            rows, cols = np.divmod(np.arange(height * width), width)
        else:
            flat = self.rng.integers(0, height * width, size=self.config.batch_size)
            rows, cols = np.divmod(flat, width)
        return rows, cols

    def _apply(self, table_grads, mlp_grads, extra_loss: float) -> float:
        beta = self.config.beta
        loss_sp = 0.0
        if beta > 0.0:
            # fused sparsity term: beta * mean|tables|, sign gradient
            scratch = self._scratch
            np.abs(self.field.tables, out=scratch)
            loss_sp = beta * float(scratch.mean())
            np.sign(self.field.tables, out=scratch)
            scratch *= beta / scratch.size
            table_grads += scratch
        arrays = self.field.param_arrays()
        grads = [table_grads] + mlp_grads.arrays()
        adam_step(arrays, grads, self.adam, self.config.lr)
        return extra_loss + loss_sp

    def _step_2d(self, scene: TrainScene) -> float:
        field = self.field
        img = scene.dataset.images[0]
        height, width = img.shape[:2]
        if self.config.full_image:
            flat = np.arange(height * width)
        else:
            flat = self.rng.integers(0, height * width, size=self.config.batch_size)
        rows, cols = np.divmod(flat, width)
        x = np.stack([(cols + 0.5) / width, (rows + 0.5) / height], axis=-1)
        target = img[rows, cols]

        tape = self._grid_tapes[scene.name].take(flat)
        feats = encode(x, scene.key_set, field.tables, field.config, tape)
        raw, mlp_tape = mlp_forward(field.mlp, feats)
        pred = sigmoid(raw)
        loss, dpred = mse_loss(pred, target)

        draw = (dpred * pred * (1.0 - pred)).astype(field.dtype, copy=False)
        mlp_grads, dfeats = mlp_backward(field.mlp, mlp_tape, draw)
        table_grads = np.zeros_like(field.tables)
        encode_backward(x, scene.key_set, dfeats, table_grads, field.config, tape)
        return self._apply(table_grads, mlp_grads, loss)

    def _step_3d(self, scene: TrainScene) -> float:
        field = self.field
        ds = scene.dataset
        view = int(self.rng.integers(ds.n_views))
        cam = ds.cameras[view]
        rows, cols = self._pixel_batch(ds.height, ds.width)
        target = ds.images[view][rows, cols].astype(np.float64)
        background = np.ones(3) if ds.white_background else np.zeros(3)

        origins, dirs = generate_rays(cam, np.stack([rows, cols], axis=-1))
        t_near, t_far, hit = clip_to_scene(field, origins, dirs, cam.near, cam.far)
        pred = np.tile(background, (origins.shape[0], 1))

        n_hit = int(hit.sum())
        table_grads = np.zeros_like(field.tables)
        if n_hit == 0:
            loss, _ = mse_loss(pred, target)
            from .mlp import MlpParams
            zero = MlpParams([np.zeros_like(w) for w in field.mlp.weights],
                             [np.zeros_like(b) for b in field.mlp.biases])
            return self._apply(table_grads, zero, loss)

        n = self.config.n_samples
        ts, deltas = sample_along_ray(t_near[hit], t_far[hit], n, self.rng)
        pts = origins[hit][:, None, :] + ts[..., None] * dirs[hit][:, None, :]
        unit = field.world_to_unit(pts.reshape(-1, 3))
        dirs_rep = np.repeat(dirs[hit], n, axis=0)

        from .field import encode_direction
        tape = encode_tape(unit, scene.key_set, field.config, field.dtype)
        feats = encode(unit, scene.key_set, field.tables, field.config, tape)
        sh = encode_direction(dirs_rep).astype(field.dtype)
        inputs = np.concatenate([feats, sh], axis=1)
        raw, mlp_tape = mlp_forward(field.mlp, inputs)

        color = sigmoid(raw[:, :3].astype(np.float64))
        raw_tau = raw[:, 3].astype(np.float64)
        density = np.exp(np.minimum(raw_tau, DENSITY_EXP_CLAMP))
        color_r = color.reshape(n_hit, n, 3)
        density_r = density.reshape(n_hit, n)
        pred[hit] = composite_pixel(color_r, density_r, deltas, background)
        loss, dpred = mse_loss(pred, target)

        dcolor, ddensity = composite_backward(color_r, density_r, deltas,
                                              background, dpred[hit])
        draw = np.empty_like(raw)
        draw[:, :3] = (dcolor.reshape(-1, 3) * color * (1.0 - color)).astype(field.dtype)
        draw[:, 3] = (ddensity.reshape(-1) * density
                      * (raw_tau < DENSITY_EXP_CLAMP)).astype(field.dtype)
        mlp_grads, dinputs = mlp_backward(field.mlp, mlp_tape, draw)
        dfeats = dinputs[:, :field.config.feature_width]
        encode_backward(unit, scene.key_set, dfeats, table_grads, field.config, tape)
        return self._apply(table_grads, mlp_grads, loss)

    # -- evaluation -----------------------------------------------------------

    def evaluate(self) -> list[dict]:
        """PSNR of each roster scene on held-out (or training) views."""
        records = []
        for scene in self.roster:
            recent = [l for (_, name, l) in self.report.losses[-200:]
                      if name == scene.name]
            rec = {
                "iter": self.iteration,
                "scene": scene.name,
                "loss": float(np.mean(recent)) if recent else None,
            }
            value = self._eval_psnr(scene)
            if value is not None:
                rec["psnr"] = value
            records.append(rec)
        self.report.evals.extend(records)
        if self.log_path:
            write_train_log(self.log_path, records)
        return records

    def _eval_psnr(self, scene: TrainScene):
        ds = scene.eval_dataset or scene.dataset
        if self.field.mode == MODE_IMAGE2D:
            pred = render_image_2d(self.field, scene.key_set, ds.height, ds.width)
            return _finite_psnr(pred, ds.images[0])
        values = []
        for i in range(min(self.config.eval_views, ds.n_views)):
            pred = render_image(self.field, ds.cameras[i], scene.key_set,
                                n_samples=self.config.n_samples)
            values.append(_finite_psnr(pred, ds.images[i]))
        return float(np.mean(values)) if values else None


def _finite_psnr(a, b) -> float:
    value = psnr(a, b)
    return float(value) if np.isfinite(value) else 999.0


def render_image_2d(field: StegoField, key_set: KeySet, height: int, width: int,
                    chunk: int = 16384) -> np.ndarray:
    """Evaluate the 2d field at every pixel center of an HxW grid."""
    from .field import field_query_2d
    rows, cols = np.divmod(np.arange(height * width), width)
    x = np.stack([(cols + 0.5) / width, (rows + 0.5) / height], axis=-1)
    out = np.empty((height * width, 3), dtype=np.float32)
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, min(start + chunk, x.shape[0]))
        out[sl] = field_query_2d(field, x[sl], key_set)
    return out.reshape(height, width, 3)


def train_step(trainer: Trainer) -> float:
    """Advance the trainer by one iteration and return the step loss."""
    return trainer.step()


def train(field: StegoField, roster: list[TrainScene], config: TrainConfig,
          log_path=None) -> tuple[StegoField, TrainReport]:
    """Run the full loop; deterministic for a given config and seed."""
    trainer = Trainer(field, roster, config, log_path)
    report = trainer.run()
    return field, report
