"""Command-line entry points for key generation, training, rendering and analysis.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
`--keys default` names the default key explicitly, so rendering without a
secret is a deliberate, auditable action. `STEGOFIELD_THREADS` caps render
worker threads (0 = serial, the default).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from . import security
from .errors import DataError, NumericsError
from .field import MODE_IMAGE2D, MODE_RADIANCE3D, new_field
from .hashgrid import HashGridConfig
from .keys import KeySet, default_key_set, generate_key_set, load_key_set, save_key_set
from .metrics import psnr, ssim
from .render import render_image
from .scene_io import (load_blender_dataset, load_image_2d, load_image_pair,
                       load_checkpoint, load_png, save_checkpoint, save_png)
from .train import TrainConfig, build_roster, render_image_2d, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _emit(payload, out_path=None):
    text = json.dumps(_json_safe(payload), indent=2)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _load_keys(arg: str, dim: int) -> KeySet:
    if arg == "default":
        return default_key_set(dim)
    return load_key_set(arg)


def _apply_config_file(parser: argparse.ArgumentParser, args: list[str]) -> list[str]:
    """Pull `--config FILE` out of argv and turn its key=value lines into defaults."""
    if "--config" not in args:
        return args
    i = args.index("--config")
    if i + 1 >= len(args):
        raise _UsageError("--config needs a file argument")
    path = args[i + 1]
    rest = args[:i] + args[i + 2:]
    overrides = {}
    try:
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise _UsageError(f"bad config line {line!r} (expected key=value)")
                overrides[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    applied = set()
    for sub in _walk_parsers(parser):
        updates = {}
        for action in sub._actions:
            if action.dest in overrides:
                value = overrides[action.dest]
                if isinstance(action, argparse._StoreTrueAction):
                    updates[action.dest] = value.lower() in ("1", "true", "yes")
                elif action.type is not None:
                    updates[action.dest] = action.type(value)
                else:
                    updates[action.dest] = value
                applied.add(action.dest)
        if updates:
            sub.set_defaults(**updates)
    unknown = set(overrides) - applied
    if unknown:
        raise _UsageError(f"unknown config keys {sorted(unknown)}")
    return rest


def _walk_parsers(parser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                yield from _walk_parsers(sub)


def _build_parser() -> _Parser:
    parser = _Parser(prog="stegofield",
                     description="Key-controlled steganographic neural fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a secret key set")
    p.add_argument("--d", type=int, default=3, help="key dimensionality (2 or 3)")
    p.add_argument("--m", type=int, default=1, help="number of keys in the set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=int, default=16, help="grid level count L")
    p.add_argument("--out", required=True, help="key file to write")

    p = sub.add_parser("train", help="fit a cover scene and optional hidden scenes")
    p.add_argument("--mode", choices=["2d", "3d"], required=True)
    p.add_argument("--cover", required=True, help="cover image (2d) or dataset dir (3d)")
    p.add_argument("--hidden", nargs="*", default=[],
                   help="hidden images or dataset dirs")
    p.add_argument("--keys", nargs="*", default=[],
                   help="one key file per hidden scene")
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--eta", type=float, default=1e-2, help="learning rate")
    p.add_argument("--beta", type=float, default=1e-6, help="sparsity loss weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=0,
                   help="pixels (2d) or rays (3d) per step; 0 = mode default")
    p.add_argument("--samples", type=int, default=64, help="samples per ray (3d)")
    p.add_argument("--levels", type=int, default=16)
    p.add_argument("--table-size", type=int, default=2**19)
    p.add_argument("--features", type=int, default=2)
    p.add_argument("--nmin", type=int, default=16)
    p.add_argument("--nmax", type=int, default=512)
    p.add_argument("--hidden-width", type=int, default=64)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--full-image", action="store_true",
                   help="fit whole views instead of sampled batches")
    p.add_argument("--black-background", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--log", default=None, help="JSON-lines training log")

    for name in ("render", "extract"):
        p = sub.add_parser(name, help="render a checkpoint under a key set")
        p.add_argument("--ckpt", required=True)
        p.add_argument("--keys", required=(name == "extract"), default="default",
                       help="key file, or 'default' for the cover key")
        p.add_argument("--out", required=True, help="PNG to write")
        p.add_argument("--image", action="store_true", help="2d-mode full image")
        p.add_argument("--width", type=int, default=256, help="2d render width")
        p.add_argument("--height", type=int, default=256, help="2d render height")
        p.add_argument("--data", default=None, help="dataset dir for camera poses (3d)")
        p.add_argument("--split", default="test")
        p.add_argument("--camera-index", type=int, default=0)
        p.add_argument("--samples", type=int, default=64)

    p = sub.add_parser("attack", help="partial key disclosure sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--keys", required=True, help="the true secret key file")
    p.add_argument("--data", nargs=2, required=True, metavar=("COVER", "HIDDEN"),
                   help="ground-truth data for the cover and hidden scenes")
    p.add_argument("--provisions", default="0,0.25,0.5,0.75,1")
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", default=None, help="JSON report path")

    p = sub.add_parser("analyze", help="security arithmetic")
    asub = p.add_subparsers(dest="analysis", required=True)
    pk = asub.add_parser("keyspace")
    pk.add_argument("--d", type=int, default=3)
    pk.add_argument("--m", type=int, default=1)
    pk.add_argument("--fps", type=float, default=20.0)
    pc = asub.add_parser("collisions")
    pc.add_argument("--ckpt", default=None, help="count active cells from a checkpoint")
    pc.add_argument("--keys", default=None, help="secret key file for the hidden scene")
    pc.add_argument("--kappa", default=None, help="comma-separated active-cell counts")
    pc.add_argument("--table-size", type=int, default=2**19)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    return parser


# -- subcommand bodies --------------------------------------------------------

def _cmd_keygen(args) -> int:
    key_set = generate_key_set(args.m, args.d, seed=args.seed, levels=args.levels)
    save_key_set(key_set, args.out, levels=args.levels)
    _emit({"written": args.out, "d": args.d, "m": args.m,
           "primes": [list(k.primes) for k in key_set.keys]})
    return 0


def _cmd_train(args) -> int:
    if len(args.hidden) != len(args.keys):
        raise _UsageError("need exactly one --keys file per --hidden scene")
    mode = MODE_IMAGE2D if args.mode == "2d" else MODE_RADIANCE3D
    dim = 2 if args.mode == "2d" else 3
    white_bg = not args.black_background

    config = HashGridConfig(levels=args.levels, table_size=args.table_size,
                            features=args.features, coarsest=args.nmin,
                            finest=args.nmax, dim=dim)
    if args.mode == "2d":
        datasets = [load_image_2d(args.cover)]
        for path in args.hidden:
            datasets.append(load_image_2d(path))
    else:
        datasets = [load_blender_dataset(args.cover, "train", white_bg)]
        for path in args.hidden:
            datasets.append(load_blender_dataset(path, "train", white_bg))

    hidden = [(ds, load_key_set(k)) for ds, k in zip(datasets[1:], args.keys)]
    roster = build_roster(datasets[0], hidden, dim)
    field = new_field(config, mode, seed=args.seed, hidden_width=args.hidden_width)
    batch = args.batch or (4096 if args.mode == "2d" else 1024)
    train_cfg = TrainConfig(iters=args.iters, lr=args.eta, beta=args.beta,
                            batch_size=batch, n_samples=args.samples,
                            seed=args.seed, eval_every=args.eval_every,
                            full_image=args.full_image)
    field, report = train(field, roster, train_cfg, log_path=args.log)
    save_checkpoint(field, args.out)
    last_evals = report.evals[-len(roster):] if report.evals else []
    _emit({"checkpoint": args.out, "iters": args.iters,
           "final": last_evals})
    return 0


def _cmd_render(args) -> int:
    field = load_checkpoint(args.ckpt)
    if field.mode == MODE_IMAGE2D:
        keys = _load_keys(args.keys, 2)
        img = render_image_2d(field, keys, args.height, args.width)
    else:
        keys = _load_keys(args.keys, 3)
        if args.data is None:
            raise _UsageError("3d rendering needs --data for camera poses")
        ds = load_blender_dataset(args.data, args.split, field.white_background)
        if not 0 <= args.camera_index < ds.n_views:
            raise _UsageError(f"--camera-index outside [0, {ds.n_views})")
        img = render_image(field, ds.cameras[args.camera_index], keys,
                           n_samples=args.samples)
    save_png(args.out, img)
    _emit({"written": args.out})
    return 0


def _cmd_attack(args) -> int:
    field = load_checkpoint(args.ckpt)
    secret = load_key_set(args.keys)
    provisions = [float(p) for p in args.provisions.split(",") if p != ""]
    if field.mode == MODE_IMAGE2D:
        cover_ds, hidden_ds = load_image_pair(args.data[0], args.data[1])
    else:
        cover_ds = load_blender_dataset(args.data[0], args.split,
                                        field.white_background)
        hidden_ds = load_blender_dataset(args.data[1], args.split,
                                         field.white_background)
    rows = security.partial_key_attack(field, secret, cover_ds, hidden_ds,
                                       provisions, n_samples=args.samples)
    _emit({"provisions": rows}, args.out)
    return 0


def _cmd_analyze(args) -> int:
    if args.analysis == "keyspace":
        report = security.key_space(dim=args.d, n_keys=args.m)
        log10_years = security.brute_force_log10_years(report.bits, args.fps)
        payload = {
            "available_primes": report.pool_size,
            "d": report.dim,
            "m": report.n_keys,
            "bits": report.bits,
            "log10_key_space": report.log10_size,
            "key_space": str(report.key_space) if report.key_space else None,
            "brute_force_log10_years": log10_years,
            "brute_force_years": 10.0 ** log10_years if log10_years < 300 else "inf",
            "fps": args.fps,
        }
        _emit(payload)
        return 0
    # collisions
    if args.kappa:
        kappas = [int(k) for k in args.kappa.split(",")]
        table_size = args.table_size
    elif args.ckpt:
        field = load_checkpoint(args.ckpt)
        kappas = [security.active_cell_count(field, default_key_set(field.config.dim))]
        if args.keys:
            kappas.append(security.active_cell_count(field, load_key_set(args.keys)))
        table_size = field.config.table_size
    else:
        raise _UsageError("analyze collisions needs --kappa or --ckpt")
    report = security.fill_rate(kappas, table_size)
    _emit({
        "active_cells": list(report.active_cells),
        "table_size": report.table_size,
        "fill_rate_per_scene": list(report.per_scene),
        "fill_rate_combined": report.combined,
        "expected_collisions": report.expected_collisions,
    })
    return 0


def _cmd_metrics(args) -> int:
    a = load_png(args.a)
    b = load_png(args.b)
    _emit({"psnr": psnr(a, b), "ssim": ssim(a, b)})
    return 0


_COMMANDS = {
    "keygen": _cmd_keygen,
    "train": _cmd_train,
    "render": _cmd_render,
    "extract": _cmd_render,
    "attack": _cmd_attack,
    "analyze": _cmd_analyze,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
