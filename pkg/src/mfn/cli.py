"""Unified command-line entry point.

Subcommands: prepare-data, train, inpaint, eval, cluster-priors.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
The config file path comes from --config or the MFN_CONFIG environment
variable (the flag wins); outputs land only under the given --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ABLATION_FLAGS, Config
from .errors import DataError, MfnError, NumericError, UsageError

_LABEL_PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (174, 199, 232), (255, 187, 120),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfn", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("prepare-data", help="filter images and build training pairs")
    p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--out", required=True, help="output directory for pairs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--overlap-threshold", type=float, default=None)
    p.add_argument("--moving-ratio-max", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--dry-run", action="store_true",
                   help="report would-be counts without writing anything")

    p = sub.add_parser("train", help="run adversarial training")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--out", required=True, help="run directory for logs and checkpoints")
    p.add_argument("--ablation", choices=ABLATION_FLAGS, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--dry-run", action="store_true",
                   help="validate config and data, print the plan, write nothing")

    p = sub.add_parser("inpaint", help="inpaint one image with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="8-bit mask image, 255 = hole")
    p.add_argument("--out", required=True, help="output path for the composited result")
    p.add_argument("--raw", default=None, help="optional path for the uncomposited output")
    p.add_argument("--grid", default=None,
                   help="optional side-by-side input|mask|output figure")

    p = sub.add_parser("eval", help="score a checkpoint on prepared test pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True,
                   help="pairs.jsonl from prepare-data (or its directory)")
    p.add_argument("--out", required=True, help="output CSV table")
    p.add_argument("--split", default="test", choices=("train", "test"))

    p = sub.add_parser("cluster-priors", help="cluster learned prior features of one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--out", required=True, help="output 8-bit indexed label image")
    p.add_argument("--level", type=int, default=0, help="pyramid level (0 = smallest)")
    p.add_argument("--clusters", type=int, default=6)
    p.add_argument("--merge-dist", type=float, default=0.05)
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(path_arg: str | None) -> Config:
    path = path_arg or os.environ.get("MFN_CONFIG")
    if path:
        return Config.from_toml(path)
    return Config()


def _cmd_prepare_data(args) -> int:
    from .data import load_manifest, prepare_dataset

    cfg = _load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.overlap_threshold is not None:
        overrides["overlap_threshold"] = args.overlap_threshold
    if args.moving_ratio_max is not None:
        overrides["moving_ratio_max"] = args.moving_ratio_max
    dcfg = dataclasses.replace(cfg.data, **overrides) if overrides else cfg.data

    records = load_manifest(args.manifest, moving_classes=dcfg.moving_classes)
    summary = prepare_dataset(records, dcfg, args.out, dry_run=args.dry_run)
    prefix = "[dry-run] would keep" if args.dry_run else "kept"
    print(f"{prefix} {summary['kept']}/{summary['records']} records "
          f"({summary['rejected']} rejected by the moving-object filter)")
    if not args.dry_run:
        print(f"wrote {summary['pairs']} pairs under {summary['out_dir']}")
    return 0


def _cmd_train(args) -> int:
    from .data import load_pairs
    from .training import ArrayDataset, build_models, train_loop

    cfg = _load_config(args.config)
    if args.ablation:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, ablation=(args.ablation,)))

    pairs = load_pairs(args.data, split="train")
    if not pairs:
        raise DataError(f"no training pairs found under {args.data}")
    if args.dry_run:
        bundle = build_models(cfg.model, cfg.train.ablation)
        print(f"[dry-run] {len(pairs)} training pairs; "
              f"{bundle.parameter_count()} trainable parameters; "
              f"{cfg.train.max_iters} iterations planned; nothing written")
        return 0
    dataset = ArrayDataset.from_pairs(pairs)
    final = train_loop(cfg, dataset, args.out, resume_from=args.resume)
    print(f"finished; final checkpoint at {final}")
    return 0


def _load_bundle(checkpoint_path: str):
    from .training import load_checkpoint, restore_bundle

    payload = load_checkpoint(checkpoint_path)
    return restore_bundle(payload)


def _cmd_inpaint(args) -> int:
    from .data.masks import load_mask
    from .data.pipeline import load_image, save_image
    from .inference import inpaint_arrays

    _, bundle = _load_bundle(args.checkpoint)
    image = load_image(args.image)
    mask = load_mask(args.mask)
    if mask.shape != image.shape[:2]:
        raise DataError(
            f"mask size {mask.shape} does not match image {image.shape[:2]}")
    raw, comp = inpaint_arrays(bundle, image, mask.data)
    _ensure_parent(args.out)
    save_image(comp, args.out)
    if args.raw:
        _ensure_parent(args.raw)
        save_image(raw, args.raw)
    if args.grid:
        masked = image * (1.0 - mask.data[..., None])
        mask_rgb = np.repeat(mask.data[..., None].astype(np.float32), 3, axis=2)
        grid = np.concatenate([masked, mask_rgb, comp], axis=1)
        _ensure_parent(args.grid)
        save_image(grid, args.grid)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .data.masks import load_mask
    from .data.pipeline import load_image, load_pairs
    from .inference import make_predictor
    from .metrics import EvalSample, evaluate_pairs, feature_distance, write_metric_table

    _, bundle = _load_bundle(args.checkpoint)
    pairs = load_pairs(args.manifest, split=args.split)
    if not pairs:
        raise DataError(f"no '{args.split}' pairs in {args.manifest}")
    samples = [
        EvalSample(gt=load_image(p.image), mask=load_mask(p.mask).data, name=p.pair_id)
        for p in pairs
    ]
    predict = make_predictor(bundle)
    lpips_fn = lambda a, b: feature_distance(a, b, bundle.pretext)
    rows, average = evaluate_pairs(predict, samples, lpips_fn=lpips_fn)
    _ensure_parent(args.out)
    write_metric_table(rows, average, args.out)
    print(f"wrote {args.out}")
    print(json.dumps({"bucket": average.bucket, "count": average.count,
                      "psnr": average.psnr, "ssim": average.ssim,
                      "mae": average.mae, "rmse": average.rmse}))
    return 0


def _cmd_cluster_priors(args) -> int:
    from PIL import Image

    from .data.masks import load_mask
    from .data.pipeline import load_image
    from .inference import cluster_prior_features

    _, bundle = _load_bundle(args.checkpoint)
    image = load_image(args.image)
    mask = load_mask(args.mask).data if args.mask else None
    labels = cluster_prior_features(
        bundle, image, mask=mask, level=args.level, clusters=args.clusters,
        merge_dist=args.merge_dist, max_iter=args.max_iter, seed=args.seed)
    out = Image.fromarray(labels.astype(np.uint8), mode="P")
    palette = []
    for i in range(256):
        palette.extend(_LABEL_PALETTE[i % len(_LABEL_PALETTE)])
    out.putpalette(palette)
    _ensure_parent(args.out)
    out.save(args.out)
    print(f"wrote {args.out} ({int(labels.max()) + 1} clusters)")
    return 0


def _ensure_parent(path: str) -> None:
    parent = Path(path).parent
    if parent and not parent.exists():
        parent.mkdir(parents=True, exist_ok=True)


_COMMANDS = {
    "prepare-data": _cmd_prepare_data,
    "train": _cmd_train,
    "inpaint": _cmd_inpaint,
    "eval": _cmd_eval,
    "cluster-priors": _cmd_cluster_priors,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MfnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:  # no stack traces at the user boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
