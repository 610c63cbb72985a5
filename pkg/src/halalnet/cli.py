"""Command-line front end.

Subcommands: segment, train, eval, infer, synth, augment-preview.  Every run
logs its fully resolved settings, and all randomness flows from --seed
through named substreams, so rerunning a command with the same inputs and
seed reproduces its output files.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from . import backbone, configfile, datakit, inference, metrics, seeds, siamese, training
from .augment import AugmentationPipeline
from .errors import (
    ConfigError,
    DataError,
    DegenerateHistogramError,
    HalalNetError,
    InvalidInputError,
    NumericalError,
    SamplingError,
    StratificationError,
)
from .imaging import SegmentationParams, StructuringElement, mask_to_image, segment_cut

log = logging.getLogger("halalnet")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse's default usage-error exit code is 2; this toolkit uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _log_resolved(args: argparse.Namespace) -> None:
    pairs = [f"{k}={v!r}" for k, v in sorted(vars(args).items()) if k != "func"]
    log.info("resolved config: %s", " ".join(pairs))


def _image_files(directory: str) -> list[str]:
    if not os.path.isdir(directory):
        raise DataError(f"no such input directory: {directory}")
    names = [n for n in sorted(os.listdir(directory))
             if n.lower().endswith((".ppm", ".pgm", ".pnm"))]
    return [os.path.join(directory, n) for n in names]


def _seg_params(args) -> SegmentationParams:
    return SegmentationParams(
        blur_kernel=args.blur_kernel,
        blur_sigma=args.blur_sigma,
        channel=args.channel,
        se=StructuringElement(args.se_shape, args.se_size),
        invert=args.invert,
    )


def _add_seg_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--blur-kernel", type=int, default=15)
    p.add_argument("--blur-sigma", type=float, default=None)
    p.add_argument("--channel", choices=("y", "cb", "cr"), default="cr")
    p.add_argument("--se-shape", choices=("square", "ellipse"), default="square")
    p.add_argument("--se-size", type=int, default=5)
    p.add_argument("--invert", action="store_true")


def _load_backbone(name_or_path: str) -> backbone.BackboneConfig:
    if os.path.exists(name_or_path):
        return backbone.load_config(name_or_path)
    return backbone.builtin_config(name_or_path)


def _square_input(cfg: backbone.BackboneConfig) -> int:
    h, w, _ = cfg.input_shape
    if h != w:
        raise ConfigError(f"pool preparation needs a square network input, got {h}x{w}")
    return h


def _split_manifest(manifest: datakit.DatasetManifest, seed: int):
    records = manifest.records
    labels = [r.cls for r in records]
    train_r, val_r, test_r = training.split_dataset(
        records, seed=seeds.rng(seed, "split").integers(0, 2**32), labels=labels)
    mk = lambda recs: datakit.DatasetManifest(root=manifest.root, records=list(recs))
    return mk(train_r), mk(val_r), mk(test_r)


# ---------------------------------------------------------------------------
# subcommands


def cmd_segment(args) -> int:
    params = _seg_params(args)
    files = _image_files(args.input_dir)
    os.makedirs(os.path.join(args.output_dir, "masks"), exist_ok=True)
    os.makedirs(os.path.join(args.output_dir, "masked"), exist_ok=True)
    rows = ["path,status,foreground_fraction"]
    failures = 0
    for path in files:
        img = datakit.decode_image(path)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        stem = os.path.splitext(os.path.basename(path))[0]
        try:
            mask, masked = segment_cut(img, params)
        except DegenerateHistogramError as exc:
            failures += 1
            log.info("segment %s: failed (%s)", path, exc)
            rows.append(f"{path},failed,0.000000")
            continue
        datakit.encode_image(mask_to_image(mask), os.path.join(args.output_dir, "masks", stem + ".pgm"))
        datakit.encode_image(masked, os.path.join(args.output_dir, "masked", stem + ".ppm"))
        frac = float(mask.mean())
        rows.append(f"{path},ok,{frac:.6f}")
    summary = os.path.join(args.output_dir, "summary.csv")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    log.info("segmented %d images (%d failures); summary at %s",
             len(files), failures, summary)
    return EXIT_OK


def _train_config(args) -> training.TrainConfig:
    scope: dict[str, str] = {}
    if args.config:
        doc = configfile.parse_kv_text(
            open(args.config, "r", encoding="utf-8").read(), args.config)
        if doc.sections:
            raise ConfigError(f"{args.config}: training config takes no [sections]")
        scope.update(doc.top)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set wants key=value, got {item!r}")
        key, _, value = item.partition("=")
        scope[key.strip()] = value.strip()
    cfg = training.train_config_from_mapping(scope, args.config or "<cli>")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    bcfg = _load_backbone(args.backbone)
    manifest = datakit.load_manifest(args.manifest)
    train_m, val_m, _ = _split_manifest(manifest, cfg.seed)
    size = _square_input(bcfg)
    pools, stats = datakit.prepare_pools(train_m, segmented_prob=cfg.segmented_prob,
                                         target_size=size)
    val_pools, _ = datakit.prepare_pools(val_m, segmented_prob=cfg.segmented_prob,
                                         target_size=size)
    log.info("pools: %s (segmentation failures: %d)", stats.per_class,
             stats.segmentation_failures)

    adam = None
    start_epoch = 0
    if args.resume:
        model, state = siamese.load(args.resume)
        if backbone.to_text(model.config) != backbone.to_text(bcfg):
            raise ConfigError(f"checkpoint {args.resume} was trained with a different backbone")
        if state is not None:
            adam = ad.AdamState(lr=state.lr, decay=state.decay, t=state.step,
                                m=dict(state.m), v=dict(state.v))
            start_epoch = state.epoch
        log.info("resuming from %s at epoch %d", args.resume, start_epoch)
    else:
        model = siamese.build(bcfg, seeds.rng(cfg.seed, "init"))

    ckpt, history = training.train(model, pools, cfg, val_pools=val_pools,
                                   adam=adam, start_epoch=start_epoch, log=log.info)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.hnet")
    siamese.save_checkpoint(ckpt, ckpt_path)
    history_path = os.path.join(args.out, "history.csv")
    history.save_csv(history_path)
    best = ckpt.train_state
    log.info("wrote %s (best val acc %.4f) and %s", ckpt_path,
             best.best_val if best else float("nan"), history_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.pairs < 1:
        raise ConfigError(f"--pairs must be >= 1, got {args.pairs}")
    model, _ = siamese.load(args.checkpoint)
    manifest = datakit.load_manifest(args.manifest)
    if args.split != "all":
        train_m, val_m, test_m = _split_manifest(manifest, args.seed)
        manifest = {"train": train_m, "val": val_m, "test": test_m}[args.split]
    size = _square_input(model.config)
    pools, _ = datakit.prepare_pools(manifest, target_size=size)
    rng = seeds.rng(args.seed, "eval")
    pairs = training.make_val_pairs(pools, args.pairs, rng)
    loss, acc, preds = training.evaluate(model, pairs, threshold=args.threshold)
    labels = [p.label for p in pairs]
    cm = metrics.confusion(preds, labels)
    report = metrics.macro_metrics(cm, loss=loss)
    sys.stdout.write(metrics.report_table_text(cm, report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(metrics.report_csv_text(cm, report))
        log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _ = siamese.load(args.checkpoint)
    params = _seg_params(args)
    control = inference.load_control_set(args.control, model.input_shape,
                                         segment=not args.no_segment, params=params)
    for path in args.images:
        if not os.path.exists(path):
            raise DataError(f"no such image: {path}")
        img = datakit.decode_image(path)
        query = inference.prepare_query(img, model.input_shape,
                                        segment=not args.no_segment, params=params)
        label, scores = inference.classify(model, query, control, aggregate=args.aggregate)
        shown = " ".join(f"{k}={scores[k]:.4f}" for k in sorted(scores))
        sys.stdout.write(f"{path} {label} {shown}\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    scope: dict[str, str] = {}
    if args.spec:
        doc = configfile.parse_kv_text(
            open(args.spec, "r", encoding="utf-8").read(), args.spec)
        if doc.sections:
            raise ConfigError(f"{args.spec}: synthetic spec takes no [sections]")
        scope.update(doc.top)
    spec = datakit.synthetic_spec_from_mapping(scope, args.spec or "<cli>")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for name in ("size", "count_a", "count_b", "noise"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        spec = replace(spec, **overrides)
    manifest = datakit.generate_synthetic(spec, args.out_dir)
    log.info("wrote %d images under %s (manifest.csv alongside)",
             len(manifest.records), args.out_dir)
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    if not os.path.exists(args.image):
        raise DataError(f"no such image: {args.image}")
    img = datakit.decode_image(args.image)
    pipeline = AugmentationPipeline(probability=args.probability,
                                    seed=seeds.substream(args.seed, "augment"))
    os.makedirs(args.out_dir, exist_ok=True)
    for i, out in enumerate(pipeline.preview(img, args.n)):
        path = os.path.join(args.out_dir, f"preview_{i:02d}.ppm"
                            if out.ndim == 3 else f"preview_{i:02d}.pgm")
        datakit.encode_image(out, path)
        log.info("%s: %s", path, ",".join(pipeline.last_applied) or "(none)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="halalnet",
                     description="One-shot cut-verification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="batch-run the segmentation chain over a directory")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    _add_seg_options(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train on a manifest, writing checkpoint + history")
    p.add_argument("manifest")
    p.add_argument("--config", default=None, help="key = value training config file")
    p.add_argument("--backbone", default="desk", help="builtin name or config path")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one training config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a seeded pair batch and print the metric report")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--pairs", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--out", default=None, help="also write the report as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify images against a control set")
    p.add_argument("checkpoint")
    p.add_argument("control", help="manifest of '<class> <image>' lines")
    p.add_argument("images", nargs="+")
    p.add_argument("--aggregate", choices=inference.AGGREGATES, default="mean")
    p.add_argument("--no-segment", action="store_true",
                   help="skip segmentation preprocessing")
    _add_seg_options(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", help="generate the deterministic synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--spec", default=None, help="key = value spec file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--count-a", type=int, default=None, dest="count_a")
    p.add_argument("--count-b", type=int, default=None, dest="count_b")
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment-preview", help="write n augmented variants of one image")
    p.add_argument("image")
    p.add_argument("out_dir")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--probability", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment_preview)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _log_resolved(args)
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except (DataError, SamplingError, StratificationError, OSError) as exc:
        log.error("error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("error: %s", exc)
        return EXIT_NUMERIC
    except HalalNetError as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
