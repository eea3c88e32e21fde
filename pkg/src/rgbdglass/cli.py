"""Command-line interface: ``rgbdglass {synth,train,eval,predict,stats,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np
from PIL import Image

from . import dataio
from .checkpoint import load_network
from .config import SCHEMA, load_run_config
from .errors import CheckpointError, ConfigurationError, DataError, GlassNetError, UsageError
from .gradcheck import run_all
from .glassnet import GlassNet
from .metrics import evaluate_image, evaluate_set, format_report
from .synth import SynthConfig, generate
from .training import evaluate, predict, train

log = logging.getLogger("rgbdglass")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
TEST_FRACTION = 0.1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def split_counts(count):
    """(n_train, n_test) for a 90/10 split; any set of two or more keeps one test id."""
    n_test = 0 if count < 2 else max(1, int(round(count * TEST_FRACTION)))
    return count - n_test, n_test


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = SynthConfig(
        size=args.size,
        n_rects=(args.min_rects, args.max_rects),
        p_missing_in_glass=args.p_in,
        p_missing_outside=args.p_out,
        glass_appearance="identical" if args.identical else "attenuated",
        seed=args.seed,
    )
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    samples = generate(cfg, args.count, seed=args.seed, prefix=args.prefix)
    os.makedirs(args.out, exist_ok=True)
    for s in samples:
        dataio.write_sample(args.out, s)
    n_train, _ = split_counts(len(samples))
    ids = [s.id for s in samples]
    dataio.write_manifest(args.out, "train", ids[:n_train])
    dataio.write_manifest(args.out, "test", ids[n_train:])
    print(f"wrote {len(ids)} samples to {args.out} (train {n_train}, test {len(ids) - n_train})")
    return EXIT_OK


def _run_config(args):
    overrides = {key: getattr(args, key, None) for key in SCHEMA}
    return load_run_config(args.config, overrides)


def cmd_train(args):
    rc = _run_config(args)
    if not rc.dataset:
        raise UsageError("train needs a dataset (--dataset or 'dataset = ...' in --config)")
    net_cfg, tcfg = rc.build()
    samples = dataio.validate_manifest(rc.dataset, rc.split).samples()
    net = GlassNet(net_cfg, seed=rc.seed)
    log.info("training %d parameters on %d samples", net.num_parameters(), len(samples))
    result = train(net, samples, tcfg, out_dir=rc.out, resume=rc.resume or None, log=print)
    line = "final train " + evaluate(net, samples).line()
    print(line)
    with open(os.path.join(rc.out, "train.log"), "a") as f:
        f.write(line + "\n")
    print(f"checkpoint {result.checkpoint} after {result.steps} steps")
    return EXIT_OK


def _load_prob_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def cmd_eval(args):
    manifest = dataio.validate_manifest(args.dataset, args.split)
    samples = manifest.samples()
    if not samples:
        raise DataError(f"{args.split} split of {args.dataset} is empty")
    if args.predictions:
        # saved probability maps, compared at ground-truth resolution
        probs, gts = [], []
        for s in samples:
            path = os.path.join(args.predictions, f"{s.id}.png")
            if not os.path.exists(path):
                path = os.path.join(args.predictions, f"{s.id}_prob.png")
            if not os.path.exists(path):
                raise DataError(f"no prediction for {s.id} in {args.predictions}")
            p = _load_prob_png(path)
            if p.shape != s.mask.shape:
                p = dataio.resize_bilinear_np(p, *s.mask.shape)
            probs.append(p)
            gts.append(s.mask)
        report = evaluate_set(probs, gts, args.threshold)
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint or --predictions")
        net, _ = load_network(args.checkpoint)
        size = net.cfg.backbone.input_size
        probs = predict(net, samples)
        gts = [dataio.resize_nearest_np(s.mask, size, size) for s in samples]
        report = evaluate_set(probs, gts, args.threshold)
    if args.report:
        with open(args.report, "w") as f:
            for s, p, g in zip(samples, probs, gts):
                f.write(f"{s.id} {evaluate_image(p, g, args.threshold).line()}\n")
            f.write(f"mean {format_report(report)}\n")
    print(format_report(report))
    return EXIT_OK


def _write_prediction(out_dir, sample_id, prob):
    Image.fromarray(np.rint(prob * 255).astype(np.uint8)).save(os.path.join(out_dir, f"{sample_id}_prob.png"))
    Image.fromarray(((prob >= 0.5) * 255).astype(np.uint8)).save(os.path.join(out_dir, f"{sample_id}_mask.png"))


def cmd_predict(args):
    net, _ = load_network(args.checkpoint)
    if args.rgb or args.depth:
        if not (args.rgb and args.depth):
            raise UsageError("--rgb and --depth go together")
        with Image.open(args.rgb) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
        with Image.open(args.depth) as im:
            depth = np.asarray(im).astype(np.uint16)
        sid = os.path.splitext(os.path.basename(args.rgb))[0]
        samples = [dataio.Sample(sid, rgb, depth, np.zeros(depth.shape, np.uint8))]
    elif args.dataset:
        samples = dataio.validate_manifest(args.dataset, args.split).samples()
    else:
        raise UsageError("predict needs --dataset or --rgb/--depth")
    os.makedirs(args.out, exist_ok=True)
    for s, prob in zip(samples, predict(net, samples)):
        _write_prediction(args.out, s.id, prob)
    print(f"wrote {len(samples)} predictions to {args.out}")
    return EXIT_OK


def cmd_stats(args):
    splits = ("train", "test") if args.split == "all" else (args.split,)
    ids = []
    for split in splits:
        ids += dataio.validate_manifest(args.dataset, split).ids
    if not ids:
        raise DataError(f"no samples listed in {args.dataset}")
    samples = [dataio.read_sample(args.dataset, i) for i in ids]
    os.makedirs(args.out, exist_ok=True)
    heat = dataio.location_distribution([s.mask for s in samples], size=args.grid)
    Image.fromarray(np.rint(heat * 255).astype(np.uint8)).save(os.path.join(args.out, "location.png"))

    areas = [dataio.area_ratio(s.mask) for s in samples]
    contrasts = []
    for s in samples:
        try:
            contrasts.append(dataio.color_contrast_chi2(s.rgb, s.mask))
        except DataError:
            log.warning("%s: skipped in contrast statistics (mask is empty or full)", s.id)
    with open(os.path.join(args.out, "area.txt"), "w") as f:
        f.write(dataio.histogram_table(areas, title="area ratio") + "\n")
    with open(os.path.join(args.out, "contrast.txt"), "w") as f:
        f.write(dataio.histogram_table(contrasts, title="color contrast") + "\n")
    contrast_mean = f"{np.mean(contrasts):.4f}" if contrasts else "nan"
    print(f"images={len(samples)} area_mean={np.mean(areas):.4f} contrast_mean={contrast_mean}")
    return EXIT_OK


def cmd_gradcheck(args):
    ok, results, seconds = run_all(seed=args.seed, log=print)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed in {seconds:.1f}s")
    return EXIT_OK if ok else EXIT_RUNTIME


# --------------------------------------------------------------------------
# parser


def _add_run_flags(p):
    p.add_argument("--config", help="key = value run config file; flags below override it")
    p.add_argument("--dataset", help=SCHEMA["dataset"][2])
    p.add_argument("--split", help=SCHEMA["split"][2])
    p.add_argument("--profile", help=SCHEMA["profile"][2])
    p.add_argument("--seed", type=int, help=SCHEMA["seed"][2])
    p.add_argument("--epochs", type=int, help=SCHEMA["epochs"][2])
    p.add_argument("--batch-size", dest="batch_size", type=int, help=SCHEMA["batch_size"][2])
    p.add_argument("--lr", type=float, help=SCHEMA["lr"][2])
    p.add_argument("--lr-decay-epoch", dest="lr_decay_epoch", type=int, help=SCHEMA["lr_decay_epoch"][2])
    p.add_argument("--max-steps", dest="max_steps", type=int, help=SCHEMA["max_steps"][2])
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False, help="disable augmentation")
    p.add_argument("--no-daa", dest="daa", action="store_const", const=False, help="drop the attention stages")
    p.add_argument(
        "--freeze-gamma", dest="trainable_gamma", action="store_const", const=False,
        help="keep attention gains fixed at 0",
    )
    p.add_argument("--dtype", help=SCHEMA["dtype"][2])
    p.add_argument("--out", help=SCHEMA["out"][2])
    p.add_argument("--resume", help=SCHEMA["resume"][2])


def build_parser():
    keys = "\n".join(f"  {k:<16s} {help_}" for k, (_, _, help_) in SCHEMA.items())
    parser = _Parser(
        prog="rgbdglass",
        description="Glass surface segmentation from RGB-D images.",
        epilog=f"run config keys (for --config files):\n{keys}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic RGB-D dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--prefix", default="synth")
    p.add_argument("--p-in", dest="p_in", type=float, default=0.5, help="missing-depth rate inside glass")
    p.add_argument("--p-out", dest="p_out", type=float, default=0.02, help="missing-depth rate elsewhere")
    p.add_argument("--min-rects", dest="min_rects", type=int, default=1)
    p.add_argument("--max-rects", dest="max_rects", type=int, default=2)
    p.add_argument("--identical", action="store_true", help="glass pixels look exactly like the background")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or saved predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of <id>.png or <id>_prob.png probability maps")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", help="write per-image metric lines to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write probability maps and binary masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", default="test")
    p.add_argument("--rgb")
    p.add_argument("--depth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("stats", help="location heatmap, area and contrast tables")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="all", choices=("train", "test", "all"))
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=256)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except (UsageError, ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, GlassNetError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
