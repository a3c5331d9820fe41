"""Command-line interface.

Exit codes: 0 success, 1 other package error, 2 usage error, 3 file I/O error,
4 malformed input bytes (container, image, weight file), 5 model-hash mismatch,
6 configuration or manifest error.
"""

import argparse
import json
import os
import sys

import torch

from . import bitstream
from .errors import CpipsError

EXIT_IO = 3


def _seed(cfg):
    env = os.environ.get("CPIPS_SEED")
    if env is not None:
        cfg.seed = int(env)
    return cfg


def _config(args):
    from .training import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "quality", None) is not None:
        cfg.quality_index = args.quality
    return _seed(cfg)


def _codec(weights, quality=None):
    from .codec import Codec, resolve_weights

    return Codec.from_file(resolve_weights(weights, quality))


def _header_quality(path):
    with open(path, "rb") as f:
        header, _ = bitstream.parse(f.read())
    return header.quality_index


def cmd_pretrain(args):
    from .codec import save_codec
    from .data import load_classification_tensors, load_manifest
    from .training import JsonlLog, pretrain_classifier

    cfg = _config(args)
    manifest = load_manifest(args.manifest, "classification", cfg.arch.num_classes)
    images, labels = load_classification_tensors(manifest)
    log = JsonlLog(args.log)
    try:
        model = pretrain_classifier(images, labels, cfg, log=log)
    finally:
        log.close()
    save_codec(args.output, model, quality_index=0, lam=0.0)
    print(json.dumps(log.records[-1]) if log.records else "{}")
    return 0


def cmd_train(args):
    from .codec import model_from_entries, save_codec
    from .data import load_classification_tensors, load_manifest
    from .training import JsonlLog, train_joint
    from . import weights

    cfg = _config(args)
    manifest = load_manifest(args.manifest, "classification", cfg.arch.num_classes)
    images, labels = load_classification_tensors(manifest)
    pretrained = model_from_entries(weights.load(args.pretrained)) if args.pretrained else None
    log = JsonlLog(args.log)
    try:
        model = train_joint(images, labels, cfg, pretrained=pretrained, log=log,
                            allow_cold_start=args.cold_start)
    finally:
        log.close()
    out = args.output
    if os.path.isdir(out) or not out.endswith(".cpwt"):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, f"codec_q{cfg.quality_index}.cpwt")
    save_codec(out, model, cfg.quality_index, cfg.lam)
    if args.plot and log.records:
        from .plotting import plot_training

        plot_training(log.records, args.plot)
    print(out)
    return 0


def cmd_encode(args):
    from .data import load_image

    codec = _codec(args.weights, args.quality)
    if codec.quality_index != args.quality:
        from .errors import ConfigError

        raise ConfigError(f"weights are for quality {codec.quality_index}, not {args.quality}")
    enc = codec.encode(load_image(args.input))
    with open(args.output, "wb") as f:
        f.write(enc.data)
    if enc.clamped:
        print(f"warning: {enc.clamped} latents clamped to the coding support", file=sys.stderr)
    return 0


def cmd_decode(args):
    from .data import save_image

    codec = _codec(args.weights, _header_quality(args.input))
    with open(args.input, "rb") as f:
        img = codec.decode(f.read())
    save_image(args.output, img)
    return 0


def cmd_distance(args):
    from .metric import CpipsMetric, load_metric

    codec = _codec(args.weights, _header_quality(args.a))
    mw, judge = load_metric(args.metric)
    with open(args.a, "rb") as f:
        a = f.read()
    with open(args.b, "rb") as f:
        b = f.read()
    d = CpipsMetric(codec, mw, judge).distance_from_bitstreams(a, b)
    print(repr(d))
    return 0


def cmd_train_metric(args):
    from .data import load_judgments, load_manifest
    from .metric import save_metric, train_metric

    codec = _codec(args.weights, args.quality)
    records = load_judgments(load_manifest(args.manifest, "judgment"))
    seed = int(os.environ.get("CPIPS_SEED", args.seed))
    mw, judge = train_metric(records, codec, epochs=args.epochs, seed=seed)
    save_metric(args.output, mw, judge)
    print(args.output)
    return 0


def cmd_eval_2afc(args):
    from .data import load_judgments, load_manifest
    from .metric import CpipsMetric, eval_2afc_report, load_metric, write_report

    codec = _codec(args.weights, args.quality)
    mw, judge = load_metric(args.metric)
    records = load_judgments(load_manifest(args.manifest, "judgment"))
    report, d0, d1 = eval_2afc_report(records, CpipsMetric(codec, mw, judge).pair)
    if args.json:
        write_report(args.json, report)
    if args.csv:
        _write_2afc_csv(args.csv, d0, d1, records)
    print(json.dumps(report, sort_keys=True))
    return 0


def _write_2afc_csv(path, d0, d1, records):
    import csv

    from .metric import score_2afc
    from .plotting import figure_path, plot_2afc

    h = [r.h for r in records]
    credit = score_2afc(d0, d1, h)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "d0", "d1", "h", "credit", "subset"])
        for i, r in enumerate(records):
            w.writerow([i, repr(float(d0[i])), repr(float(d1[i])), r.h, float(credit[i]),
                        r.subset or ""])
    plot_2afc(d0, d1, h, figure_path(path))


def cmd_bench(args):
    from .bench import bench
    from .metric import load_metric
    from .plotting import figure_path, plot_bench

    codec = _codec(args.weights, args.quality)
    mw, _ = load_metric(args.metric)
    report = bench(args.dir, codec, mw, reps=args.reps, single_thread=not args.threads)
    out = report.to_dict()
    if args.json:
        with open(args.json, "w") as f:
            json.dump(out, f, indent=2, sort_keys=True)
    if args.csv:
        report.write_csv(args.csv)
        plot_bench(out, figure_path(args.csv))
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_inspect(args):
    with open(args.input, "rb") as f:
        header, _ = bitstream.parse(f.read())
    d = {
        "version": header.version,
        "quality_index": header.quality_index,
        "original_width": header.original_width,
        "original_height": header.original_height,
        "padded_width": header.padded_width,
        "padded_height": header.padded_height,
        "latent_channels": header.latent_channels,
        "model_hash": header.model_hash.hex(),
        "payload_length": header.payload_length,
    }
    print(json.dumps(d, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="cpips", description="learned image codec with a "
                                "bitstream-computable perceptual distance")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="stage 1: classification pretraining")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--output", required=True)
    s.add_argument("--log", help="JSON-lines training log")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="stage 2: joint compression-classification training")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--pretrained")
    s.add_argument("--cold-start", action="store_true",
                   help="allow training without pretrained weights")
    s.add_argument("--quality", type=int)
    s.add_argument("--output", required=True,
                   help="a .cpwt file, or a directory that receives codec_q{Q}.cpwt")
    s.add_argument("--log")
    s.add_argument("--plot", help="write a loss-curve PNG")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="image -> .cpic container")
    s.add_argument("--weights", required=True)
    s.add_argument("--quality", type=int, required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help=".cpic container -> PPM")
    s.add_argument("--weights", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("distance", help="CPIPS between two containers")
    s.add_argument("--weights", required=True)
    s.add_argument("--metric", required=True)
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_distance)

    s = sub.add_parser("train-metric", help="fit metric weights and judgment net")
    s.add_argument("--weights", required=True)
    s.add_argument("--quality", type=int)
    s.add_argument("--manifest", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_metric)

    s = sub.add_parser("eval-2afc", help="2AFC accuracy on a judgment manifest")
    s.add_argument("--weights", required=True)
    s.add_argument("--quality", type=int)
    s.add_argument("--metric", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--json")
    s.add_argument("--csv", help="per-record CSV; a scatter PNG is written beside it")
    s.set_defaults(func=cmd_eval_2afc)

    s = sub.add_parser("bench", help="time bitstream vs pixel vs full-network distance")
    s.add_argument("--dir", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--quality", type=int)
    s.add_argument("--metric", required=True)
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--threads", action="store_true", help="allow multithreaded kernels")
    s.add_argument("--json")
    s.add_argument("--csv", help="summary CSV; a bar-chart PNG is written beside it")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect", help="dump a container header as JSON")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help exits 0, usage errors exit 2
        return e.code
    try:
        with torch.inference_mode(args.command not in ("pretrain", "train", "train-metric")):
            return args.func(args)
    except CpipsError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
