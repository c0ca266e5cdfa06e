"""Command-line interface: ``sakf {train,predict,eval,eval-baseline,inspect}``.

Exit status is 0 on success, 1 on usage or parameter errors and 2 on data or
model errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import imgproc, saliency
from .errors import InvalidParameterError, SakfError
from .features import extract_dense_sift
from .filtering import Fallback, partition_descriptors, sakf_filter
from .persistence import load_model, save_model
from .pipeline import (PipelineConfig, evaluate, evaluate_baseline, image_features,
                       load_dataset, predict_features, train_pipeline)

EXIT_USAGE = 1
EXIT_DATA = 2

# flag name -> PipelineConfig field
CONFIG_FLAGS = {
    "step": int, "patch_size": int, "k_fg": int, "k_bg": int, "sigma": float,
    "working_width": int, "svm_c": float, "seed": int, "train_ratio": float,
    "runs": int, "kmeans_max_iters": int, "kmeans_tol": float,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("pipeline configuration")
    defaults = PipelineConfig()
    for name, typ in CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=f"default {getattr(defaults, name)}")
    g.add_argument("--encode-dict", dest="encode_dict", choices=("fg", "combined"), default=None,
                   help="dictionary used for the final histogram (default fg)")
    p.add_argument("--threads", type=int, default=0, help="worker threads, 0 = one per CPU")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sakf", description="Saliency-filtered bag-of-visual-words image classification.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a class-per-directory dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_flags(p)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--json", action="store_true", help="print one JSON object")

    for name, helptext in (("eval", "repeated stratified train/test evaluation"),
                           ("eval-baseline", "same protocol for plain dense SIFT + BoVW")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--report", type=Path, help="write run accuracies and confusion matrix as CSV")
        p.add_argument("--dump-features", type=Path, help="write final-run feature vectors as CSV")
        _add_config_flags(p)

    p = sub.add_parser("inspect", help="write saliency, mask and keypoint overlay PNGs")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    return ap


def config_from_args(args) -> PipelineConfig:
    overrides = {k: getattr(args, k) for k in (*CONFIG_FLAGS, "encode_dict")
                 if getattr(args, k, None) is not None}
    return PipelineConfig(**overrides)


def _header(cfg: PipelineConfig) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in cfg.to_dict().items())


def cmd_train(args, out) -> None:
    cfg = config_from_args(args)
    print(_header(cfg), file=out)
    ds = load_dataset(args.data)
    model = train_pipeline(ds, cfg, threads=args.threads)
    save_model(model, args.out)
    fb = " ".join(f"{k}={v}" for k, v in sorted(model.fallbacks.items()))
    print(f"trained on {len(ds)} images, {len(ds.classes)} classes "
          f"(VD_F {model.dictionaries.fg.k} words, VD_B {model.dictionaries.bg.k} words)", file=out)
    print(f"fallbacks: {fb}", file=out)
    print(f"model written to {args.out}", file=out)


def cmd_predict(args, out) -> None:
    model = load_model(args.model)
    pred = predict_features(model, image_features(imgproc.load_image(args.image), model.config))
    if args.json:
        print(_header(model.config), file=sys.stderr)
        print(json.dumps(pred.to_json_dict(model.classes), separators=(",", ":")), file=out)
        return
    print(_header(model.config), file=out)
    print(f"label: {pred.label}", file=out)
    for c, s in zip(model.classes, pred.scores):
        print(f"  score {c}: {s:.6f}", file=out)
    d = pred.diagnostics
    print(f"keypoints: total {d.keypoints_total}, foreground {d.keypoints_fg}, kept {d.keypoints_kept}", file=out)
    print(f"fallback: {d.fallback.value}", file=out)


def cmd_eval(args, out, baseline: bool) -> None:
    cfg = config_from_args(args)
    print(_header(cfg), file=out)
    ds = load_dataset(args.data)
    run = evaluate_baseline if baseline else evaluate
    report = run(ds, cfg, threads=args.threads, keep_features=args.dump_features is not None)
    print(report.to_text(), file=out)
    if args.report:
        args.report.write_text(report.to_csv())
    if args.dump_features:
        args.dump_features.write_text(report.features_csv())


def _to_png(arr: np.ndarray, path: Path):
    Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8)).save(path)


def cmd_inspect(args, out) -> None:
    model = load_model(args.model)
    cfg = model.config
    img = imgproc.load_image(args.image)
    smap, mask = saliency.saliency_mask(img, cfg.saliency)
    part = partition_descriptors(extract_dense_sift(img, cfg.step, cfg.patch_size), mask)
    kept, fb = sakf_filter(part.foreground, model.dictionaries)
    if fb is not Fallback.NONE:
        kept = kept[[]]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.image.stem
    paths = [args.out_dir / f"{stem}_saliency.png", args.out_dir / f"{stem}_mask.png",
             args.out_dir / f"{stem}_keypoints.png"]
    _to_png(smap * 255, paths[0])
    _to_png(mask * 255.0, paths[1])
    rgb = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape
    # kept is a subset of d_F, so red dots are drawn over black ones
    for descs, colour in ((part.foreground, (0, 0, 0)), (kept, (255, 0, 0))):
        for x, y, _ in descs.keypoints:
            r, c = y - 1, x - 1
            rgb[max(r - 1, 0):min(r + 2, h), max(c - 1, 0):min(c + 2, w)] = colour
    _to_png(rgb, paths[2])
    print(_header(cfg), file=out)
    print(f"foreground keypoints {len(part.foreground)}, kept {len(kept)}, "
          f"fallback {fb.value}", file=out)
    for p in paths:
        print(f"wrote {p}", file=out)


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 0) < 0:
            raise InvalidParameterError("--threads must be >= 0")
        if hasattr(args, "step"):
            config_from_args(args)  # validate before any work
    except UsageError as exc:
        print(f"sakf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidParameterError as exc:
        print(f"sakf: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cmd_train(args, out)
        elif args.command == "predict":
            cmd_predict(args, out)
        elif args.command in ("eval", "eval-baseline"):
            cmd_eval(args, out, baseline=args.command == "eval-baseline")
        else:
            cmd_inspect(args, out)
    except InvalidParameterError as exc:
        print(f"sakf: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SakfError as exc:
        print(f"sakf: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"sakf: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
