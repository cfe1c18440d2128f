"""Command-line front end: synth, train, eval, predict, report.

Exit codes: 0 success, 2 I/O failure, 3 config/shape mismatch, 4 numeric
failure. Flags override config-file values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except Exception as exc:
        raise CliError(f"cannot parse size {text!r}, expected WxH", EXIT_CONFIG) from exc


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def cmd_synth(args) -> int:
    from .dataio import CameraModel, save_dataset, synth_generate

    size = _parse_size(args.size)
    camera = None
    if args.camera:
        b, f = (float(v) for v in args.camera.split(","))
        camera = CameraModel(b=b, f=f)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"cannot write to {out_dir}: {exc}", EXIT_IO) from exc
    scenes = synth_generate(seed=args.seed, count=args.count, size=size, camera=camera)
    written = save_dataset(scenes, out_dir)
    files = {
        str(p.relative_to(out_dir)): _sha256(p) for p in sorted(written)
    }
    combined = hashlib.sha256(
        "\n".join(f"{k}:{v}" for k, v in sorted(files.items())).encode()
    ).hexdigest()
    manifest = {
        "seed": args.seed,
        "count": args.count,
        "size": list(size),
        "camera": {"b": scenes[0].camera.b, "f": scenes[0].camera.f} if scenes else None,
        "files": files,
        "content_hash": combined,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"wrote {args.count} scenes to {out_dir} (content {combined[:12]})")
    return EXIT_OK


def _build_config(args):
    from .config import build_config

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "preset", None):
        overrides["preset"] = args.preset
    if getattr(args, "input_size", None):
        overrides["input_w"], overrides["input_h"] = _parse_size(args.input_size)
    if getattr(args, "w_seg", None) is not None:
        overrides["w_seg"] = args.w_seg
    if getattr(args, "no_grad_block", False):
        overrides["block_gradients"] = False
    if getattr(args, "no_augment", False):
        overrides["augment"] = False
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    for key in ("lr", "epochs", "batch_size", "max_steps", "save_every"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    try:
        return build_config(args.config, **overrides)
    except (ValueError, OSError) as exc:
        code = EXIT_IO if isinstance(exc, OSError) else EXIT_CONFIG
        raise CliError(f"bad configuration: {exc}", code) from exc


def cmd_train(args) -> int:
    from .trainer import TrainingNumericsError, train

    config = _build_config(args)
    if not config.dataset:
        raise CliError("train requires --dataset (or dataset= in the config)", EXIT_CONFIG)
    if not Path(config.dataset).exists():
        raise CliError(f"dataset not found: {config.dataset}", EXIT_IO)
    try:
        result = train(config)
    except TrainingNumericsError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    print(
        f"trained {result.steps} steps; checkpoint {result.checkpoint}, "
        f"loss log {result.loss_log}"
    )
    return EXIT_OK


def _load_net(args, config):
    from .checkpoint import CheckpointMismatch, load_checkpoint
    from .network import PerceptionNet

    net = PerceptionNet(
        preset=config.preset,
        num_det_classes=config.num_det_classes,
        num_seg_classes=config.num_seg_classes,
        seed=config.seed,
    )
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_IO)
    try:
        load_checkpoint(net, args.checkpoint)
    except CheckpointMismatch as exc:
        raise CliError(f"checkpoint does not fit the configured model: {exc}", EXIT_CONFIG) from exc
    net.eval()
    return net


def cmd_eval(args) -> int:
    from .dataio import DEFAULT_REGISTRY, load_dataset
    from .evalkit import write_report
    from .inference import evaluate_scenes

    config = _build_config(args)
    if not Path(args.dataset).exists():
        raise CliError(f"dataset not found: {args.dataset}", EXIT_IO)
    scenes = load_dataset(args.dataset)
    if args.oracle:
        acc = evaluate_scenes(None, scenes, config.num_seg_classes, oracle=True)
    else:
        if not args.checkpoint:
            raise CliError("eval requires --checkpoint unless --oracle is given", EXIT_CONFIG)
        net = _load_net(args, config)
        acc = evaluate_scenes(net, scenes, config.num_seg_classes, score_threshold=args.score_threshold)
    report = acc.report()
    out_dir = Path(args.out)
    write_report(report, out_dir, det_class_names=DEFAULT_REGISTRY.det_classes)
    print(
        f"mAP {report.mean_ap:.4f}  mIoU {report.mean_iou:.4f}  "
        f"pixel_acc {report.pixel_accuracy:.4f}  "
        f"({report.n_images} images) -> {out_dir}"
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    from .dataio import read_ppm, write_pgm
    from .inference import predict_scene, write_detections_file

    config = _build_config(args)
    image_path = Path(args.image)
    if not image_path.exists():
        raise CliError(f"image not found: {image_path}", EXIT_IO)
    try:
        if image_path.suffix == ".ppm":
            image = read_ppm(image_path)
        else:
            from PIL import Image

            image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise CliError(f"cannot read image {image_path}: {exc}", EXIT_IO) from exc

    h, w = image.shape[:2]
    pad_h = (32 - h % 32) % 32
    pad_w = (32 - w % 32) % 32
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")

    net = _load_net(args, config)
    detections, mask = predict_scene(net, image, score_threshold=args.score_threshold)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = image_path.stem
    write_detections_file(detections, stem, out_dir / f"{stem}.detections.txt")
    write_pgm(out_dir / f"{stem}.mask.pgm", mask)
    if args.overlay:
        overlay_path = out_dir / f"{stem}.overlay.png"
        _write_overlay(image, detections, mask, overlay_path)
        print(f"overlay -> {overlay_path}")
    print(f"{len(detections)} detections -> {out_dir}")
    return EXIT_OK


def _write_overlay(image, detections, mask, path) -> None:
    from PIL import Image, ImageDraw

    from .dataio import DEFAULT_REGISTRY

    canvas = Image.fromarray(image).convert("RGB")
    # segmentation tint at full resolution (nearest x4 blow-up)
    mask_up = np.kron(mask, np.ones((4, 4), dtype=np.uint8))
    mask_up = mask_up[: image.shape[0], : image.shape[1]]
    palette = (np.arange(256)[:, None] * np.array([53, 97, 151]) % 255).astype(np.uint8)
    tint = palette[mask_up]
    blended = (0.65 * np.asarray(canvas) + 0.35 * tint).astype(np.uint8)
    canvas = Image.fromarray(blended)
    draw = ImageDraw.Draw(canvas)
    for d in detections:
        draw.rectangle([d.x, d.y, d.x + d.w, d.y + d.h], outline=(255, 255, 0), width=2)
        name = (
            DEFAULT_REGISTRY.det_name(d.class_id)
            if d.class_id <= len(DEFAULT_REGISTRY.det_classes)
            else str(d.class_id)
        )
        draw.text((d.x + 2, max(d.y - 12, 0)), f"{name} {d.depth_m:.1f}m", fill=(255, 255, 0))
    canvas.save(path)


def cmd_report(args) -> int:
    import csv as csv_mod

    from .evalkit import MetricsReport, plot_cdf, plot_per_class_error

    metrics_dir = Path(args.metrics)
    metrics_path = metrics_dir / "metrics.csv"
    cdf_path = metrics_dir / "cdf.csv"
    if not metrics_path.exists() or not cdf_path.exists():
        raise CliError(f"no metrics.csv/cdf.csv under {metrics_dir}", EXIT_IO)
    flat = {}
    with open(metrics_path) as f:
        for row in csv_mod.DictReader(f):
            flat[row["key"]] = row["value"]
    grid, values = [], []
    with open(cdf_path) as f:
        for row in csv_mod.DictReader(f):
            grid.append(float(row["x"]))
            values.append(float(row["F"]))
    per_class_err = {}
    for k, v in sorted(flat.items()):
        if k.startswith("distance_error/"):
            per_class_err[len(per_class_err) + 1] = float(v)
    report = MetricsReport(
        per_class_ap={},
        mean_ap=float(flat.get("mAP", 0.0)),
        per_class_distance_error=per_class_err,
        cdf_grid=np.array(grid),
        cdf_values=np.array(values),
        per_class_iou={},
        mean_iou=float(flat.get("mIoU", 0.0)),
        pixel_accuracy=float(flat.get("pixel_accuracy", 0.0)),
        n_images=int(flat.get("images", 0)),
        n_gt_boxes=int(flat.get("gt_boxes", 0)),
        n_detections=int(flat.get("detections", 0)),
    )
    plot_cdf(report, metrics_dir / "cdf.svg")
    plot_per_class_error(report, metrics_dir / "perclass_error.svg")
    print(
        f"mAP {report.mean_ap:.4f}  mIoU {report.mean_iou:.4f}  "
        f"pixel_acc {report.pixel_accuracy:.4f} over {report.n_images} images"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perceptkit",
        description="Joint detection, per-object depth and segmentation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", default="256x128")
    p.add_argument("--camera", default=None, help="baseline,focal e.g. 0.22,153.6")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--preset", choices=("mini", "full"), default=None)
        p.add_argument("--input-size", dest="input_size", default=None)
        p.add_argument("--w-seg", dest="w_seg", type=float, default=None)
        p.add_argument("--no-grad-block", dest="no_grad_block", action="store_true")
        p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train on a dataset")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--save-every", dest="save_every", type=int, default=None)
    p.add_argument("--no-augment", dest="no_augment", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--oracle", action="store_true", help="inject ground truth as predictions")
    p.add_argument("--score-threshold", dest="score_threshold", type=float, default=0.3)
    p.set_defaults(fn=cmd_eval)
    p.set_defaults(out="eval_out")

    p = sub.add_parser("predict", help="run one image through a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--score-threshold", dest="score_threshold", type=float, default=0.3)
    p.set_defaults(fn=cmd_predict)
    p.set_defaults(out="predict_out")

    p = sub.add_parser("report", help="re-render plots and a summary from metrics files")
    p.add_argument("--metrics", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
