"""Cityscapes-layout adapter.

Reads leftImg8bit/<split>/<city>/*.png images, gtFine polygon annotations,
16-bit disparity PNGs (stored p: d = (p - 1) / 256 for p > 0, p = 0
invalid) and per-image camera JSON files. Polygons of the instance classes
become boxes (axis-aligned hulls of the vertices); all labelled polygons
rasterize into a class-id mask with 255 for anything outside the
segmentation registry. Per-box depth comes from the disparity median.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .dataio import (
    IGNORE_LABEL,
    CameraModel,
    ClassRegistry,
    DEFAULT_REGISTRY,
    Scene,
    SceneBox,
    box_distance_gt,
)

log = logging.getLogger(__name__)


@dataclass
class LoadRecord:
    """Per-file outcome; failures are recorded and iteration continues."""

    image_path: str
    ok: bool
    message: str = ""


def decode_disparity_png(path) -> np.ndarray:
    """16-bit disparity PNG: d = (p - 1) / 256 for stored p > 0, else invalid."""
    stored = np.asarray(Image.open(path), dtype=np.float32)
    disparity = (stored - 1.0) / 256.0
    disparity[stored <= 0] = 0.0
    return disparity


def read_camera_json(path) -> CameraModel:
    with open(path) as f:
        data = json.load(f)
    return CameraModel(b=float(data["extrinsic"]["baseline"]), f=float(data["intrinsic"]["fx"]))


def polygons_to_annotations(
    polygons: dict, registry: ClassRegistry
) -> Tuple[List[Tuple[str, np.ndarray]], Tuple[int, int]]:
    size = (int(polygons["imgWidth"]), int(polygons["imgHeight"]))
    items = []
    for obj in polygons.get("objects", []):
        label = obj.get("label", "")
        verts = np.asarray(obj.get("polygon", []), dtype=np.float64)
        if verts.size:
            items.append((label, verts))
    return items, size


def rasterize_mask(
    items: List[Tuple[str, np.ndarray]], size: Tuple[int, int], registry: ClassRegistry
) -> np.ndarray:
    w, h = size
    canvas = Image.new("L", (w, h), IGNORE_LABEL)
    draw = ImageDraw.Draw(canvas)
    for label, verts in items:  # annotation order: later polygons overdraw
        fill = registry.seg_id(label) if label in registry.seg_classes else IGNORE_LABEL
        draw.polygon([tuple(v) for v in verts.tolist()], fill=fill)
    return np.asarray(canvas, dtype=np.uint8)


def boxes_from_polygons(
    items: List[Tuple[str, np.ndarray]], registry: ClassRegistry
) -> List[SceneBox]:
    boxes = []
    for label, verts in items:
        if label not in registry.det_classes:
            continue
        x0, y0 = verts.min(axis=0)
        x1, y1 = verts.max(axis=0)
        if x1 <= x0 or y1 <= y0:
            continue
        boxes.append(SceneBox(registry.det_id(label), float(x0), float(y0), float(x1 - x0), float(y1 - y0), None))
    return boxes


def load_cityscapes(
    root_path,
    split: str,
    registry: ClassRegistry = DEFAULT_REGISTRY,
    records: Optional[List[LoadRecord]] = None,
) -> Iterator[Scene]:
    """Yield scenes from a Cityscapes directory tree.

    Missing companion files are skipped with a warning record; a corrupt
    file aborts only that image.
    """
    root = Path(root_path)
    image_root = root / "leftImg8bit" / split
    if not image_root.is_dir():
        raise FileNotFoundError(f"no image directory {image_root}")
    for img_path in sorted(image_root.glob("*/*_leftImg8bit.png")):
        city = img_path.parent.name
        stem = img_path.name[: -len("_leftImg8bit.png")]
        poly_path = root / "gtFine" / split / city / f"{stem}_gtFine_polygons.json"
        disp_path = root / "disparity" / split / city / f"{stem}_disparity.png"
        cam_path = root / "camera" / split / city / f"{stem}_camera.json"
        missing = [p for p in (poly_path, disp_path, cam_path) if not p.exists()]
        if missing:
            msg = f"missing companion files: {', '.join(str(m) for m in missing)}"
            log.warning("%s: %s", img_path, msg)
            if records is not None:
                records.append(LoadRecord(str(img_path), ok=False, message=msg))
            continue
        try:
            image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.uint8)
            with open(poly_path) as f:
                items, size = polygons_to_annotations(json.load(f), registry)
            mask = rasterize_mask(items, size, registry)
            disparity = decode_disparity_png(disp_path)
            camera = read_camera_json(cam_path)
            scene = Scene(
                image=image,
                boxes=boxes_from_polygons(items, registry),
                mask=mask,
                disparity=disparity,
                camera=camera,
                scene_id=f"{city}/{stem}",
            )
            # fill per-box depth from the disparity median
            scene.boxes = [
                b._replace(depth_m=box_distance_gt(scene, b)) for b in scene.boxes
            ]
        except Exception as exc:  # corrupt file: record and move on
            log.warning("%s: failed to load (%s)", img_path, exc)
            if records is not None:
                records.append(LoadRecord(str(img_path), ok=False, message=str(exc)))
            continue
        if records is not None:
            records.append(LoadRecord(str(img_path), ok=True))
        yield scene
