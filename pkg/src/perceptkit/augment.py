"""Depth-consistent training-time augmentation.

One seeded parameter draw transforms image, boxes, mask, disparity and
per-box depth coherently: flip and rotation leave every depth untouched
(no scale change), resizing by (s_x, s_y) divides each depth by
sqrt(s_x * s_y) so the pinhole relation (on-image size x distance =
constant) keeps holding. Disparity values scale by sqrt(s_x * s_y) for the
same reason, keeping D = b*f/d consistent with the transformed depths.

Rotation is about the image center onto the same canvas; exposed pixels
take the dataset mean color, ignore-label 255 and invalid disparity. After
resizing, a seeded center-anchored crop/pad restores the original extents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataio import IGNORE_LABEL, Scene, SceneBox

FILL_COLOR = (116, 94, 104)  # rough driving-scene mean color
MIN_BOX_AREA = 100.0


@dataclass(frozen=True)
class AugmentParams:
    flip: bool
    angle_deg: float
    scale_x: float
    scale_y: float
    seed: int

    @staticmethod
    def identity(seed: int = 0) -> "AugmentParams":
        return AugmentParams(False, 0.0, 1.0, 1.0, seed)


def draw_params(
    seed: int,
    max_angle_deg: float = 5.0,
    scale_range: Tuple[float, float] = (0.5, 2.0),
) -> AugmentParams:
    """One reproducible draw of all augmentation parameters."""
    rng = np.random.default_rng(seed)
    return AugmentParams(
        flip=bool(rng.random() < 0.5),
        angle_deg=float(rng.uniform(-max_angle_deg, max_angle_deg)),
        scale_x=float(rng.uniform(*scale_range)),
        scale_y=float(rng.uniform(*scale_range)),
        seed=seed,
    )


def apply_augmentation(scene: Scene, params: AugmentParams) -> Scene:
    """Flip, rotate, resize and restore extents, all from one parameter set."""
    out = scene
    if params.flip:
        out = _flip(out)
    if params.angle_deg != 0.0:
        out = _rotate(out, params.angle_deg)
    if params.scale_x != 1.0 or params.scale_y != 1.0:
        out = _resize(out, params.scale_x, params.scale_y)
        out = _crop_or_pad(out, scene.size, params.seed)
    return out


def filter_small_boxes(boxes: Sequence[SceneBox], min_area: float = MIN_BOX_AREA) -> List[SceneBox]:
    """Drop boxes whose pixel area is strictly below ``min_area``."""
    return [b for b in boxes if b.w * b.h >= min_area]


# ---------------------------------------------------------------------------


def _flip(scene: Scene) -> Scene:
    w = scene.size[0]
    boxes = [b._replace(x=w - b.x - b.w) for b in scene.boxes]
    return replace(
        scene,
        image=scene.image[:, ::-1].copy(),
        mask=scene.mask[:, ::-1].copy(),
        disparity=scene.disparity[:, ::-1].copy(),
        boxes=boxes,
    )


def _rotate(scene: Scene, angle_deg: float) -> Scene:
    h, w = scene.image.shape[:2]
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    # inverse map: content rotates by +theta, so each output pixel samples
    # the input at the -theta rotation of its position
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy
    inside = (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)

    image = _sample_bilinear(scene.image, src_x, src_y, inside, FILL_COLOR)
    nx = np.clip(np.rint(src_x).astype(np.intp), 0, w - 1)
    ny = np.clip(np.rint(src_y).astype(np.intp), 0, h - 1)
    mask = np.where(inside, scene.mask[ny, nx], IGNORE_LABEL).astype(np.uint8)
    disparity = np.where(inside, scene.disparity[ny, nx], 0.0).astype(np.float32)

    boxes = []
    for b in scene.boxes:
        corners = np.array(
            [[b.x, b.y], [b.x + b.w, b.y], [b.x, b.y + b.h], [b.x + b.w, b.y + b.h]]
        )
        d = corners - (cx, cy)
        rot = np.column_stack(
            [cos_t * d[:, 0] - sin_t * d[:, 1] + cx, sin_t * d[:, 0] + cos_t * d[:, 1] + cy]
        )
        clipped = _clip_box(
            rot[:, 0].min(), rot[:, 1].min(), rot[:, 0].max(), rot[:, 1].max(), w, h
        )
        if clipped is None:
            continue  # pushed fully outside the canvas
        x0, y0, x1, y1 = clipped
        boxes.append(b._replace(x=x0, y=y0, w=x1 - x0, h=y1 - y0))  # depth untouched
    return replace(scene, image=image, mask=mask, disparity=disparity, boxes=boxes)


def _resize(scene: Scene, sx: float, sy: float) -> Scene:
    h, w = scene.image.shape[:2]
    nw, nh = max(int(round(w * sx)), 1), max(int(round(h * sy)), 1)
    # actual factors after integer rounding keep geometry exact
    fx, fy = nw / w, nh / h
    scale = math.sqrt(fx * fy)

    xs = np.clip((np.arange(nw) + 0.5) / fx - 0.5, 0, w - 1)
    ys = np.clip((np.arange(nh) + 0.5) / fy - 0.5, 0, h - 1)
    src_x, src_y = np.meshgrid(xs, ys)
    all_inside = np.ones((nh, nw), dtype=bool)
    image = _sample_bilinear(scene.image, src_x, src_y, all_inside, FILL_COLOR)
    nxi = np.minimum((np.arange(nw) * w // nw), w - 1)
    nyi = np.minimum((np.arange(nh) * h // nh), h - 1)
    mask = scene.mask[np.ix_(nyi, nxi)]
    disparity = (scene.disparity[np.ix_(nyi, nxi)] * scale).astype(np.float32)

    boxes = [
        b._replace(
            x=b.x * fx,
            y=b.y * fy,
            w=b.w * fx,
            h=b.h * fy,
            depth_m=None if b.depth_m is None else b.depth_m / scale,
        )
        for b in scene.boxes
    ]
    return replace(scene, image=image, mask=mask, disparity=disparity, boxes=boxes)


def _crop_or_pad(scene: Scene, target_size: Tuple[int, int], seed: int) -> Scene:
    tw, th = target_size
    h, w = scene.image.shape[:2]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC207)))

    def offset(extent: int, target: int) -> int:
        span = abs(extent - target)
        if span == 0:
            return 0
        center = span // 2
        jitter = int(rng.integers(-(span // 4 + 1), span // 4 + 2))
        return int(np.clip(center + jitter, 0, span))

    ox, oy = offset(w, tw), offset(h, th)
    image = np.empty((th, tw, 3), dtype=np.uint8)
    image[:] = FILL_COLOR
    mask = np.full((th, tw), IGNORE_LABEL, dtype=np.uint8)
    disparity = np.zeros((th, tw), dtype=np.float32)

    if w >= tw:
        sx0, dx0, cw = ox, 0, tw
    else:
        sx0, dx0, cw = 0, ox, w
    if h >= th:
        sy0, dy0, ch = oy, 0, th
    else:
        sy0, dy0, ch = 0, oy, h
    image[dy0 : dy0 + ch, dx0 : dx0 + cw] = scene.image[sy0 : sy0 + ch, sx0 : sx0 + cw]
    mask[dy0 : dy0 + ch, dx0 : dx0 + cw] = scene.mask[sy0 : sy0 + ch, sx0 : sx0 + cw]
    disparity[dy0 : dy0 + ch, dx0 : dx0 + cw] = scene.disparity[
        sy0 : sy0 + ch, sx0 : sx0 + cw
    ]

    shift_x, shift_y = dx0 - sx0, dy0 - sy0
    boxes = []
    for b in scene.boxes:
        clipped = _clip_box(
            b.x + shift_x, b.y + shift_y, b.x + b.w + shift_x, b.y + b.h + shift_y, tw, th
        )
        if clipped is None:
            continue
        x0, y0, x1, y1 = clipped
        boxes.append(b._replace(x=x0, y=y0, w=x1 - x0, h=y1 - y0))
    return replace(scene, image=image, mask=mask, disparity=disparity, boxes=boxes)


def _clip_box(x0, y0, x1, y1, w, h) -> Optional[Tuple[float, float, float, float]]:
    x0c, y0c = max(x0, 0.0), max(y0, 0.0)
    x1c, y1c = min(x1, float(w)), min(y1, float(h))
    if x1c <= x0c or y1c <= y0c:
        return None
    return x0c, y0c, x1c, y1c


def _sample_bilinear(image: np.ndarray, src_x, src_y, inside, fill) -> np.ndarray:
    h, w = image.shape[:2]
    x0 = np.clip(np.floor(src_x).astype(np.intp), 0, w - 1)
    y0 = np.clip(np.floor(src_y).astype(np.intp), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(src_x - x0, 0.0, 1.0)[..., None]
    fy = np.clip(src_y - y0, 0.0, 1.0)[..., None]
    img = image.astype(np.float64)
    val = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    out = np.rint(val).astype(np.uint8)
    out[~inside] = fill
    return out
