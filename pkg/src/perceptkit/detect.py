"""Anchor-based detection: prior geometry, target codec with a log-depth
component, matching, the multi-scale head, and inference-time decoding.

Heads attach at stride 16 and at five progressively halved decode levels
(strides 32/64/128/256/512) with 4/6/6/6/4/4 anchors per cell; at a
1024x512 input this layout tiles exactly 12,264 prior boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ndgrad as ng
from .ndgrad import Conv2d, Module, Tensor

DEFAULT_STRIDES = (16, 32, 64, 128, 256, 512)
DEFAULT_ANCHORS_PER_CELL = (4, 6, 6, 6, 4, 4)
DEFAULT_SCALES = (0.1, 0.25, 0.4, 0.55, 0.7, 0.85)
CENTER_VARIANCE = 0.1
SIZE_VARIANCE = 0.2
BASE_DEPTH_REF = 20.0  # meters, at the stride-16 layer


@dataclass(frozen=True)
class AnchorLayer:
    grid_w: int
    grid_h: int
    anchors_per_cell: int
    scale: float
    next_scale: float
    stride: int
    depth_ref: float

    def aspect_ratios(self) -> List[Tuple[float, float]]:
        """(w, h) in normalized units for each anchor of a cell."""
        s, s2 = self.scale, self.next_scale
        shapes = [(s, s), (math.sqrt(s * s2), math.sqrt(s * s2))]
        for ar in (2.0, 0.5) + ((3.0, 1 / 3.0) if self.anchors_per_cell == 6 else ()):
            shapes.append((s * math.sqrt(ar), s / math.sqrt(ar)))
        return shapes[: self.anchors_per_cell]


@dataclass(frozen=True)
class AnchorConfig:
    layers: Tuple[AnchorLayer, ...]

    @staticmethod
    def default(input_size: Tuple[int, int]) -> "AnchorConfig":
        w, h = input_size
        if w % 32 or h % 32:
            raise ValueError(f"input extents must be divisible by 32, got {w}x{h}")
        gw, gh = w // DEFAULT_STRIDES[0], h // DEFAULT_STRIDES[0]
        layers = []
        scales = DEFAULT_SCALES + (1.0,)
        for i, (stride, apc) in enumerate(zip(DEFAULT_STRIDES, DEFAULT_ANCHORS_PER_CELL)):
            layers.append(
                AnchorLayer(
                    grid_w=gw,
                    grid_h=gh,
                    anchors_per_cell=apc,
                    scale=scales[i],
                    next_scale=scales[i + 1],
                    stride=stride,
                    depth_ref=BASE_DEPTH_REF * stride / 16.0,
                )
            )
            gw, gh = (gw + 1) // 2, (gh + 1) // 2  # conv k3 s2 p1: ceil halving
        return AnchorConfig(tuple(layers))

    def total_priors(self) -> int:
        return sum(l.grid_w * l.grid_h * l.anchors_per_cell for l in self.layers)


@dataclass(frozen=True)
class PriorBox:
    """Anchor geometry, normalized to [0, 1] of the input extents."""

    cx: float
    cy: float
    w: float
    h: float
    depth_ref: float = BASE_DEPTH_REF


@dataclass
class BoxTarget:
    """Per-prior regression target; class 0 means background."""

    class_id: int
    dx: float
    dy: float
    dw: float
    dh: float
    dd: float  # nan when no depth ground truth exists

    def offsets(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh, self.dd])


@dataclass
class Detection:
    class_id: int
    score: float
    x: float
    y: float
    w: float
    h: float
    depth_m: float


def generate_priors(
    input_size: Tuple[int, int], config: Optional[AnchorConfig] = None
) -> List[PriorBox]:
    """Priors in layer-major, row-major, anchor-minor order."""
    config = config or AnchorConfig.default(input_size)
    priors: List[PriorBox] = []
    for layer in config.layers:
        shapes = layer.aspect_ratios()
        for gy in range(layer.grid_h):
            cy = (gy + 0.5) / layer.grid_h
            for gx in range(layer.grid_w):
                cx = (gx + 0.5) / layer.grid_w
                for bw, bh in shapes:
                    priors.append(PriorBox(cx, cy, bw, bh, layer.depth_ref))
    return priors


def priors_to_array(priors: Sequence[PriorBox]) -> np.ndarray:
    """(P, 5) array of cx, cy, w, h, depth_ref."""
    return np.array([[p.cx, p.cy, p.w, p.h, p.depth_ref] for p in priors])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) center-format boxes."""
    ax1 = a[:, 0] - a[:, 2] / 2
    ay1 = a[:, 1] - a[:, 3] / 2
    ax2 = a[:, 0] + a[:, 2] / 2
    ay2 = a[:, 1] + a[:, 3] / 2
    bx1 = b[:, 0] - b[:, 2] / 2
    by1 = b[:, 1] - b[:, 3] / 2
    bx2 = b[:, 0] + b[:, 2] / 2
    by2 = b[:, 1] + b[:, 3] / 2
    ix = np.maximum(
        0.0, np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    )
    iy = np.maximum(
        0.0, np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    )
    inter = ix * iy
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    return np.where(union > 0, inter / union, 0.0)


def match_anchors(
    priors: Sequence[PriorBox], gt_boxes: np.ndarray, iou_threshold: float = 0.5
) -> np.ndarray:
    """Per-prior ground-truth index (-1 for background).

    First a greedy global bipartite pass guarantees each ground truth its
    best remaining prior (highest IoU pair first, so the result does not
    depend on ground-truth order; only positive-IoU pairs participate);
    then every unclaimed prior with IoU >= threshold takes its best
    ground truth.
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if (gt_boxes[:, 2] <= 0).any() or (gt_boxes[:, 3] <= 0).any():
        raise ValueError("degenerate (zero-area) ground-truth box")
    p = len(priors)
    assign = np.full(p, -1, dtype=int)
    g = len(gt_boxes)
    if g == 0:
        return assign
    pa = priors_to_array(priors)[:, :4]
    iou = iou_matrix(pa, gt_boxes)
    remaining = iou.copy()
    for _ in range(min(p, g)):
        i, j = np.unravel_index(np.argmax(remaining), remaining.shape)
        if remaining[i, j] <= 0:
            break
        assign[i] = j
        remaining[i, :] = -1.0
        remaining[:, j] = -1.0
    unclaimed = assign < 0
    best_gt = iou.argmax(axis=1)
    best_iou = iou.max(axis=1)
    take = unclaimed & (best_iou >= iou_threshold)
    assign[take] = best_gt[take]
    return assign


def encode_target(
    prior: PriorBox, gt_box: Sequence[float], gt_depth_m: Optional[float], class_id: int
) -> BoxTarget:
    """Encode one matched ground truth against its prior.

    ``gt_box`` is normalized center-format (cx, cy, w, h); depth may be None
    when no ground truth exists (the depth component is then excluded from
    the loss).
    """
    gx, gy, gw, gh = gt_box
    if gw <= 0 or gh <= 0:
        raise ValueError(f"non-positive box extents ({gw}, {gh})")
    if gt_depth_m is not None and gt_depth_m <= 0:
        raise ValueError(f"non-positive depth {gt_depth_m}")
    dx = (gx - prior.cx) / prior.w / CENTER_VARIANCE
    dy = (gy - prior.cy) / prior.h / CENTER_VARIANCE
    dw = math.log(gw / prior.w) / SIZE_VARIANCE
    dh = math.log(gh / prior.h) / SIZE_VARIANCE
    dd = math.log(gt_depth_m / prior.depth_ref) if gt_depth_m is not None else math.nan
    return BoxTarget(class_id, dx, dy, dw, dh, dd)


def decode_detection(
    prior: PriorBox,
    regressors: Sequence[float],
    class_logits: np.ndarray,
    input_size: Tuple[int, int],
) -> Detection:
    """Exact inverse of encode_target, scaled to pixels.

    Score is the max softmax probability over non-background classes
    (class 0 is background).
    """
    dx, dy, dw, dh, dd = regressors
    cx = prior.cx + dx * CENTER_VARIANCE * prior.w
    cy = prior.cy + dy * CENTER_VARIANCE * prior.h
    w = prior.w * math.exp(dw * SIZE_VARIANCE)
    h = prior.h * math.exp(dh * SIZE_VARIANCE)
    depth = prior.depth_ref * math.exp(dd)
    logits = np.asarray(class_logits, dtype=np.float64)
    e = np.exp(logits - logits.max())
    probs = e / e.sum()
    class_id = int(np.argmax(probs[1:])) + 1
    score = float(probs[class_id])
    iw, ih = input_size
    return Detection(
        class_id=class_id,
        score=score,
        x=(cx - w / 2) * iw,
        y=(cy - h / 2) * ih,
        w=w * iw,
        h=h * ih,
        depth_m=depth,
    )


def nms(
    detections: Sequence[Detection], iou_threshold: float = 0.45, top_k: int = 200
) -> List[Detection]:
    """Greedy per-class suppression in descending score order."""
    kept: List[Detection] = []
    by_class: dict = {}
    for d in detections:
        by_class.setdefault(d.class_id, []).append(d)
    for class_id in sorted(by_class):
        group = sorted(by_class[class_id], key=lambda d: -d.score)
        chosen: List[Detection] = []
        for d in group:
            box = np.array([[d.x + d.w / 2, d.y + d.h / 2, d.w, d.h]])
            overlaps = [
                iou_matrix(box, np.array([[k.x + k.w / 2, k.y + k.h / 2, k.w, k.h]]))[0, 0]
                for k in chosen
            ]
            if all(v <= iou_threshold for v in overlaps):
                chosen.append(d)
        kept.extend(chosen)
    kept.sort(key=lambda d: -d.score)
    return kept[:top_k]


class DecodeUnit(Module):
    """1x1 reduce then 3x3 stride-2 convolution, ReLU after each."""

    def __init__(self, in_ch: int, rng, dtype, mid_ch: int = 128, out_ch: int = 256):
        super().__init__()
        self.conv1 = Conv2d(in_ch, mid_ch, 1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(mid_ch, out_ch, 3, stride=2, pad=1, rng=rng, dtype=dtype)
        self.out_channels = out_ch

    def forward(self, x: Tensor) -> Tensor:
        return ng.relu(self.conv2(ng.relu(self.conv1(x))))


class DetectionHead(Module):
    """Per-level class and box/depth predictors over res4 and decode units."""

    def __init__(
        self,
        in_channels: int,
        num_classes: int = 10,
        anchors_per_cell: Sequence[int] = DEFAULT_ANCHORS_PER_CELL,
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.num_logits = num_classes + 1  # background at index 0
        self.anchors_per_cell = tuple(anchors_per_cell)
        ch = in_channels
        self.units: List[DecodeUnit] = []
        for i in range(len(self.anchors_per_cell) - 1):
            unit = DecodeUnit(ch, rng, dtype)
            setattr(self, f"unit{i}", unit)
            self.units.append(unit)
            ch = unit.out_channels
        level_channels = [in_channels] + [u.out_channels for u in self.units]
        self.cls_heads: List[Conv2d] = []
        self.reg_heads: List[Conv2d] = []
        for i, (c, a) in enumerate(zip(level_channels, self.anchors_per_cell)):
            cls = Conv2d(c, a * self.num_logits, 3, pad=1, rng=rng, dtype=dtype)
            reg = Conv2d(c, a * 5, 3, pad=1, rng=rng, dtype=dtype)
            setattr(self, f"cls{i}", cls)
            setattr(self, f"reg{i}", reg)
            self.cls_heads.append(cls)
            self.reg_heads.append(reg)

    def forward(self, res4: Tensor) -> Tuple[Tensor, Tensor]:
        """(N, P, classes+1) logits and (N, P, 5) regressors, prior-ordered."""
        levels = [res4]
        x = res4
        for unit in self.units:
            x = unit(x)
            levels.append(x)
        cls_parts, reg_parts = [], []
        for feat, a, cls_head, reg_head in zip(
            levels, self.anchors_per_cell, self.cls_heads, self.reg_heads
        ):
            n, _, gh, gw = feat.data.shape
            cls = cls_head(feat)  # (N, A*K, gh, gw)
            reg = reg_head(feat)
            cls_parts.append(_to_prior_order(cls, a, self.num_logits))
            reg_parts.append(_to_prior_order(reg, a, 5))
        all_cls = ng.concat(cls_parts, axis=1)
        all_reg = ng.concat(reg_parts, axis=1)
        return all_cls, all_reg


def _to_prior_order(t: Tensor, anchors: int, k: int) -> Tensor:
    """(N, A*K, H, W) -> (N, H*W*A, K): row-major cells, anchor-minor."""
    n, _, h, w = t.data.shape
    r = t.reshape(n, anchors, k, h, w)
    moved = ng.transpose(r, (0, 3, 4, 1, 2))  # (N, H, W, A, K)
    return moved.reshape(n, h * w * anchors, k)
