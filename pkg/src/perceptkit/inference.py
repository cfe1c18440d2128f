"""Inference and evaluation glue: decode network outputs into detections,
predict masks, and accumulate metrics over scenes.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ndgrad as ng
from .dataio import Scene, subsample_mask
from .detect import Detection, PriorBox, nms, priors_to_array
from .evalkit import Accumulator, GtRecord, PairedDetection
from .losses import IGNORE_LABEL
from .network import PerceptionNet, normalize_image

CENTER_VARIANCE = 0.1
SIZE_VARIANCE = 0.2


def decode_outputs(
    priors: Sequence[PriorBox],
    class_logits: np.ndarray,
    regressors: np.ndarray,
    input_size: Tuple[int, int],
    score_threshold: float = 0.3,
    nms_iou: float = 0.45,
    top_k: int = 200,
) -> List[Detection]:
    """Vectorized decode of one image's (P, K) logits and (P, 5) regressors."""
    logits = np.asarray(class_logits, dtype=np.float64)
    shift = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shift)
    probs = e / e.sum(axis=1, keepdims=True)
    fg = probs[:, 1:]
    scores = fg.max(axis=1)
    labels = fg.argmax(axis=1) + 1
    keep = np.nonzero(scores >= score_threshold)[0]
    if keep.size == 0:
        return []
    pa = priors_to_array(priors)[keep]
    reg = np.asarray(regressors, dtype=np.float64)[keep]
    cx = pa[:, 0] + reg[:, 0] * CENTER_VARIANCE * pa[:, 2]
    cy = pa[:, 1] + reg[:, 1] * CENTER_VARIANCE * pa[:, 3]
    w = pa[:, 2] * np.exp(reg[:, 2] * SIZE_VARIANCE)
    h = pa[:, 3] * np.exp(reg[:, 3] * SIZE_VARIANCE)
    depth = pa[:, 4] * np.exp(reg[:, 4])
    iw, ih = input_size
    detections = [
        Detection(
            class_id=int(labels[i]),
            score=float(scores[i]),
            x=float((cx[j] - w[j] / 2) * iw),
            y=float((cy[j] - h[j] / 2) * ih),
            w=float(w[j] * iw),
            h=float(h[j] * ih),
            depth_m=float(depth[j]),
        )
        for j, i in enumerate(keep)
    ]
    return nms(detections, iou_threshold=nms_iou, top_k=top_k)


def predict_scene(
    net: PerceptionNet,
    image_u8: np.ndarray,
    score_threshold: float = 0.3,
) -> Tuple[List[Detection], np.ndarray]:
    """Detections and the quarter-resolution predicted mask for one image."""
    h, w = image_u8.shape[:2]
    batch = ng.Tensor(normalize_image(image_u8)[None])
    out = net(batch, block_gradients=False)
    priors = net.priors_for((w, h))
    detections = decode_outputs(
        priors,
        out.class_logits.data[0],
        out.regressors.data[0],
        (w, h),
        score_threshold=score_threshold,
    )
    pred_mask = out.seg_logits.data[0].argmax(axis=0).astype(np.uint8)
    return detections, pred_mask


def scene_gt_records(scene: Scene) -> List[GtRecord]:
    return [
        GtRecord(
            image_id=scene.scene_id,
            class_id=b.class_id,
            box=(b.x, b.y, b.w, b.h),
            depth_m=b.depth_m,
        )
        for b in scene.boxes
    ]


def evaluate_scenes(
    net: Optional[PerceptionNet],
    scenes: Sequence[Scene],
    num_seg_classes: int = 19,
    score_threshold: float = 0.3,
    oracle: bool = False,
) -> Accumulator:
    """Run the full evaluation; with ``oracle`` the ground truth itself is
    injected as the prediction (a self-consistency check of the metrics)."""
    acc = Accumulator(num_seg_classes=num_seg_classes)
    for scene in scenes:
        gts = scene_gt_records(scene)
        gt_quarter = subsample_mask(scene.mask, 4)
        if oracle:
            dets = [
                PairedDetection(
                    scene.scene_id,
                    g.class_id,
                    1.0 - 1e-6 * i,
                    g.box,
                    depth_m=g.depth_m if g.depth_m is not None else 1.0,
                )
                for i, g in enumerate(gts)
            ]
            pred_mask = gt_quarter.copy()
            # metrics treat 255 as ignore in gt; predictions need a real class
            pred_mask[pred_mask == IGNORE_LABEL] = 0
        else:
            detections, pred_mask = predict_scene(net, scene.image, score_threshold)
            dets = [
                PairedDetection(
                    scene.scene_id,
                    d.class_id,
                    d.score,
                    (d.x, d.y, d.w, d.h),
                    depth_m=d.depth_m,
                )
                for d in detections
            ]
        acc.add_scene(scene.scene_id, dets, gts, pred_mask, gt_quarter)
    return acc


def write_detections_file(detections: Sequence[Detection], image_id: str, path) -> None:
    """One detection per line: image_id class score x y w h depth_m."""
    with open(path, "w") as f:
        for d in detections:
            f.write(
                f"{image_id} {d.class_id} {d.score:.6f} "
                f"{d.x:.2f} {d.y:.2f} {d.w:.2f} {d.h:.2f} {d.depth_m:.3f}\n"
            )
