"""Multi-task objective: L = L_cls + L_reg + w_seg * L_seg.

Classification follows the SSD recipe: cross entropy over positive priors
plus the hardest negatives at a 3:1 ratio per image, normalized by the
matched-prior count. Regression is smooth-L1 over the five encoded
components (center, size, log-depth) of the positives, with the depth term
dropped wherever no depth ground truth exists. Segmentation is mean pixel
cross entropy at quarter resolution with 255 as the ignore label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import ndgrad as ng
from .ndgrad import Tensor

HARD_NEGATIVE_RATIO = 3
DEFAULT_SEG_WEIGHT = 4.0
IGNORE_LABEL = 255


@dataclass
class PriorTargets:
    """Per-prior training targets for one batch.

    labels: (N, P) int, 0 = background; offsets: (N, P, 5); depth_valid:
    (N, P) bool marking rows whose fifth component participates in the loss.
    """

    labels: np.ndarray
    offsets: np.ndarray
    depth_valid: np.ndarray

    @property
    def num_matched(self) -> int:
        return int((self.labels > 0).sum())


@dataclass
class LossReport:
    l_cls: float
    l_reg: float
    l_seg: float
    w_seg: float
    n_matched: int

    @property
    def total(self) -> float:
        return self.l_cls + self.l_reg + self.w_seg * self.l_seg


def mine_hard_negatives(
    per_prior_loss: np.ndarray, labels: np.ndarray, ratio: int = HARD_NEGATIVE_RATIO
) -> np.ndarray:
    """Indices of the hardest background priors for one image.

    Keeps ratio * n_positive negatives, sorted by loss descending with ties
    broken by prior index ascending (stable), so the set is deterministic.
    """
    negatives = np.nonzero(labels == 0)[0]
    n_pos = int((labels > 0).sum())
    n_keep = min(ratio * n_pos, negatives.size)
    if n_keep == 0:
        return negatives[:0]
    order = np.argsort(-per_prior_loss[negatives], kind="stable")
    return np.sort(negatives[order[:n_keep]])


def detection_loss(
    class_logits: Tensor, regressors: Tensor, targets: PriorTargets
) -> Tuple[Tensor, Tensor, int]:
    """(l_cls, l_reg, n_matched); both losses are 0 with no matched prior."""
    n, p, k = class_logits.data.shape
    labels = targets.labels
    n_matched = targets.num_matched
    zero = ng.Tensor(np.zeros((), dtype=class_logits.data.dtype))
    if n_matched == 0:
        return zero, zero, 0

    # classification: positives plus mined hard negatives, CE summed then
    # normalized by the matched count
    flat_logits = class_logits.reshape(n * p, k)
    with np.errstate(over="ignore"):
        raw = flat_logits.data
        m = raw.max(axis=1, keepdims=True)
        lse = (m[:, 0] + np.log(np.exp(raw - m).sum(axis=1))).reshape(n, p)
    background_nll = lse - class_logits.data[:, :, 0]
    ce_targets = np.full((n, p), -1, dtype=np.int64)
    for i in range(n):
        pos = labels[i] > 0
        ce_targets[i, pos] = labels[i, pos]
        hard = mine_hard_negatives(background_nll[i], labels[i])
        ce_targets[i, hard] = 0
    l_cls = ng.softmax_cross_entropy(
        flat_logits, ce_targets.reshape(-1), ignore_label=-1, reduction="sum"
    ) / n_matched

    # regression: smooth-L1 over the positives' five components; the depth
    # component only where ground truth exists
    rows = np.nonzero(labels.reshape(-1) > 0)[0]
    flat_reg = regressors.reshape(n * p, 5)
    pred = ng.gather_rows(flat_reg, rows)
    tgt = targets.offsets.reshape(n * p, 5)[rows]
    dvalid = targets.depth_valid.reshape(n * p)[rows]
    l_reg = ng.smooth_l1(pred[:, :4], ng.Tensor(tgt[:, :4]))
    if dvalid.any():
        drows = np.nonzero(dvalid)[0]
        l_reg = l_reg + ng.smooth_l1(
            ng.gather_rows(pred, drows)[:, 4:5], ng.Tensor(tgt[drows, 4:5])
        )
    l_reg = l_reg / n_matched
    return l_cls, l_reg, n_matched


def segmentation_loss(seg_logits: Tensor, mask_quarter: np.ndarray) -> Tensor:
    """Mean pixel cross entropy over non-ignored quarter-resolution labels."""
    mask = np.asarray(mask_quarter)
    num_classes = seg_logits.data.shape[1]
    bad = (mask != IGNORE_LABEL) & (mask >= num_classes)
    if bad.any():
        raise ValueError(
            f"mask label {int(mask[bad][0])} out of range [0, {num_classes}) and not {IGNORE_LABEL}"
        )
    return ng.softmax_cross_entropy(seg_logits, mask, ignore_label=IGNORE_LABEL)


def total_loss(l_cls: Tensor, l_reg: Tensor, l_seg: Tensor, w_seg: float = DEFAULT_SEG_WEIGHT) -> Tensor:
    if w_seg <= 0:
        raise ValueError(f"w_seg must be positive, got {w_seg}")
    return l_cls + l_reg + l_seg * w_seg


def build_prior_targets(
    priors,
    scenes_boxes: Sequence[Sequence],
    input_size: Tuple[int, int],
    iou_threshold: float = 0.5,
) -> PriorTargets:
    """Assemble per-prior targets for a batch of scenes.

    Each scene's boxes are (class_id, x, y, w, h, depth_m_or_None) in
    pixels; they are matched in normalized coordinates against the priors.
    """
    from .detect import encode_target, match_anchors

    iw, ih = input_size
    n = len(scenes_boxes)
    p = len(priors)
    labels = np.zeros((n, p), dtype=np.int64)
    offsets = np.zeros((n, p, 5), dtype=np.float64)
    depth_valid = np.zeros((n, p), dtype=bool)
    for i, boxes in enumerate(scenes_boxes):
        if not boxes:
            continue
        norm = np.array(
            [
                [(b[1] + b[3] / 2) / iw, (b[2] + b[4] / 2) / ih, b[3] / iw, b[4] / ih]
                for b in boxes
            ]
        )
        assign = match_anchors(priors, norm, iou_threshold=iou_threshold)
        for pi in np.nonzero(assign >= 0)[0]:
            b = boxes[assign[pi]]
            depth = b[5]
            t = encode_target(priors[pi], norm[assign[pi]], depth, class_id=int(b[0]))
            labels[i, pi] = t.class_id
            offsets[i, pi] = [t.dx, t.dy, t.dw, t.dh, t.dd if depth is not None else 0.0]
            depth_valid[i, pi] = depth is not None
    return PriorTargets(labels=labels, offsets=offsets, depth_valid=depth_valid)
