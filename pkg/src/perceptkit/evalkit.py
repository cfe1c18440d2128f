"""Evaluation metrics: per-class AP / mAP with the small-box ignore rule,
relative distance error with its CDF, segmentation IoU / mIoU / pixel
accuracy on quarter-resolution masks, and report emission.

Accumulators merge: evaluating shards independently and merging gives the
same report as a single pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

IGNORE_LABEL = 255
DEFAULT_IGNORE_AREA = 100.0
CDF_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.01), 2)


@dataclass(frozen=True)
class DetRecord:
    image_id: str
    class_id: int
    score: float
    box: Tuple[float, float, float, float]  # x, y, w, h in pixels


@dataclass(frozen=True)
class GtRecord:
    image_id: str
    class_id: int
    box: Tuple[float, float, float, float]
    depth_m: Optional[float] = None

    @property
    def area(self) -> float:
        return self.box[2] * self.box[3]


def iou_xywh(a, b) -> float:
    ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def average_precision(
    detections: Sequence[DetRecord],
    gts: Sequence[GtRecord],
    iou_threshold: float = 0.5,
    ignore_area: float = DEFAULT_IGNORE_AREA,
) -> Dict[int, float]:
    """Per-class AP, all-points interpolation.

    Greedy score-descending matching, one detection per ground truth.
    Ground truths below ``ignore_area`` are neutral: matching them costs
    nothing and earns nothing.
    """
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in detections})
    out: Dict[int, float] = {}
    for c in classes:
        class_gts = [g for g in gts if g.class_id == c]
        class_dets = sorted(
            (d for d in detections if d.class_id == c), key=lambda d: -d.score
        )
        ignore = [g.area < ignore_area for g in class_gts]
        n_gt = sum(1 for flag in ignore if not flag)
        matched = [False] * len(class_gts)
        tps: List[int] = []
        fps: List[int] = []
        for det in class_dets:
            best_iou, best_j = 0.0, -1
            for j, g in enumerate(class_gts):
                if g.image_id != det.image_id or matched[j] or ignore[j]:
                    continue
                v = iou_xywh(det.box, g.box)
                if v > best_iou:
                    best_iou, best_j = v, j
            if best_j >= 0 and best_iou >= iou_threshold:
                matched[best_j] = True
                tps.append(1)
                fps.append(0)
                continue
            neutral = any(
                g.image_id == det.image_id
                and ignore[j]
                and iou_xywh(det.box, g.box) >= iou_threshold
                for j, g in enumerate(class_gts)
            )
            if neutral:
                continue
            tps.append(0)
            fps.append(1)
        out[c] = _ap_all_points(np.array(tps), np.array(fps), n_gt)
    return out


def _ap_all_points(tps: np.ndarray, fps: np.ndarray, n_gt: int) -> float:
    if n_gt == 0 or tps.size == 0 or tps.sum() == 0:
        return 0.0
    tp = np.cumsum(tps)
    fp = np.cumsum(fps)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # precision envelope, integrated over recall steps
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def mean_average_precision(
    per_class_ap: Dict[int, float], gts: Sequence[GtRecord], ignore_area: float = DEFAULT_IGNORE_AREA
) -> float:
    """Mean AP over classes that own at least one counted ground truth."""
    with_gt = {g.class_id for g in gts if g.area >= ignore_area}
    if not with_gt:
        return 0.0
    return float(np.mean([per_class_ap.get(c, 0.0) for c in sorted(with_gt)]))


def distance_error(d_est: float, d_gt: float) -> float:
    """Relative distance error |est - gt| / gt."""
    if d_gt <= 0:
        raise ValueError(f"ground-truth distance must be positive, got {d_gt}")
    return abs(d_est - d_gt) / d_gt


def error_cdf(errors: Sequence[float], grid: np.ndarray = CDF_GRID) -> np.ndarray:
    """F(x) = fraction of errors <= x at each grid point."""
    errors = np.asarray(list(errors), dtype=np.float64)
    if (errors < 0).any():
        raise ValueError("errors must be non-negative")
    if errors.size == 0:
        return np.zeros(len(grid))
    sorted_errors = np.sort(errors)
    counts = np.searchsorted(sorted_errors, np.asarray(grid), side="right")
    return counts / errors.size


def segmentation_scores(
    pred_masks: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    num_classes: int,
) -> Tuple[Dict[int, float], float, float]:
    """(per-class IoU, mIoU over classes present in GT, pixel accuracy)."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, gt in zip(pred_masks, gt_masks):
        cm += confusion_matrix(pred, gt, num_classes)
    return scores_from_confusion(cm)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ValueError(f"mask extents differ: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != IGNORE_LABEL
    idx = gt[valid].astype(np.int64) * num_classes + pred[valid].astype(np.int64)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def scores_from_confusion(cm: np.ndarray) -> Tuple[Dict[int, float], float, float]:
    num_classes = cm.shape[0]
    per_class: Dict[int, float] = {}
    present = []
    for c in range(num_classes):
        tp = cm[c, c]
        fn = cm[c].sum() - tp
        fp = cm[:, c].sum() - tp
        denom = tp + fp + fn
        if cm[c].sum() > 0:
            present.append(c)
        per_class[c] = float(tp / denom) if denom > 0 else 0.0
    miou = float(np.mean([per_class[c] for c in present])) if present else 0.0
    total = cm.sum()
    acc = float(np.trace(cm) / total) if total > 0 else 0.0
    return per_class, miou, acc


# ---------------------------------------------------------------------------
# accumulating evaluator
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    per_class_ap: Dict[int, float]
    mean_ap: float
    per_class_distance_error: Dict[int, float]
    cdf_grid: np.ndarray
    cdf_values: np.ndarray
    per_class_iou: Dict[int, float]
    mean_iou: float
    pixel_accuracy: float
    n_images: int
    n_gt_boxes: int
    n_detections: int


@dataclass
class Accumulator:
    """Evaluation state that merges across shards."""

    num_seg_classes: int = 19
    iou_threshold: float = 0.5
    ignore_area: float = DEFAULT_IGNORE_AREA
    detections: List[DetRecord] = field(default_factory=list)
    gts: List[GtRecord] = field(default_factory=list)
    depth_errors: List[Tuple[int, float]] = field(default_factory=list)
    confusion: np.ndarray = None  # type: ignore[assignment]
    n_images: int = 0

    def __post_init__(self):
        if self.confusion is None:
            self.confusion = np.zeros(
                (self.num_seg_classes, self.num_seg_classes), dtype=np.int64
            )

    def add_scene(
        self,
        image_id: str,
        detections: Sequence[DetRecord],
        gts: Sequence[GtRecord],
        pred_mask: Optional[np.ndarray] = None,
        gt_mask: Optional[np.ndarray] = None,
    ) -> None:
        self.n_images += 1
        self.detections.extend(detections)
        self.gts.extend(gts)
        self._pair_depths(detections, gts)
        if pred_mask is not None and gt_mask is not None:
            self.confusion += confusion_matrix(pred_mask, gt_mask, self.num_seg_classes)

    def _pair_depths(self, detections, gts) -> None:
        """IoU-greedy pairing for the depth metric, class-agnostic.

        Box/class correctness is scored elsewhere; depth needs some
        association, so each detection (score-descending) takes the best
        unmatched ground truth at IoU >= threshold.
        """
        order = sorted(detections, key=lambda d: -d.score)
        taken = [False] * len(gts)
        for det in order:
            best, best_j = 0.0, -1
            for j, g in enumerate(gts):
                if taken[j] or g.depth_m is None or g.area < self.ignore_area:
                    continue
                v = iou_xywh(det.box, g.box)
                if v > best:
                    best, best_j = v, j
            if best_j >= 0 and best >= self.iou_threshold:
                taken[best_j] = True
                est = getattr(det, "depth_m", None)
                if est is not None:
                    self.depth_errors.append(
                        (gts[best_j].class_id, distance_error(est, gts[best_j].depth_m))
                    )

    def merge(self, other: "Accumulator") -> "Accumulator":
        if other.num_seg_classes != self.num_seg_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        self.detections.extend(other.detections)
        self.gts.extend(other.gts)
        self.depth_errors.extend(other.depth_errors)
        self.confusion += other.confusion
        self.n_images += other.n_images
        return self

    def report(self) -> MetricsReport:
        ap = average_precision(
            self.detections, self.gts, self.iou_threshold, self.ignore_area
        )
        mean_ap = mean_average_precision(ap, self.gts, self.ignore_area)
        errors = [e for _, e in self.depth_errors]
        per_class_err: Dict[int, float] = {}
        for c in sorted({c for c, _ in self.depth_errors}):
            vals = [e for cc, e in self.depth_errors if cc == c]
            per_class_err[c] = float(np.mean(vals))
        per_iou, miou, acc = scores_from_confusion(self.confusion)
        return MetricsReport(
            per_class_ap=ap,
            mean_ap=mean_ap,
            per_class_distance_error=per_class_err,
            cdf_grid=CDF_GRID.copy(),
            cdf_values=error_cdf(errors) if errors else np.zeros(len(CDF_GRID)),
            per_class_iou=per_iou,
            mean_iou=miou,
            pixel_accuracy=acc,
            n_images=self.n_images,
            n_gt_boxes=len(self.gts),
            n_detections=len(self.detections),
        )


@dataclass(frozen=True)
class PairedDetection(DetRecord):
    """Detection record that also carries the estimated depth."""

    depth_m: float = 0.0


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def write_report(report: MetricsReport, out_dir, det_class_names=None) -> List[Path]:
    """metrics.csv, cdf.csv and the two SVG renderings."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["key", "value"])
        w.writerow(["mAP", f"{report.mean_ap:.6f}"])
        w.writerow(["mIoU", f"{report.mean_iou:.6f}"])
        w.writerow(["pixel_accuracy", f"{report.pixel_accuracy:.6f}"])
        w.writerow(["images", report.n_images])
        w.writerow(["gt_boxes", report.n_gt_boxes])
        w.writerow(["detections", report.n_detections])
        if report.per_class_distance_error:
            overall = np.mean(list(report.per_class_distance_error.values()))
            w.writerow(["mean_distance_error", f"{overall:.6f}"])
        for c, v in sorted(report.per_class_ap.items()):
            name = det_class_names[c - 1] if det_class_names else str(c)
            w.writerow([f"AP/{name}", f"{v:.6f}"])
        for c, v in sorted(report.per_class_distance_error.items()):
            name = det_class_names[c - 1] if det_class_names else str(c)
            w.writerow([f"distance_error/{name}", f"{v:.6f}"])
        for c, v in sorted(report.per_class_iou.items()):
            w.writerow([f"IoU/{c}", f"{v:.6f}"])
    written.append(metrics_path)

    cdf_path = out_dir / "cdf.csv"
    with open(cdf_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "F"])
        for x, v in zip(report.cdf_grid, report.cdf_values):
            w.writerow([f"{x:.2f}", f"{v:.6f}"])
    written.append(cdf_path)

    written.append(plot_cdf(report, out_dir / "cdf.svg"))
    written.append(plot_per_class_error(report, out_dir / "perclass_error.svg", det_class_names))
    return written


def plot_cdf(report: MetricsReport, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(report.cdf_grid, report.cdf_values)
    ax.set_xlabel("relative distance error")
    ax.set_ylabel("fraction of detections")
    ax.set_title("Distance error CDF")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_per_class_error(report: MetricsReport, path, det_class_names=None) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    items = sorted(report.per_class_distance_error.items())
    labels = [
        det_class_names[c - 1] if det_class_names else str(c) for c, _ in items
    ]
    values = [v for _, v in items]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("mean relative distance error")
    ax.set_title("Distance error by class")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
