"""Independent brute-force references used to pin expected values.

Everything here is written in the most literal way possible (nested loops,
exhaustive enumeration) and never calls into the library's fast paths.
"""

from __future__ import annotations

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, pad=0):
    """Quadruple-loop cross-correlation reference."""
    n, c, h, ww = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for oi in range(o):
            for yi in range(oh):
                for xi in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (
                                    xp[ni, ci, yi * stride + i, xi * stride + j]
                                    * w[oi, ci, i, j]
                                )
                    out[ni, oi, yi, xi] = acc
            if b is not None:
                out[ni, oi] += b[oi]
    return out


def avgpool2d_loops(x, kernel, stride):
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for yi in range(oh):
                for xi in range(ow):
                    win = x[
                        ni,
                        ci,
                        yi * stride : yi * stride + kernel,
                        xi * stride : xi * stride + kernel,
                    ]
                    out[ni, ci, yi, xi] = win.mean()
    return out


def softmax_ce_scalar(logits, targets, ignore_label=-1):
    """Row-by-row log-sum-exp cross entropy, mean over non-ignored."""
    total, count = 0.0, 0
    for row, t in zip(logits, targets):
        if t == ignore_label:
            continue
        lse = np.log(np.exp(row).sum())
        total += lse - row[t]
        count += 1
    return total / count if count else 0.0


def iou_xywh(a, b):
    """IoU of two (x, y, w, h) boxes (continuous convention, no +1)."""
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    ix = max(0.0, min(ax2, bx2) - max(a[0], b[0]))
    iy = max(0.0, min(ay2, by2) - max(a[1], b[1]))
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def nms_quadratic(boxes, scores, iou_threshold):
    """O(n^2) suppression reference: keep i iff no higher-scoring kept j overlaps."""
    order = sorted(range(len(boxes)), key=lambda i: -scores[i])
    keep = []
    for i in order:
        if all(iou_xywh(boxes[i], boxes[j]) <= iou_threshold for j in keep):
            keep.append(i)
    return keep


def match_anchors_bruteforce(priors, gts, iou_threshold):
    """Exhaustive application of the two SSD matching rules.

    priors, gts: arrays of (cx, cy, w, h). Returns per-prior gt index or -1.
    Rule 1: global greedy bipartite, highest IoU pair first; only pairs with
    positive IoU participate (a gt overlapping nothing stays unmatched).
    Rule 2: every remaining prior takes its best gt if IoU >= threshold.
    """

    def corner(b):
        return (b[0] - b[2] / 2, b[1] - b[3] / 2, b[2], b[3])

    p = len(priors)
    g = len(gts)
    assign = np.full(p, -1, dtype=int)
    if g == 0:
        return assign
    iou = np.zeros((p, g))
    for i in range(p):
        for j in range(g):
            iou[i, j] = iou_xywh(corner(priors[i]), corner(gts[j]))
    taken_p, taken_g = set(), set()
    pairs = sorted(
        ((iou[i, j], i, j) for i in range(p) for j in range(g)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    for v, i, j in pairs:
        if len(taken_g) == g or v <= 0:
            break
        if i in taken_p or j in taken_g:
            continue
        assign[i] = j
        taken_p.add(i)
        taken_g.add(j)
    for i in range(p):
        if i in taken_p:
            continue
        j = int(np.argmax(iou[i]))
        if iou[i, j] >= iou_threshold:
            assign[i] = j
    return assign


def average_precision_bruteforce(dets, gts, iou_threshold, ignore_area):
    """AP for one class by literal enumeration.

    dets: list of (image_id, score, box); gts: list of (image_id, box).
    All-points interpolation over the precision-recall curve.
    """
    ignore = [g[1][2] * g[1][3] < ignore_area for g in gts]
    n_gt = sum(1 for flag in ignore if not flag)
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    matched = [False] * len(gts)
    tps, fps = [], []
    for i in order:
        img, _, box = dets[i]
        best, best_j = 0.0, -1
        for j, (gimg, gbox) in enumerate(gts):
            if gimg != img or matched[j] or ignore[j]:
                continue
            v = iou_xywh(box, gbox)
            if v > best:
                best, best_j = v, j
        if best >= iou_threshold and best_j >= 0:
            matched[best_j] = True
            tps.append(1)
            fps.append(0)
            continue
        # may still neutrally match an ignored gt
        hit_ignored = False
        for j, (gimg, gbox) in enumerate(gts):
            if gimg != img or not ignore[j]:
                continue
            if iou_xywh(box, gbox) >= iou_threshold:
                hit_ignored = True
                break
        if hit_ignored:
            continue
        tps.append(0)
        fps.append(1)
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(tps) if tps else np.array([])
    fp = np.cumsum(fps) if fps else np.array([])
    if len(tp) == 0:
        return 0.0
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # all-points: integrate precision envelope over recall
    ap = 0.0
    prev_r = 0.0
    for k in range(len(recall)):
        r = recall[k]
        if r == prev_r:
            continue
        p_at = precision[k:].max()
        ap += (r - prev_r) * p_at
        prev_r = r
    return float(ap)


def cdf_by_counting(errors, grid):
    errors = sorted(errors)
    out = []
    for x in grid:
        out.append(sum(1 for e in errors if e <= x) / len(errors))
    return np.array(out)


def confusion_by_pixels(pred, gt, num_classes):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(pred.ravel(), gt.ravel()):
        if g == 255:
            continue
        cm[g, p] += 1
    return cm
