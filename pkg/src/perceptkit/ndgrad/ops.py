"""Differentiable operators over Tensor.

Every operator builds its output from plain numpy and attaches a backward
closure that accumulates into the parents' ``grad`` buffers. Convolution,
deconvolution and pooling are computed directly on strided window views; the
kernel-offset loops in the backward passes touch each (kh, kw) position once
with full-array slices, so cost stays proportional to the forward pass.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

Scalar = Union[int, float]


def _make(data, parents, backward) -> Tensor:
    """Wrap an op result; record the graph only when a parent needs grad."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    out = Tensor(data, requires_grad=True, _parents=parents)
    out._backward = backward(out)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(out):
        def fn():
            if a.requires_grad:
                a._ensure_grad()
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if b.requires_grad:
                b._ensure_grad()
                b.grad += _unbroadcast(out.grad, b.data.shape)

        return fn

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        scale = float(b)
        data = a.data * scale

        def backward_s(out):
            def fn():
                if a.requires_grad:
                    a._ensure_grad()
                    a.grad += out.grad * scale

            return fn

        return _make(data, (a,), backward_s)

    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(out):
        def fn():
            if a.requires_grad:
                a._ensure_grad()
                a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
            if b.requires_grad:
                b._ensure_grad()
                b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

        return fn

    return _make(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad * (x.data > 0)

        return fn

    return _make(data, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad  # broadcasts the scalar

        return fn

    return _make(data, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.data.size)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad.reshape(x.data.shape)

        return fn

    return _make(data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad.transpose(inverse)

        return fn

    return _make(data, (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    data = x.data[index]

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                np.add.at(x.grad, index, out.grad)

        return fn

    return _make(data, (x,), backward)


def gather_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor by integer index (duplicates allowed)."""
    rows = np.asarray(rows, dtype=np.intp)
    if x.data.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D tensor, got shape {x.data.shape}")
    data = x.data[rows]

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                np.add.at(x.grad, rows, out.grad)

        return fn

    return _make(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(out):
        def fn():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._ensure_grad()
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    t.grad += out.grad[tuple(sl)]

        return fn

    return _make(data, tuple(tensors), backward)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; contributes exactly zero gradient upstream."""
    return Tensor(x.data, requires_grad=False)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view (N, C, H', W', kh, kw) over a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """2-D cross-correlation, NCHW input against OCkk weight."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, c, h, w = x.data.shape
    o, cw, kh, kw = weight.data.shape
    if c != cw:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape} has {c} channels, "
            f"weight {weight.data.shape} expects {cw}"
        )
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ValueError(
            f"kernel ({kh}x{kw}) larger than padded input ({h + 2 * pad}x{w + 2 * pad})"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, kh, kw, stride)
    out_data = np.tensordot(win, weight.data, axes=[(1, 4, 5), (1, 2, 3)])
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, o, 1, 1)
    oh, ow = out_data.shape[2], out_data.shape[3]

    def backward(out):
        def fn():
            g = out.grad
            if bias is not None and bias.requires_grad:
                bias._ensure_grad()
                bias.grad += g.sum(axis=(0, 2, 3))
            if weight.requires_grad:
                weight._ensure_grad()
                weight.grad += np.tensordot(g, win, axes=[(0, 2, 3), (0, 2, 3)])
            if x.requires_grad:
                x._ensure_grad()
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        contrib = np.tensordot(g, weight.data[:, :, i, j], axes=[(1,), (0,)])
                        dxp[
                            :,
                            :,
                            i : i + stride * (oh - 1) + 1 : stride,
                            j : j + stride * (ow - 1) + 1 : stride,
                        ] += contrib.transpose(0, 3, 1, 2)
                x.grad += dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp

        return fn

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out_data, parents, backward)


def deconv2d(
    x: Tensor,
    weight: Tensor,
    stride: int,
    crop: Optional[int] = None,
) -> Tensor:
    """Transposed convolution (learnable upsampling).

    ``weight`` is (C_in, O, kh, kw) for a dense kernel or (C, 1, kh, kw) for a
    per-channel (depthwise) kernel. The default crop makes the output extent
    exactly ``stride * H`` when the kernel size is ``2f - (f % 2)`` for
    ``stride == f`` (FCN upsampling convention).
    """
    if stride < 1:
        raise ValueError(f"deconv2d stride must be >= 1, got {stride}")
    n, c, h, w = x.data.shape
    wc, opg, kh, kw = weight.data.shape
    if wc != c:
        raise ValueError(
            f"deconv2d channel mismatch: input has {c} channels, weight leads with {wc}"
        )
    # (C, 1, kh, kw) is read as one kernel per channel; for C == 1 that
    # coincides with a dense single-output kernel, so nothing is lost.
    depthwise = opg == 1
    o = c if depthwise else opg
    if crop is None:
        crop = max((kh - stride + 1) // 2, 0)
    full_h = (h - 1) * stride + kh
    full_w = (w - 1) * stride + kw
    out_p = np.zeros((n, o, full_h, full_w), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            sl = np.s_[
                :, :, i : i + stride * (h - 1) + 1 : stride, j : j + stride * (w - 1) + 1 : stride
            ]
            if depthwise:
                out_p[sl] += x.data * weight.data[:, 0, i, j][None, :, None, None]
            else:
                proj = np.tensordot(x.data, weight.data[:, :, i, j], axes=[(1,), (0,)])
                out_p[sl] += proj.transpose(0, 3, 1, 2)
    out_data = np.ascontiguousarray(
        out_p[:, :, crop : full_h - crop, crop : full_w - crop]
    )

    def backward(out):
        def fn():
            gp = np.zeros((n, o, full_h, full_w), dtype=out.grad.dtype)
            gp[:, :, crop : full_h - crop, crop : full_w - crop] = out.grad
            for i in range(kh):
                for j in range(kw):
                    sl = gp[
                        :,
                        :,
                        i : i + stride * (h - 1) + 1 : stride,
                        j : j + stride * (w - 1) + 1 : stride,
                    ]
                    if depthwise:
                        if x.requires_grad:
                            x._ensure_grad()
                            x.grad += sl * weight.data[:, 0, i, j][None, :, None, None]
                        if weight.requires_grad:
                            weight._ensure_grad()
                            weight.grad[:, 0, i, j] += (x.data * sl).sum(axis=(0, 2, 3))
                    else:
                        if x.requires_grad:
                            x._ensure_grad()
                            back = np.tensordot(sl, weight.data[:, :, i, j], axes=[(1,), (1,)])
                            x.grad += back.transpose(0, 3, 1, 2)
                        if weight.requires_grad:
                            weight._ensure_grad()
                            weight.grad[:, :, i, j] += np.tensordot(
                                x.data, sl, axes=[(0, 2, 3), (0, 2, 3)]
                            )

        return fn

    return _make(out_data, (x, weight), backward)


def bilinear_kernel(factor: int, channels: int, dtype=np.float32) -> Tensor:
    """Per-channel tent kernel of size 2*factor - (factor % 2).

    Used to initialize deconv2d weights so that factor-``stride`` upsampling
    starts out as exact bilinear interpolation (constants preserved in the
    interior).
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    size = 2 * factor - factor % 2
    half = (size + 1) // 2
    center = half - 1 if size % 2 == 1 else half - 0.5
    taps = 1.0 - np.abs(np.arange(size) - center) / half
    kern = np.outer(taps, taps).astype(dtype)
    data = np.broadcast_to(kern, (channels, 1, size, size)).copy()
    return Tensor(data)


def avgpool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    if kernel < 1 or stride < 1:
        raise ValueError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    n, c, h, w = x.data.shape
    if kernel > h or kernel > w:
        raise ValueError(f"pool kernel {kernel} larger than input {h}x{w}")
    win = _windows(x.data, kernel, kernel, stride)
    out_data = win.mean(axis=(4, 5))
    oh, ow = out_data.shape[2], out_data.shape[3]
    inv = 1.0 / (kernel * kernel)

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                g = out.grad * inv
                for i in range(kernel):
                    for j in range(kernel):
                        x.grad[
                            :,
                            :,
                            i : i + stride * (oh - 1) + 1 : stride,
                            j : j + stride * (ow - 1) + 1 : stride,
                        ] += g

        return fn

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# resize (non-learned)
# ---------------------------------------------------------------------------


def resize_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.data.shape

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))

        return fn

    return _make(data, (x,), backward)


def _bilinear_axis(in_len: int, out_len: int):
    """Source indices and lerp weights for one axis (half-pixel centers)."""
    coords = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    lo = np.floor(coords).astype(np.intp)
    frac = coords - lo
    lo = np.clip(lo, 0, in_len - 1)
    hi = np.clip(lo + 1, 0, in_len - 1)
    return lo, hi, frac


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.data.shape
    i0, i1, fy = _bilinear_axis(h, out_h)
    j0, j1, fx = _bilinear_axis(w, out_w)
    fy = fy[:, None].astype(x.data.dtype)
    fx = fx[None, :].astype(x.data.dtype)
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    I0, J0 = i0[:, None], j0[None, :]
    I1, J1 = i1[:, None], j1[None, :]
    data = (
        x.data[:, :, I0, J0] * w00
        + x.data[:, :, I0, J1] * w01
        + x.data[:, :, I1, J0] * w10
        + x.data[:, :, I1, J1] * w11
    )

    def backward(out):
        def fn():
            if x.requires_grad:
                x._ensure_grad()
                g = out.grad
                np.add.at(x.grad, (slice(None), slice(None), I0, J0), g * w00)
                np.add.at(x.grad, (slice(None), slice(None), I0, J1), g * w01)
                np.add.at(x.grad, (slice(None), slice(None), I1, J0), g * w10)
                np.add.at(x.grad, (slice(None), slice(None), I1, J1), g * w11)

        return fn

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    ignore_label: int = -1,
    reduction: str = "mean",
) -> Tensor:
    """Negative log-softmax against integer labels; class axis is axis 1.

    Positions labelled ``ignore_label`` contribute nothing to the value or
    the gradient. ``reduction`` is 'mean' (over non-ignored positions) or
    'sum'.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    targets = np.asarray(targets)
    num_classes = logits.data.shape[1]
    spatial_first = np.moveaxis(logits.data, 1, -1)  # (... , C)
    flat = spatial_first.reshape(-1, num_classes)
    t = targets.reshape(-1)
    if flat.shape[0] != t.shape[0]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {logits.data.shape}"
        )
    valid = t != ignore_label
    tv = t[valid]
    if tv.size and (tv.min() < 0 or tv.max() >= num_classes):
        bad = tv[(tv < 0) | (tv >= num_classes)][0]
        raise ValueError(f"target label {bad} out of range [0, {num_classes})")
    count = int(valid.sum())
    if count == 0:
        loss = 0.0
    else:
        rows = flat[valid]
        m = rows.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(rows - m).sum(axis=1))
        losses = lse - rows[np.arange(count), tv]
        loss = losses.sum() / (count if reduction == "mean" else 1)
    data = np.asarray(loss, dtype=logits.data.dtype)

    def backward(out):
        def fn():
            if not logits.requires_grad or count == 0:
                return
            logits._ensure_grad()
            rows = flat[valid]
            m = rows.max(axis=1, keepdims=True)
            e = np.exp(rows - m)
            p = e / e.sum(axis=1, keepdims=True)
            p[np.arange(count), tv] -= 1.0
            scale = float(out.grad) / (count if reduction == "mean" else 1)
            dflat = np.zeros_like(flat)
            dflat[valid] = p * scale
            dfull = dflat.reshape(spatial_first.shape)
            logits.grad += np.moveaxis(dfull, -1, 1)

        return fn

    return _make(data, (logits,), backward)


def smooth_l1(pred: Tensor, target) -> Tensor:
    """Sum over elements of 0.5 e^2 for |e| < 1 else |e| - 0.5."""
    target = as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"smooth_l1 shape mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    e = pred.data - target.data
    ae = np.abs(e)
    small = ae < 1.0
    data = np.asarray(
        np.where(small, 0.5 * e * e, ae - 0.5).sum(), dtype=pred.data.dtype
    )

    def backward(out):
        def fn():
            d = np.clip(e, -1.0, 1.0) * out.grad
            if pred.requires_grad:
                pred._ensure_grad()
                pred.grad += d
            if target.requires_grad:
                target._ensure_grad()
                target.grad -= d

        return fn

    return _make(data, (pred, target), backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the running averages (an affine map).
    """
    n, c, h, w = x.data.shape
    axes = (0, 2, 3)
    m = n * h * w
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # biased, used for normalization
        unbiased = var * m / max(m - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    xhat = xhat.astype(x.data.dtype, copy=False)

    def backward(out):
        def fn():
            g = out.grad
            if beta.requires_grad:
                beta._ensure_grad()
                beta.grad += g.sum(axis=axes)
            if gamma.requires_grad:
                gamma._ensure_grad()
                gamma.grad += (g * xhat).sum(axis=axes)
            if x.requires_grad:
                x._ensure_grad()
                gs = gamma.data.reshape(1, c, 1, 1) * inv_std.reshape(1, c, 1, 1)
                if training:
                    gsum = g.sum(axis=axes, keepdims=True)
                    gx = (g * xhat).sum(axis=axes, keepdims=True)
                    x.grad += gs * (g - gsum / m - xhat * gx / m)
                else:
                    x.grad += gs * g

        return fn

    return _make(data.astype(x.data.dtype, copy=False), (x, gamma, beta), backward)
