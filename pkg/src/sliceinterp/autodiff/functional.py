"""Image and loss operations built on :mod:`sliceinterp.autodiff.tensor`."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _sigmoid, as_tensor, concat, matmul, mean, reshape, softmax, tabs, transpose


class ShapeError(ValueError):
    pass


def _check_positive(name: str, value: int) -> None:
    if int(value) <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = shape[:2]
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (B, Cin, H, W) batch with a (Cout, Cin, kh, kw) kernel."""
    _check_positive("stride", stride)
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv2d input has {cin} channels but weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {cout} output channels")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"input {h}x{w} too small for kernel {kh}x{kw} with padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, cout, oh, ow)

    def backward(g):
        g2 = g.reshape(b, cout, oh * ow)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(wmat.T @ g2, xp.shape, kh, kw, stride, oh, ow)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed convolution with a (Cin, Cout, kh, kw) kernel and no padding.

    Output extent is (H - 1) * stride + kh, so a 2x2 kernel at stride 2 doubles H and W.
    """
    _check_positive("stride", stride)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv_transpose2d input has {cin} channels but weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv_transpose2d bias shape {bias.shape} does not match {cout} output channels")
    oh, ow = (h - 1) * stride + kh, (w - 1) * stride + kw

    wmat = weight.data.reshape(cin, cout * kh * kw)
    x2 = x.data.reshape(b, cin, h * w)
    out = _col2im(wmat.T @ x2, (b, cout, oh, ow), kh, kw, stride, h, w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gcols = _im2col(g, kh, kw, stride, h, w)
        gx = (wmat @ gcols).reshape(x.shape) if x.requires_grad else None
        gw = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv_transpose2d")


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first cell in row-major order."""
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"maxpool2d needs extents divisible by {window}, got {h}x{w}")
    oh, ow = h // window, w // window
    blocks = x.data.reshape(b, c, oh, window, ow, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, -1)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gb = gb.reshape(b, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gb,)

    return Tensor._from_op(out, (x,), backward, "maxpool2d")


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization; training mode updates the running stats in place."""
    b, c, h, w = x.shape
    if b == 0:
        raise ValueError("batchnorm2d needs a non-empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d affine parameters must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = b * h * w
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = (x.data - mu[None, :, None, None].astype(x.data.dtype)) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        gg = gamma.data[None, :, None, None]
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gg
        if training:
            n = b * h * w
            gx = (inv_std[None, :, None, None] / n) * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = dxhat * inv_std[None, :, None, None]
        return gx, dgamma, dbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batchnorm2d")


def channel_concat(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.shape[:1] != b.shape[:1] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"channel_concat needs equal batch/spatial extents, got {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def channel_split(x: Tensor, first: int) -> tuple[Tensor, Tensor]:
    return x[:, :first], x[:, first:]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, transpose(weight))
    return out + bias if bias is not None else out


def softmax_matmul_attention(
    x: Tensor,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    gate: Tensor,
    return_weights: bool = False,
):
    """Self-attention over the H*W positions of a feature map with a gated residual.

    Query/key/value are 1x1 convolutions; weights are softmax-normalised over keys.
    """
    if x.ndim != 4:
        raise ShapeError(f"attention expects a 4-d feature map, got {x.shape}")
    b, c, h, w = x.shape
    if wv.shape[:2] != (c, c):
        raise ShapeError(f"value projection must map {c} -> {c} channels, got {wv.shape}")
    n = h * w
    q = transpose(reshape(conv2d(x, wq, bq), (b, -1, n)), (0, 2, 1))
    k = reshape(conv2d(x, wk, bk), (b, -1, n))
    v = reshape(conv2d(x, wv, bv), (b, c, n))
    weights = softmax(matmul(q, k), axis=-1)
    attended = reshape(matmul(v, transpose(weights, (0, 2, 1))), (b, c, h, w))
    out = gate * attended + x
    return (out, weights) if return_weights else out


def _check_same(pred: Tensor, target: Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction {pred.shape} and target {target.shape} differ")


def l1_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, like=pred)
    _check_same(pred, target, "l1_loss")
    return mean(tabs(pred - target))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, like=pred)
    _check_same(pred, target, "mse_loss")
    diff = pred - target
    return mean(diff * diff)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against labels (array or scalar fill)."""
    if isinstance(labels, (int, float)):
        y = np.full(logits.shape, float(labels), dtype=logits.data.dtype)
    else:
        y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=logits.data.dtype)
        if y.shape != logits.shape:
            raise ShapeError(f"bce_with_logits: logits {logits.shape} and labels {y.shape} differ")
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = z.size
    out = np.asarray(per.mean(), dtype=z.dtype)

    def backward(g):
        return ((_sigmoid(z) - y) * (g / count),)

    return Tensor._from_op(out, (logits,), backward, "bce_with_logits")
