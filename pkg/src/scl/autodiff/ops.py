"""Differentiable operations: exactly the set the model's forward pass needs.

Every op validates shapes up front, computes the forward result with numpy,
and registers an analytic backward rule via apply_op. Inputs that do not
require gradients get None from the backward rule so their gradient work
is skipped.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, apply_op


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[B,I] @ w[I,O] + b[O]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(f"linear: expected 2-d inputs, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: inner dims of {x.shape} and {w.shape} do not match")
    if b.data.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} does not match {w.shape}")
    out = x.data @ w.data + b.data

    def make_backward():
        def bwd(g):
            gx = g @ w.data.T if x.requires_grad else None
            gw = x.data.T @ g if w.requires_grad else None
            gb = g.sum(axis=0) if b.requires_grad else None
            return gx, gw, gb
        return bwd

    return apply_op("linear", (x, w, b), out, make_backward)


def grouped_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-group affine map: x[N,G,I], w[G,I,O], b[G,O] -> [N,G,O].

    Group g applies its own weight slice; this is the non-shared variant
    of applying one network to every group.
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError(f"grouped_linear: expected 3-d inputs, got {x.shape} and {w.shape}")
    n, groups, d_in = x.shape
    if w.shape[0] != groups or w.shape[1] != d_in:
        raise ValueError(f"grouped_linear: weight {w.shape} does not match input {x.shape}")
    if b.data.shape != (groups, w.shape[2]):
        raise ValueError(f"grouped_linear: bias shape {b.shape} does not match {w.shape}")
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2))  # [G,N,I]
    out = (xt @ w.data).transpose(1, 0, 2) + b.data

    def make_backward():
        def bwd(g):
            gt = np.ascontiguousarray(g.transpose(1, 0, 2))  # [G,N,O]
            gx = (gt @ w.data.transpose(0, 2, 1)).transpose(1, 0, 2) if x.requires_grad else None
            gw = xt.transpose(0, 2, 1) @ gt if w.requires_grad else None
            gb = g.sum(axis=0) if b.requires_grad else None
            return gx, gw, gb
        return bwd

    return apply_op("grouped_linear", (x, w, b), out, make_backward)


def conv2d(x: Tensor, k: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with padding 1: x[B,C,H,W], k[F,C,3,3] -> [B,F,H',W'].

    H' = floor((H-1)/stride) + 1. Only strides 1 and 2 are supported.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: expected 4-d input, got {x.shape}")
    if k.data.ndim != 4 or k.shape[2:] != (3, 3):
        raise ValueError(f"conv2d: expected [F,C,3,3] kernel, got {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ValueError(f"conv2d: input channels {x.shape} do not match kernel {k.shape}")
    if bias.data.shape != (k.shape[0],):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match kernel {k.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")

    batch, c_in, h, w = x.shape
    f = k.shape[0]
    h_out = (h - 1) // stride + 1
    w_out = (w - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    # [B,C,Ho,Wo,3,3] -> [B*Ho*Wo, C*9]; the copy here is the im2col buffer
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        batch * h_out * w_out, c_in * 9)
    kmat = k.data.reshape(f, c_in * 9)
    out = (cols @ kmat.T + bias.data).reshape(batch, h_out, w_out, f).transpose(0, 3, 1, 2)

    def make_backward():
        def bwd(g):
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
            gk = (gmat.T @ cols).reshape(k.data.shape) if k.requires_grad else None
            gb = gmat.sum(axis=0) if bias.requires_grad else None
            gx = None
            if x.requires_grad:
                # one contiguous [3,3,B,C,Ho,Wo] copy keeps the nine
                # scatter-adds streaming instead of stride-9 gathers
                gcols = np.ascontiguousarray(
                    (gmat @ kmat).reshape(batch, h_out, w_out, c_in, 3, 3)
                    .transpose(4, 5, 0, 3, 1, 2))
                gxp = np.zeros_like(xp)
                for i in range(3):
                    for j in range(3):
                        gxp[:, :, i:i + stride * (h_out - 1) + 1:stride,
                            j:j + stride * (w_out - 1) + 1:stride] += gcols[i, j]
                gx = gxp[:, :, 1:h + 1, 1:w + 1]
            return gx, gk, gb
        return bwd

    return apply_op("conv2d", (x, k, bias), np.ascontiguousarray(out), make_backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def make_backward():
        mask = x.data > 0

        def bwd(g):
            return (g * mask,)
        return bwd

    return apply_op("relu", (x,), out, make_backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def make_backward():
        def bwd(g):
            gxhat = g * gamma.data
            gx = None
            if x.requires_grad:
                gx = inv * (gxhat
                            - gxhat.mean(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
            red = tuple(range(g.ndim - 1))
            ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
            gbeta = g.sum(axis=red) if beta.requires_grad else None
            return gx, ggamma, gbeta
        return bwd

    return apply_op("layer_norm", (x, gamma, beta), out, make_backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equal-shape tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} differ")
    out = a.data + b.data

    def make_backward():
        def bwd(g):
            return (g if a.requires_grad else None,
                    g if b.requires_grad else None)
        return bwd

    return apply_op("add", (a, b), out, make_backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def make_backward():
        src = x.data.shape

        def bwd(g):
            return (g.reshape(src),)
        return bwd

    return apply_op("reshape", (x,), out, make_backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.ascontiguousarray(x.data.transpose(axes))

    def make_backward():
        inv = tuple(np.argsort(axes))

        def bwd(g):
            return (np.ascontiguousarray(g.transpose(inv)),)
        return bwd

    return apply_op("transpose", (x,), out, make_backward)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ValueError("concat: empty input list")
    out = np.concatenate([t.data for t in xs], axis=axis)

    def make_backward():
        sizes = [t.data.shape[axis] for t in xs]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            pieces = np.split(g, splits, axis=axis)
            return tuple(p if t.requires_grad else None
                         for p, t in zip(pieces, xs))
        return bwd

    return apply_op("concat", tuple(xs), out, make_backward)


def slice_axis(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise ValueError(f"slice_axis: [{start}, {start + length}) out of range "
                         f"for axis {axis} of {x.shape}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = np.ascontiguousarray(x.data[index])

    def make_backward():
        def bwd(g):
            gx = np.zeros_like(x.data)
            gx[index] = g
            return (gx,)
        return bwd

    return apply_op("slice_axis", (x,), out, make_backward)


def split_groups(x: Tensor, m: int) -> Tensor:
    """Split x[B,D] into m equal groups: [B, m, D/m]."""
    if x.data.ndim != 2:
        raise ValueError(f"split_groups: expected 2-d input, got {x.shape}")
    b, d = x.shape
    if m <= 0 or d % m != 0:
        raise ValueError(f"split_groups: m={m} does not divide D={d}")
    return reshape(x, (b, m, d // m))


def concat_groups(x: Tensor) -> Tensor:
    """Merge x[B,m,G] back into [B, m*G]; exact inverse of split_groups."""
    if x.data.ndim != 3:
        raise ValueError(f"concat_groups: expected 3-d input, got {x.shape}")
    b, m, g = x.shape
    return reshape(x, (b, m * g))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def make_backward():
        def bwd(g):
            return (np.full_like(x.data, g),)
        return bwd

    return apply_op("sum_all", (x,), out, make_backward)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def make_backward():
        def bwd(g):
            dot = (g * p).sum(axis=-1, keepdims=True)
            return (p * (g - dot),)
        return bwd

    return apply_op("softmax", (x,), p, make_backward)


def softmax_cross_entropy(scores: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target class per row.

    scores[B,K]; targets is an int array of length B with values in [0, K).
    """
    t = np.asarray(targets)
    if scores.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: expected 2-d scores, got {scores.shape}")
    b, k = scores.shape
    if t.shape != (b,):
        raise ValueError(f"softmax_cross_entropy: targets shape {t.shape} does not match batch {b}")
    if t.min() < 0 or t.max() >= k:
        raise IndexError(f"softmax_cross_entropy: target out of range [0, {k})")
    z = scores.data - scores.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)
    out = np.asarray(-logp[rows, t].mean())

    def make_backward():
        def bwd(g):
            p = np.exp(logp)
            p[rows, t] -= 1.0
            return (g * p / b,)
        return bwd

    return apply_op("softmax_cross_entropy", (scores,), out, make_backward)
