"""Network primitives on top of the tensor core.

Feature maps are channels-last (H, W, C) throughout.  Convolutions are
stride-1 with zero padding ("same" extent).  All ops record the tape and
contribute to the multiply-add tally.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _scan
from .errors import ShapeError
from .tensor import Tensor, _count, _result, as_tensor, concat, permute, reshape

_LN_FLOOR = 1e-6


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise conv: x (H, W, Cin) @ w (Cin, Cout) + b."""
    H, W, cin = x.shape
    y = reshape(x, (H * W, cin)) @ w
    y = reshape(y, (H, W, w.shape[1]))
    return y if b is None else y + b


def conv3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 conv, zero padded. x (H, W, Cin), w (3, 3, Cin, Cout)."""
    H, W, cin = x.shape
    if w.shape[:3] != (3, 3, cin):
        raise ShapeError("conv3x3", w.shape, f"(3, 3, {cin}, Cout)")
    cout = w.shape[3]
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    # (H, W, 3, 3, Cin) -> rows of the im2col matrix
    cols = sliding_window_view(xp, (3, 3), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    cols = np.ascontiguousarray(cols).reshape(H * W, 9 * cin)
    wf = w.data.reshape(9 * cin, cout)
    out = cols @ wf
    _count(out.size * 9 * cin)

    def backward(g):
        gf = g.reshape(H * W, cout)
        if w.requires_grad:
            w._accum((cols.T @ gf).reshape(w.data.shape))
        if x.requires_grad:
            gcols = (gf @ wf.T).reshape(H, W, 3, 3, cin)
            gxp = np.zeros_like(xp)
            for dy in range(3):
                for dx in range(3):
                    gxp[dy:dy + H, dx:dx + W] += gcols[:, :, dy, dx]
            x._accum(gxp[1:1 + H, 1:1 + W])

    y = _result(out.reshape(H, W, cout), (x, w), backward)
    return y if b is None else y + b


def dwconv3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Depthwise 3x3 conv. x (H, W, C), w (3, 3, C)."""
    H, W, c = x.shape
    if w.shape != (3, 3, c):
        raise ShapeError("dwconv3x3", w.shape, f"(3, 3, {c})")
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(x.data)
    for dy in range(3):
        for dx in range(3):
            out += w.data[dy, dx] * xp[dy:dy + H, dx:dx + W]
    _count(out.size * 9)

    def backward(g):
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for dy in range(3):
                for dx in range(3):
                    gw[dy, dx] = np.einsum("hwc,hwc->c", xp[dy:dy + H, dx:dx + W], g)
            w._accum(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for dy in range(3):
                for dx in range(3):
                    gxp[dy:dy + H, dx:dx + W] += w.data[dy, dx] * g
            x._accum(gxp[1:1 + H, 1:1 + W])

    y = _result(out, (x, w), backward)
    return y if b is None else y + b


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize over the channel (last) axis per position.

    Variance gets a 1e-6 floor; a constant channel vector therefore maps
    to the bias exactly.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + _LN_FLOOR)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data
    _count(4 * out.size)

    def backward(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gxh = g * gain.data
            m1 = gxh.mean(axis=-1, keepdims=True)
            m2 = (gxh * xhat).mean(axis=-1, keepdims=True)
            x._accum(rstd * (gxh - m1 - xhat * m2))

    return _result(out, (x, gain, bias), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    _count(3 * s.size)

    def backward(g):
        if x.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            x._accum(s * (g - inner))

    return _result(s, (x,), backward)


def pixel_unshuffle2(x: Tensor) -> Tensor:
    """(H, W, C) -> (H/2, W/2, 4C); channel blocks ordered by (dy, dx)."""
    H, W, c = x.shape
    if H % 2 or W % 2:
        raise ShapeError("pixel_unshuffle2", x.shape, "even spatial extents")
    y = reshape(x, (H // 2, 2, W // 2, 2, c))
    y = permute(y, (0, 2, 1, 3, 4))
    return reshape(y, (H // 2, W // 2, 4 * c))


def pixel_shuffle2(x: Tensor) -> Tensor:
    """(H, W, 4C) -> (2H, 2W, C); exact inverse of pixel_unshuffle2."""
    H, W, c4 = x.shape
    if c4 % 4:
        raise ShapeError("pixel_shuffle2", x.shape, "channels divisible by 4")
    c = c4 // 4
    y = reshape(x, (H, W, 2, 2, c))
    y = permute(y, (0, 2, 1, 3, 4))
    return reshape(y, (2 * H, 2 * W, c))


def selective_scan(x: Tensor, delta: Tensor, b: Tensor, c: Tensor, a: Tensor, d: Tensor) -> Tensor:
    """Diagonal state-space scan over (K, L, C) sequences.

    h_t = exp(delta_t * a) h_{t-1} + (delta_t b_t) x_t,  y_t = <c_t, h_t> + d x_t.
    delta must be strictly positive.
    """
    if x.ndim != 3:
        raise ShapeError("selective_scan", x.shape, "(K, L, C)")
    K, L, C = x.shape
    N = b.shape[-1]
    if delta.shape != (K, L, C) or b.shape != (K, L, N) or c.shape != (K, L, N):
        raise ShapeError("selective_scan", delta.shape, f"delta (K,L,C)={x.shape}, b/c (K,L,{N})")
    if a.shape != (K, C, N) or d.shape != (K, C):
        raise ShapeError("selective_scan", a.shape, f"a ({K},{C},{N}), d ({K},{C})")
    if not (delta.data > 0).all():
        raise ValueError("selective_scan: delta must be strictly positive")

    args = tuple(np.ascontiguousarray(t.data) for t in (x, delta, b, c, a, d))
    y, h = _scan.scan_forward(*args)
    _count(K * L * C * (3 * N + 2))

    def backward(g):
        grads = _scan.scan_backward(*args, h, np.ascontiguousarray(g))
        for t, gt in zip((x, delta, b, c, a, d), grads):
            if t.requires_grad:
                t._accum(gt)

    return _result(y, (x, delta, b, c, a, d), backward)


def sel_scan_1d(x: Tensor, delta: Tensor, b: Tensor, c: Tensor, a: Tensor, d: Tensor) -> Tensor:
    """Single-sequence wrapper: x (L, C), b/c (L, N), a (C, N), d (C,)."""
    L, C = x.shape
    N = b.shape[-1]
    y = selective_scan(
        reshape(x, (1, L, C)), reshape(delta, (1, L, C)),
        reshape(b, (1, L, N)), reshape(c, (1, L, N)),
        reshape(a, (1, C, N)), reshape(d, (1, C)),
    )
    return reshape(y, (L, C))


def global_attention_madds(h: int, w: int, d: int) -> int:
    """Multiply-adds of one full (non-windowed) self-attention at (h, w, d).

    Reference oracle for complexity comparisons: QKV + output projections
    are linear in pixels, the score/apply matmuls are quadratic.
    """
    n = h * w
    return 4 * n * d * d + 2 * n * n * d
