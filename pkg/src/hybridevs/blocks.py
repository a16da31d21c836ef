"""Architectural building blocks.

Every block is a Module holding its parameters and exposing a pure
``forward``.  Feature maps are (H, W, C); window sets are (nW, M*M, C).
Construction threads one rng so a fixed seed fixes every weight.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import (
    Tensor,
    concat,
    flip,
    gelu,
    parameter,
    permute,
    relu,
    reshape,
    roll2d,
    silu,
    softplus,
    split,
    take_rows,
    tcos,
    texp,
    tsin,
    trunc_normal,
)

_NEG_INF = -1e9
_DELTA_FLOOR = 1e-8  # keeps softplus output strictly positive in float32


class Module:
    """Parameter container; names derive from attribute paths."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            yield from _walk_params(name, val)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _walk_params(name: str, val):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name)
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk_params(f"{name}{i}", item)


def _weight(rng: np.random.Generator, shape, dtype, std: float = 0.02) -> Tensor:
    return parameter(trunc_normal(rng, shape, std=std), dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return parameter(np.zeros(shape), dtype=dtype)


class Linear(Module):
    def __init__(self, rng, cin: int, cout: int, dtype, bias: bool = True, zero_init: bool = False):
        self.w = _zeros((cin, cout), dtype) if zero_init else _weight(rng, (cin, cout), dtype)
        self.b = _zeros((cout,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y if self.b is None else y + self.b


class Conv1x1(Module):
    """Pointwise conv; fan-in scaled init so activations keep their scale."""

    def __init__(self, rng, cin: int, cout: int, dtype, bias: bool = True, zero_init: bool = False):
        std = math.sqrt(2.0 / cin)
        self.w = _zeros((cin, cout), dtype) if zero_init else _weight(rng, (cin, cout), dtype, std)
        self.b = _zeros((cout,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1x1(x, self.w, self.b)


class Conv3x3(Module):
    def __init__(self, rng, cin: int, cout: int, dtype, zero_init: bool = False):
        std = math.sqrt(2.0 / (9 * cin))
        self.w = _zeros((3, 3, cin, cout), dtype) if zero_init else _weight(rng, (3, 3, cin, cout), dtype, std)
        self.b = _zeros((cout,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3x3(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, c: int, dtype):
        self.gain = parameter(np.ones(c), dtype=dtype)
        self.bias = _zeros((c,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


def fourier_features(pos: Tensor, n_freqs: int) -> Tensor:
    """Per channel p emit sin(2pi 2^l p), cos(2pi 2^l p), l = 0..n_freqs-1.

    Output layout: [sin_0 | cos_0 | sin_1 | cos_1 | ...], each slot as
    wide as the input. Channel count is 2 * n_freqs * C.
    """
    if n_freqs < 1:
        raise ValueError(f"fourier_features: need n_freqs >= 1, got {n_freqs}")
    parts = []
    for level in range(n_freqs):
        phase = pos * (2.0 * math.pi * (1 << level))
        parts.append(tsin(phase))
        parts.append(tcos(phase))
    return concat(parts, axis=-1)


class SpatialGate(Module):
    """Position-gated residual: Conv(LN(F_I)) * ReLU(Conv(LN(F_P))) + F_I."""

    def __init__(self, rng, c: int, c_pos: int, dtype):
        self.ln_img = LayerNorm(c, dtype)
        self.conv_img = Conv1x1(rng, c, c, dtype)
        self.ln_pos = LayerNorm(c_pos, dtype)
        self.conv_pos = Conv1x1(rng, c_pos, c, dtype)

    def __call__(self, fi: Tensor, fp: Tensor) -> Tensor:
        if fi.shape[:2] != fp.shape[:2]:
            raise ShapeError("spatial_gate", fp.shape, f"spatial extents {fi.shape[:2]}")
        gate = relu(self.conv_pos(self.ln_pos(fp)))
        return self.conv_img(self.ln_img(fi)) * gate + fi


class ResidualProj(Module):
    """Ablation stand-in for SpatialGate: plain 1x1 conv on the image path."""

    def __init__(self, rng, c: int, dtype):
        self.ln = LayerNorm(c, dtype)
        self.conv = Conv1x1(rng, c, c, dtype)

    def __call__(self, fi: Tensor, fp: Tensor | None = None) -> Tensor:
        return self.conv(self.ln(fi)) + fi


# -- windows -----------------------------------------------------------------


def window_partition(x: Tensor, m: int, shift: int = 0) -> Tensor:
    """(H, W, C) -> (nW, M*M, C), cyclic shift by (-shift, -shift) first."""
    h, w, c = x.shape
    if h % m or w % m:
        raise ShapeError("window_partition", x.shape, f"extents divisible by M={m}")
    if shift not in (0, m // 2):
        raise ValueError(f"window_partition: shift must be 0 or {m // 2}, got {shift}")
    if shift:
        x = roll2d(x, -shift, -shift)
    x = reshape(x, (h // m, m, w // m, m, c))
    x = permute(x, (0, 2, 1, 3, 4))
    return reshape(x, ((h // m) * (w // m), m * m, c))


def window_merge(wins: Tensor, h: int, w: int, m: int, shift: int = 0) -> Tensor:
    """Inverse of window_partition."""
    nw, t, c = wins.shape
    if t != m * m or nw != (h // m) * (w // m):
        raise ShapeError("window_merge", wins.shape, f"({(h // m) * (w // m)}, {m * m}, C)")
    x = reshape(wins, (h // m, w // m, m, m, c))
    x = permute(x, (0, 2, 1, 3, 4))
    x = reshape(x, (h, w, c))
    return roll2d(x, shift, shift) if shift else x


def relative_index(m: int) -> np.ndarray:
    """Flat (M^2 * M^2,) index into the (2M-1)^2 relative-position table."""
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"), axis=-1).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :] + (m - 1)
    return (rel[..., 0] * (2 * m - 1) + rel[..., 1]).reshape(-1)


_MASK_CACHE: dict[tuple, np.ndarray] = {}


def seam_mask(h: int, w: int, m: int, shift: int) -> np.ndarray:
    """Additive logits (nW, M^2, M^2): -1e9 across the cyclic-shift seam."""
    key = (h, w, m, shift)
    hit = _MASK_CACHE.get(key)
    if hit is not None:
        return hit
    img = np.zeros((h, w), dtype=np.float64)
    region = 0
    spans = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    for ys in spans:
        for xs in spans:
            img[ys, xs] = region
            region += 1
    wins = img.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)
    diff = wins[:, :, None] - wins[:, None, :]
    mask = np.where(diff != 0, _NEG_INF, 0.0)
    _MASK_CACHE[key] = mask
    return mask


class WindowCrossAttention(Module):
    """Multi-head attention inside windows; queries from a second stream."""

    def __init__(self, rng, d: int, heads: int, m: int, dtype):
        if d % heads:
            raise ShapeError("window_attention", (d,), f"channels divisible by heads={heads}")
        self.heads = heads
        self.m = m
        self.pq = _weight(rng, (d, d), dtype)
        self.pk = _weight(rng, (d, d), dtype)
        self.pv = _weight(rng, (d, d), dtype)
        self.po = _weight(rng, (d, d), dtype)
        self.bo = _zeros((d,), dtype)
        # relative-position bias starts flat (unbiased attention)
        self.brel = _zeros(((2 * m - 1) ** 2, heads), dtype)
        self._rel_idx = relative_index(m)

    def __call__(self, xw: Tensor, yw: Tensor, mask: np.ndarray | None = None) -> Tensor:
        nw, t, d = xw.shape
        if yw.shape != xw.shape:
            raise ShapeError("window_attention", yw.shape, f"same window set as image {xw.shape}")
        hds = self.heads
        dh = d // hds

        def heads_of(z: Tensor) -> Tensor:
            return permute(reshape(z, (nw, t, hds, dh)), (0, 2, 1, 3))

        q = heads_of(yw @ self.pq)
        k = heads_of(xw @ self.pk)
        v = heads_of(xw @ self.pv)
        logits = (q @ permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        bias = reshape(take_rows(self.brel, self._rel_idx), (t, t, hds))
        logits = logits + reshape(permute(bias, (2, 0, 1)), (1, hds, t, t))
        if mask is not None:
            logits = logits + Tensor(mask[:, None].astype(xw.dtype))
        attn = ops.softmax(logits)
        out = permute(attn @ v, (0, 2, 1, 3))
        return reshape(out, (nw, t, d)) @ self.po + self.bo


class CrossAttentionBlock(Module):
    """Windowed cross attention + pre-norm MLP, both residual.

    With ``cross=False`` the queries come from the image stream itself
    and the position input is ignored (self-attention ablation).
    """

    def __init__(self, rng, d: int, heads: int, m: int, mlp_ratio: int, dtype, cross: bool = True):
        self.cross = cross
        self.m = m
        self.ln_img = LayerNorm(d, dtype)
        self.ln_pos = LayerNorm(d, dtype) if cross else None
        self.attn = WindowCrossAttention(rng, d, heads, m, dtype)
        self.ln_mlp = LayerNorm(d, dtype)
        self.fc1 = Linear(rng, d, mlp_ratio * d, dtype)
        self.fc2 = Linear(rng, mlp_ratio * d, d, dtype)

    def __call__(self, fi: Tensor, fp: Tensor | None, shift: int = 0) -> Tensor:
        h, w, _ = fi.shape
        xn = self.ln_img(fi)
        xw = window_partition(xn, self.m, shift)
        if self.cross:
            if fp is None:
                raise ShapeError("cross_attention", (0,), "position feature required when cross=True")
            yw = window_partition(self.ln_pos(fp), self.m, shift)
        else:
            yw = xw
        mask = seam_mask(h, w, self.m, shift) if shift else None
        aw = self.attn(xw, yw, mask)
        f = window_merge(aw, h, w, self.m, shift) + fi
        return self.fc2(gelu(self.fc1(self.ln_mlp(f)))) + f


# -- state-space scan ---------------------------------------------------------


class MultiDirScan(Module):
    """Four-direction selective scan over a feature map, outputs summed.

    Direction order: row-major L2R, row-major R2L, column-major T2B,
    column-major B2T.  Each direction owns its projections and state.
    """

    def __init__(self, rng, c: int, state: int, dtype, dt_rank: int | None = None):
        r = dt_rank if dt_rank is not None else max(1, c // 16)
        self.dt_rank = r
        self.state = state
        self.wx = _weight(rng, (4, c, r + 2 * state), dtype)
        self.wdt = _weight(rng, (4, r, c), dtype)
        # bias set so initial delta lands in [1e-3, 0.1] (softplus-inverse)
        dt0 = np.exp(rng.uniform(math.log(1e-3), math.log(0.1), size=(4, 1, c)))
        self.bdt = parameter(np.log(np.expm1(dt0)), dtype=dtype)
        self.alog = parameter(np.tile(np.log(np.arange(1, state + 1, dtype=np.float64)), (4, c, 1)), dtype=dtype)
        self.dskip = parameter(np.ones((4, c)), dtype=dtype)

    def __call__(self, f: Tensor) -> Tensor:
        h, w, c = f.shape
        L = h * w
        row = reshape(f, (1, L, c))
        col = reshape(permute(f, (1, 0, 2)), (1, L, c))
        seqs = concat([row, flip(row, axis=1), col, flip(col, axis=1)], axis=0)
        proj = seqs @ self.wx
        dtr, b, cmat = split(proj, [self.dt_rank, self.state, self.state], axis=-1)
        delta = softplus(dtr @ self.wdt + self.bdt) + _DELTA_FLOOR
        a = texp(self.alog) * -1.0
        y = ops.selective_scan(seqs, delta, b, cmat, a, self.dskip)
        y0, y1, y2, y3 = split(y, [1, 1, 1, 1], axis=0)
        out = reshape(y0, (h, w, c)) + reshape(flip(y1, axis=1), (h, w, c))
        out = out + permute(reshape(y2, (w, h, c)), (1, 0, 2))
        out = out + permute(reshape(flip(y3, axis=1), (w, h, c)), (1, 0, 2))
        return out


class ResidualScanBlock(Module):
    """Gated state-space unit with residual: out = VSSM(LN(F)) + F."""

    def __init__(self, rng, c: int, expand: int, state: int, dtype):
        inner = expand * c
        self.inner = inner
        self.ln = LayerNorm(c, dtype)
        self.in_proj = Conv1x1(rng, c, 2 * inner, dtype)
        self.dw = parameter(trunc_normal(rng, (3, 3, inner), std=math.sqrt(2.0 / 9)), dtype=dtype)
        self.dwb = _zeros((inner,), dtype)
        self.scan = MultiDirScan(rng, inner, state, dtype)
        self.ln_out = LayerNorm(inner, dtype)
        self.out_proj = Conv1x1(rng, inner, c, dtype)

    def __call__(self, f: Tensor) -> Tensor:
        z = self.in_proj(self.ln(f))
        gate, sig = split(z, [self.inner, self.inner], axis=-1)
        sig = silu(ops.dwconv3x3(sig, self.dw, self.dwb))
        sig = self.ln_out(self.scan(sig))
        return self.out_proj(sig * silu(gate)) + f


class ResidualConvBlock(Module):
    """out = Conv3x3(ReLU(Conv3x3(F))) + F."""

    def __init__(self, rng, c: int, dtype):
        self.conv1 = Conv3x3(rng, c, c, dtype)
        self.conv2 = Conv3x3(rng, c, c, dtype)

    def __call__(self, f: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(f))) + f


# -- split dual-branch blocks ---------------------------------------------------


class AttnScanBlock(Module):
    """Encoder block: split into an attention half and a scan half.

    X1, X2 = split(Conv1x1(F)); Y1 = attention(X1, pos); Y2 = scan(X2);
    out = Conv1x1(concat(Y1, Y2)) + F.  Toggles swap either branch for
    its ablation stand-in.
    """

    def __init__(self, rng, c: int, c_pos: int, heads: int, m: int, mlp_ratio: int,
                 expand: int, state: int, dtype, cross: bool = True, use_scan: bool = True):
        if c % 2:
            raise ShapeError("attn_scan_block", (c,), "even channel count")
        half = c // 2
        self.half = half
        self.cross = cross
        self.entry = Conv1x1(rng, c, c, dtype)
        self.pos_proj = Conv1x1(rng, c_pos, half, dtype) if cross else None
        self.attn = CrossAttentionBlock(rng, half, heads, m, mlp_ratio, dtype, cross=cross)
        self.scan = (ResidualScanBlock(rng, half, expand, state, dtype) if use_scan
                     else ResidualConvBlock(rng, half, dtype))
        self.exit = Conv1x1(rng, c, c, dtype)

    def __call__(self, fi: Tensor, fp: Tensor | None, shift: int = 0) -> Tensor:
        x1, x2 = split(self.entry(fi), [self.half, self.half], axis=-1)
        pos = self.pos_proj(fp) if self.cross else None
        y1 = self.attn(x1, pos, shift)
        y2 = self.scan(x2)
        return self.exit(concat([y1, y2], axis=-1)) + fi


class ConvScanBlock(Module):
    """Decoder block: AttnScanBlock topology with convolution instead of attention."""

    def __init__(self, rng, c: int, expand: int, state: int, dtype, use_scan: bool = True):
        if c % 2:
            raise ShapeError("conv_scan_block", (c,), "even channel count")
        half = c // 2
        self.half = half
        self.entry = Conv1x1(rng, c, c, dtype)
        self.conv = ResidualConvBlock(rng, half, dtype)
        self.scan = (ResidualScanBlock(rng, half, expand, state, dtype) if use_scan
                     else ResidualConvBlock(rng, half, dtype))
        self.exit = Conv1x1(rng, c, c, dtype)

    def __call__(self, fi: Tensor) -> Tensor:
        x1, x2 = split(self.entry(fi), [self.half, self.half], axis=-1)
        return self.exit(concat([self.conv(x1), self.scan(x2)], axis=-1)) + fi
