"""Two-stage restoration model: event-pixel inpainting, then demosaicing.

Stage one (q2q) maps a degraded raw plane back to a clean Quad Bayer
plane; stage two (q2r) maps that plane to RGB.  Both are three-level
U-Nets with a positional side branch.  The composed pipeline is exactly
``q2r(q2q(raw, pq, pe), pq)`` with no coupling beyond the handoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .blocks import (
    AttnScanBlock,
    Conv1x1,
    Conv3x3,
    LayerNorm,
    Module,
    ConvScanBlock,
    ResidualConvBlock,
    ResidualProj,
    SpatialGate,
    fourier_features,
)
from .cfa import CfaSpec, make_position_maps
from .errors import ConfigError, ShapeError
from .tensor import Tensor, concat, count_madds, crop2d, no_grad, pad2d

LEVELS = 3

# q2r channel ladder, blocks per level, heads, window per size name; the
# inpainting stage always runs at half width with two blocks per level,
# which keeps it the small stage by a wide margin.
_VARIANTS = {
    "toy": ((8, 16, 32), 2, 2, 4),
    "s": ((24, 48, 96), 2, 2, 8),
    "m": ((36, 72, 144), 3, 3, 8),
    "l": ((48, 96, 192), 4, 4, 8),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "toy"
    q2q_channels: tuple[int, int, int] = (4, 8, 16)
    q2r_channels: tuple[int, int, int] = (8, 16, 32)
    q2q_blocks: int = 2
    q2r_blocks: int = 2
    window: int = 4
    heads: int = 2
    mlp_ratio: int = 2
    expand: int = 2
    state: int = 8
    freqs: int = 4
    cross_attn: bool = True
    spatial_gate: bool = True
    state_scan: bool = True
    fourier: bool = True
    dtype: str = "float32"
    cfa: CfaSpec = field(default_factory=CfaSpec)

    def __post_init__(self) -> None:
        if self.variant not in _VARIANTS:
            raise ConfigError(f"ModelConfig: unknown variant {self.variant!r}")
        for c in self.q2q_channels + self.q2r_channels:
            if c < 2 or c % 2:
                raise ConfigError(f"ModelConfig: channel widths must be even and >= 2, got {c}")
        for c in self.q2r_channels:
            if (c // 2) % self.heads:
                raise ConfigError(
                    f"ModelConfig: attention width {c // 2} not divisible by heads={self.heads}")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"ModelConfig: window must be even and >= 2, got {self.window}")
        if self.q2q_blocks < 1 or self.q2r_blocks < 1:
            raise ConfigError("ModelConfig: need at least one block per level")
        if self.freqs < 1:
            raise ConfigError(f"ModelConfig: freqs must be >= 1, got {self.freqs}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"ModelConfig: dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def pad_multiple(self) -> int:
        # deepest level sits at 1/4 resolution and must tile into windows
        return 4 * self.window

    def pos_channels(self, n_maps: int) -> int:
        return 2 * self.freqs * n_maps if self.fourier else n_maps

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "variant", "q2q_blocks", "q2r_blocks", "window", "heads", "mlp_ratio",
            "expand", "state", "freqs", "cross_attn", "spatial_gate", "state_scan",
            "fourier", "dtype")}
        d["q2q_channels"] = list(self.q2q_channels)
        d["q2r_channels"] = list(self.q2r_channels)
        d["cfa"] = self.cfa.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"ModelConfig: unknown keys {sorted(unknown)}")
        kw = dict(d)
        for key in ("q2q_channels", "q2r_channels"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "cfa" in kw and not isinstance(kw["cfa"], CfaSpec):
            kw["cfa"] = CfaSpec.from_dict(kw["cfa"])
        return cls(**kw)


def variant_config(name: str, **overrides) -> ModelConfig:
    """Preset for one of the published size names; overrides win."""
    if name not in _VARIANTS:
        raise ConfigError(f"variant_config: unknown variant {name!r}")
    ch, blocks, heads, window = _VARIANTS[name]
    base = ModelConfig(
        variant=name,
        q2q_channels=tuple(c // 2 for c in ch),
        q2r_channels=ch,
        q2q_blocks=2,
        q2r_blocks=blocks,
        heads=heads,
        window=window,
    )
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class CostReport:
    """Per-stage cost split; ``kind`` is 'params' or 'madds'."""

    q2q: int
    q2r: int
    kind: str
    resolution: tuple[int, int] | None = None

    @property
    def total(self) -> int:
        return self.q2q + self.q2r

    @property
    def flops(self) -> int:
        if self.kind != "madds":
            raise ValueError("flops only defined for a madds report")
        return 2 * self.total


def _pos_pyramid(pos: Tensor, freqs: int, fourier: bool) -> list[Tensor]:
    """Position features per level; deeper levels by pixel unshuffle."""
    feat = fourier_features(pos, freqs) if fourier else pos
    pyr = [feat]
    for _ in range(LEVELS - 1):
        pyr.append(ops.pixel_unshuffle2(pyr[-1]))
    return pyr


class _Down(Module):
    def __init__(self, rng, cin: int, cout: int, dtype):
        self.proj = Conv1x1(rng, 4 * cin, cout, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(ops.pixel_unshuffle2(x))


class _Up(Module):
    def __init__(self, rng, cin: int, cout: int, dtype):
        self.proj = Conv1x1(rng, cin, 4 * cout, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.pixel_shuffle2(self.proj(x))


class InpaintNet(Module):
    """Stage one: conv U-Net over the raw plane, position-gated encoder.

    Input is the coarse-inpainted raw plus the event flag channel; the
    zero-initialized tail makes the untrained net the identity on its
    raw input.
    """

    def __init__(self, rng, cfg: ModelConfig):
        c = cfg.q2q_channels
        dt = cfg.np_dtype
        self.cfg = cfg
        cpos = cfg.pos_channels(4)  # color one-hot + event flag
        self.stem = Conv3x3(rng, 2, c[0], dt)
        self.enc = [
            [ResidualConvBlock(rng, c[i], dt) for _ in range(cfg.q2q_blocks)]
            for i in range(LEVELS)
        ]
        if cfg.spatial_gate:
            self.gate = [SpatialGate(rng, c[i], cpos * 4 ** i, dt) for i in range(LEVELS)]
        else:
            self.gate = [ResidualProj(rng, c[i], dt) for i in range(LEVELS)]
        self.down = [_Down(rng, c[i], c[i + 1], dt) for i in range(LEVELS - 1)]
        self.up = [_Up(rng, c[i + 1], c[i], dt) for i in range(LEVELS - 1)]
        self.fuse = [Conv1x1(rng, 2 * c[i], c[i], dt) for i in range(LEVELS - 1)]
        self.dec = [
            [ResidualConvBlock(rng, c[i], dt) for _ in range(cfg.q2q_blocks)]
            for i in range(LEVELS - 1)
        ]
        # final norm keeps the tail's input O(1): residual branches
        # accumulate magnitude through the net, and an unnormalized
        # zero-init tail would see huge gradients on the first steps
        self.norm = LayerNorm(c[0], dt)
        self.tail = Conv3x3(rng, c[0], 1, dt, zero_init=True)

    def __call__(self, raw: Tensor, pq: Tensor, pe: Tensor) -> Tensor:
        pos = _pos_pyramid(concat([pq, pe], axis=-1), self.cfg.freqs, self.cfg.fourier)
        x = self.stem(concat([raw, pe], axis=-1))
        skips = []
        for i in range(LEVELS):
            for blk in self.enc[i]:
                x = blk(x)
            x = self.gate[i](x, pos[i])
            if i < LEVELS - 1:
                skips.append(x)
                x = self.down[i](x)
        for i in range(LEVELS - 2, -1, -1):
            x = self.fuse[i](concat([self.up[i](x), skips[i]], axis=-1))
            for blk in self.dec[i]:
                x = blk(x)
        return self.tail(self.norm(x)) + raw


class DemosaicNet(Module):
    """Stage two: attention+scan encoder, conv+scan decoder, RGB head.

    The positional branch sees the color layout only; the raw input is
    broadcast to three channels as the residual base, so the untrained
    net emits the gray mosaic.
    """

    def __init__(self, rng, cfg: ModelConfig):
        c = cfg.q2r_channels
        dt = cfg.np_dtype
        self.cfg = cfg
        cpos = cfg.pos_channels(3)
        self.stem = Conv3x3(rng, 1, c[0], dt)
        self.enc = [
            [AttnScanBlock(rng, c[i], cpos * 4 ** i, cfg.heads, cfg.window, cfg.mlp_ratio,
                           cfg.expand, cfg.state, dt,
                           cross=cfg.cross_attn, use_scan=cfg.state_scan)
             for _ in range(cfg.q2r_blocks)]
            for i in range(LEVELS)
        ]
        self.down = [_Down(rng, c[i], c[i + 1], dt) for i in range(LEVELS - 1)]
        self.up = [_Up(rng, c[i + 1], c[i], dt) for i in range(LEVELS - 1)]
        self.fuse = [Conv1x1(rng, 2 * c[i], c[i], dt) for i in range(LEVELS - 1)]
        self.dec = [
            [ConvScanBlock(rng, c[i], cfg.expand, cfg.state, dt, use_scan=cfg.state_scan)
             for _ in range(cfg.q2r_blocks)]
            for i in range(LEVELS - 1)
        ]
        self.norm = LayerNorm(c[0], dt)  # same reasoning as stage one
        self.tail = Conv3x3(rng, c[0], 3, dt, zero_init=True)

    def __call__(self, raw: Tensor, pq: Tensor) -> Tensor:
        m = self.cfg.window
        pos = _pos_pyramid(pq, self.cfg.freqs, self.cfg.fourier)
        x = self.stem(raw)
        skips = []
        for i in range(LEVELS):
            for b, blk in enumerate(self.enc[i]):
                x = blk(x, pos[i], shift=0 if b % 2 == 0 else m // 2)
            if i < LEVELS - 1:
                skips.append(x)
                x = self.down[i](x)
        for i in range(LEVELS - 2, -1, -1):
            x = self.fuse[i](concat([self.up[i](x), skips[i]], axis=-1))
            for blk in self.dec[i]:
                x = blk(x)
        return self.tail(self.norm(x)) + concat([raw, raw, raw], axis=-1)


def _padded(x: Tensor, mult: int) -> tuple[Tensor, int, int]:
    h, w = x.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return x, h, w
    return pad2d(x, (0, ph, 0, pw), mode="reflect"), h, w


class TwoStageModel(Module):
    """The composed restoration pipeline with its configuration."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.q2q = InpaintNet(rng, cfg)
        self.q2r = DemosaicNet(rng, cfg)

    def forward_q2q(self, raw: Tensor, pq: Tensor, pe: Tensor) -> Tensor:
        self._check(raw, 1, "forward_q2q")
        mult = self.cfg.pad_multiple
        raw_p, h, w = _padded(raw, mult)
        pq_p, _, _ = _padded(pq, mult)
        pe_p, _, _ = _padded(pe, mult)
        out = self.q2q(raw_p, pq_p, pe_p)
        return out if out.shape[:2] == (h, w) else crop2d(out, 0, 0, h, w)

    def forward_q2r(self, raw: Tensor, pq: Tensor) -> Tensor:
        self._check(raw, 1, "forward_q2r")
        mult = self.cfg.pad_multiple
        raw_p, h, w = _padded(raw, mult)
        pq_p, _, _ = _padded(pq, mult)
        out = self.q2r(raw_p, pq_p)
        return out if out.shape[:2] == (h, w) else crop2d(out, 0, 0, h, w)

    def pipeline(self, raw: Tensor, pq: Tensor, pe: Tensor) -> Tensor:
        return self.forward_q2r(self.forward_q2q(raw, pq, pe), pq)

    def _check(self, raw: Tensor, c: int, op: str) -> None:
        if raw.ndim != 3 or raw.shape[2] != c:
            raise ShapeError(op, raw.shape, f"(H, W, {c})")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        from .errors import DataError

        for name, p in self.named_parameters():
            if name not in arrays:
                raise DataError(f"checkpoint missing array {name!r}")
            a = np.asarray(arrays[name], dtype=p.data.dtype)
            if a.shape != p.data.shape:
                raise ShapeError("load_state_dict", a.shape, f"{name}: {p.data.shape}")
            p.data[...] = a


def demosaic_image(model: TwoStageModel, raw: np.ndarray) -> np.ndarray:
    """Full pipeline on one degraded raw plane; float32 RGB in [0, 1].

    Applies the coarse event-pixel fill first (idempotent, so an
    already-filled plane is fine too).
    """
    if raw.ndim != 2:
        raise ShapeError("demosaic_image", raw.shape, "(H, W)")
    from .cfa import coarse_inpaint

    dt = model.cfg.np_dtype
    filled = coarse_inpaint(raw, model.cfg.cfa)
    pq, pe = make_position_maps(model.cfg.cfa, *raw.shape)
    with no_grad():
        out = model.pipeline(
            Tensor(filled[..., None], dtype=dt), Tensor(pq, dtype=dt), Tensor(pe, dtype=dt))
    return np.clip(out.data, 0.0, 1.0).astype(np.float32)


def count_params(model: TwoStageModel) -> CostReport:
    q2q = sum(p.size for n, p in model.named_parameters() if n.startswith("q2q."))
    q2r = sum(p.size for n, p in model.named_parameters() if n.startswith("q2r."))
    return CostReport(q2q=q2q, q2r=q2r, kind="params")


def count_flops(model: TwoStageModel, h: int, w: int) -> CostReport:
    """Multiply-adds of one full pipeline pass at (h, w), split per stage."""
    dt = model.cfg.np_dtype
    pq, pe = make_position_maps(model.cfg.cfa, h, w)
    raw = Tensor(np.zeros((h, w, 1)), dtype=dt)
    pq_t, pe_t = Tensor(pq, dtype=dt), Tensor(pe, dtype=dt)
    with no_grad():
        with count_madds() as tally:
            mid = model.forward_q2q(raw, pq_t, pe_t)
        q2q_madds = tally.madds
        with count_madds() as tally:
            model.forward_q2r(mid, pq_t)
        q2r_madds = tally.madds
    return CostReport(q2q=q2q_madds, q2r=q2r_madds, kind="madds", resolution=(h, w))
