"""Quad Bayer sensor simulation with event pixels.

The sensor layout is a 4x4 tile of 2x2 same-color quads; a subset of
positions per tile holds event pixels, which carry no intensity and are
simulated by zeroing.  Everything here is pure numpy on channels-last
float arrays: raw planes (H, W), RGB (H, W, 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

_COLORS = "RGB"

DEFAULT_TILE = ("RRGG", "RRGG", "GGBB", "GGBB")
DEFAULT_EVENTS = ((0, 2), (1, 3))


@dataclass(frozen=True)
class CfaSpec:
    """Tile layout plus event positions; the version tag names the default."""

    tile: tuple[str, str, str, str] = DEFAULT_TILE
    events: tuple[tuple[int, int], ...] = DEFAULT_EVENTS
    version: str = "quad-rggb/diag-events-v1"

    def __post_init__(self) -> None:
        if len(self.tile) != 4 or any(len(r) != 4 for r in self.tile):
            raise ConfigError(f"CfaSpec: tile must be 4x4, got {self.tile}")
        grid = np.array([[ch for ch in row] for row in self.tile])
        counts = {c: int((grid == c).sum()) for c in _COLORS}
        if counts != {"R": 4, "G": 8, "B": 4}:
            raise ConfigError(f"CfaSpec: need 4 R / 8 G / 4 B per tile, got {counts}")
        for qy in range(2):
            for qx in range(2):
                quad = grid[2 * qy:2 * qy + 2, 2 * qx:2 * qx + 2]
                if len(set(quad.ravel())) != 1:
                    raise ConfigError(f"CfaSpec: quad ({qy},{qx}) mixes colors: {quad.tolist()}")
        for y, x in self.events:
            if not (0 <= y < 4 and 0 <= x < 4):
                raise ConfigError(f"CfaSpec: event position ({y},{x}) outside tile")
        if len(set(self.events)) != len(self.events):
            raise ConfigError("CfaSpec: duplicate event positions")

    def color_index(self) -> np.ndarray:
        """4x4 int grid: 0=R, 1=G, 2=B."""
        return np.array([[_COLORS.index(ch) for ch in row] for row in self.tile], dtype=np.int64)

    def event_grid(self) -> np.ndarray:
        g = np.zeros((4, 4), dtype=bool)
        for y, x in self.events:
            g[y, x] = True
        return g

    def to_dict(self) -> dict:
        return {"tile": list(self.tile), "events": [list(e) for e in self.events], "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> "CfaSpec":
        kw = {}
        for key in ("tile", "events", "version"):
            if key in d:
                kw[key] = d[key]
        unknown = set(d) - {"tile", "events", "version"}
        if unknown:
            raise ConfigError(f"CfaSpec: unknown keys {sorted(unknown)}")
        if "tile" in kw:
            kw["tile"] = tuple(kw["tile"])
        if "events" in kw:
            kw["events"] = tuple(tuple(e) for e in kw["events"])
        return cls(**kw)


def _check_extents(shape, op: str) -> None:
    h, w = shape[:2]
    if h % 4 or w % 4:
        raise ShapeError(op, shape, "extents divisible by 4")


def color_plane(spec: CfaSpec, h: int, w: int) -> np.ndarray:
    """Per-pixel color index (H, W) from the tiled layout."""
    idx = spec.color_index()
    return np.tile(idx, (h // 4 + 1, w // 4 + 1))[:h, :w]


def event_plane(spec: CfaSpec, h: int, w: int) -> np.ndarray:
    """Boolean (H, W): True at event positions."""
    g = spec.event_grid()
    return np.tile(g, (h // 4 + 1, w // 4 + 1))[:h, :w]


def mosaic_quad_bayer(rgb: np.ndarray, spec: CfaSpec) -> np.ndarray:
    """Sample one color per pixel from RGB according to the tile."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError("mosaic_quad_bayer", rgb.shape, "(H, W, 3)")
    _check_extents(rgb.shape, "mosaic_quad_bayer")
    h, w = rgb.shape[:2]
    ci = color_plane(spec, h, w)
    return np.take_along_axis(rgb, ci[..., None], axis=2)[..., 0].astype(rgb.dtype)


def synth_clean_quad(rgb: np.ndarray, spec: CfaSpec) -> np.ndarray:
    """Clean (unmasked, noise-free) Quad Bayer plane from an RGB image."""
    if not np.isfinite(rgb).all() or rgb.min() < 0 or rgb.max() > 1:
        raise ValueError("synth_clean_quad: rgb values must be finite and in [0,1]")
    return mosaic_quad_bayer(rgb, spec)


def apply_event_mask(raw: np.ndarray, spec: CfaSpec) -> np.ndarray:
    """Zero the event positions."""
    if raw.ndim != 2:
        raise ShapeError("apply_event_mask", raw.shape, "(H, W)")
    _check_extents(raw.shape, "apply_event_mask")
    out = raw.copy()
    out[event_plane(spec, *raw.shape)] = 0.0
    return out


def add_gaussian_noise(raw: np.ndarray, sigma: float, seed: int, spec: CfaSpec | None = None) -> np.ndarray:
    """clamp(raw + N(0, sigma^2), 0, 1); event positions re-zeroed when a spec is given."""
    if sigma < 0:
        raise ValueError(f"add_gaussian_noise: sigma must be >= 0, got {sigma}")
    if sigma == 0:
        out = raw.copy()
    else:
        rng = np.random.default_rng(seed)
        out = np.clip(raw + rng.normal(0.0, sigma, size=raw.shape), 0.0, 1.0).astype(raw.dtype)
    if spec is not None:
        out[event_plane(spec, *raw.shape[:2])] = 0.0
    return out


def coarse_inpaint(raw: np.ndarray, spec: CfaSpec) -> np.ndarray:
    """Fill event pixels by averaging same-color neighbors.

    Mean of the non-event members of the pixel's own 2x2 quad; if the
    whole quad is event pixels, mean of the non-event members of the
    four nearest same-color quads; as a last resort the global mean of
    the color plane.  Non-event pixels pass through bitwise.
    """
    if raw.ndim != 2:
        raise ShapeError("coarse_inpaint", raw.shape, "(H, W)")
    _check_extents(raw.shape, "coarse_inpaint")
    h, w = raw.shape
    ev = event_plane(spec, h, w)
    if not ev.any():
        return raw.copy()
    keep = ~ev
    vals = np.where(keep, raw, 0.0)
    # per-quad sums/counts of non-event members
    qsum = vals.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    qcnt = keep.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    qmean = np.divide(qsum, qcnt, out=np.zeros_like(qsum), where=qcnt > 0)
    fill = np.repeat(np.repeat(qmean, 2, axis=0), 2, axis=1)
    out = np.where(ev, fill, raw)

    empty = np.argwhere(qcnt == 0)
    if empty.size:
        qcolor = color_plane(spec, h, w)[::2, ::2]  # color of each quad
        qh, qw = qcnt.shape
        for qy, qx in empty:
            dists = []
            for oy in range(-2, 3):
                for ox in range(-2, 3):
                    ny, nx = qy + oy, qx + ox
                    if (oy, ox) == (0, 0) or not (0 <= ny < qh and 0 <= nx < qw):
                        continue
                    if qcolor[ny, nx] != qcolor[qy, qx] or qcnt[ny, nx] == 0:
                        continue
                    dists.append((oy * oy + ox * ox, ny, nx))
            dists.sort()
            chosen = dists[:4]
            if chosen:
                v = sum(qsum[ny, nx] for _, ny, nx in chosen) / sum(qcnt[ny, nx] for _, ny, nx in chosen)
            else:
                same = (color_plane(spec, h, w) == qcolor[qy, qx]) & keep
                v = raw[same].mean() if same.any() else 0.0
            out[2 * qy:2 * qy + 2, 2 * qx:2 * qx + 2] = np.where(
                ev[2 * qy:2 * qy + 2, 2 * qx:2 * qx + 2], v, out[2 * qy:2 * qy + 2, 2 * qx:2 * qx + 2])
    return out.astype(raw.dtype)


def make_position_maps(spec: CfaSpec, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """(Pq one-hot color map (H, W, 3), Pe event map (H, W, 1)), float32."""
    if h % 4 or w % 4:
        raise ShapeError("make_position_maps", (h, w), "extents divisible by 4")
    ci = color_plane(spec, h, w)
    pq = np.eye(3, dtype=np.float32)[ci]
    pe = event_plane(spec, h, w).astype(np.float32)[..., None]
    return pq, pe


def extract_patches(arrays: tuple[np.ndarray, ...], size: int, count: int, seed: int) -> list[tuple[np.ndarray, ...]]:
    """Crop aligned patches from a tuple of same-extent arrays.

    Corners land on the 4-pixel lattice so each patch starts at a tile
    boundary; all arrays are cropped identically.
    """
    if size % 4:
        raise ShapeError("extract_patches", (size,), "size divisible by 4")
    h, w = arrays[0].shape[:2]
    for a in arrays:
        if a.shape[:2] != (h, w):
            raise ShapeError("extract_patches", a.shape, f"leading extents ({h},{w})")
    if size > min(h, w):
        raise ShapeError("extract_patches", (size,), f"size <= min extent {min(h, w)}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        y = int(rng.integers(0, (h - size) // 4 + 1)) * 4
        x = int(rng.integers(0, (w - size) // 4 + 1)) * 4
        out.append(tuple(a[y:y + size, x:x + size].copy() for a in arrays))
    return out


def bilinear_demosaic(raw: np.ndarray, spec: CfaSpec) -> np.ndarray:
    """Reference demosaicer: per-color normalized box interpolation.

    Event pixels are coarse-inpainted first.  Every pixel has a
    same-color sample within a 5x5 window in Quad Bayer, so one
    weighted-average pass fills the full plane.  Used as an eval
    baseline and a test stub; not a learned component.
    """
    filled = coarse_inpaint(raw, spec)
    h, w = filled.shape
    ci = color_plane(spec, h, w)
    out = np.zeros((h, w, 3), dtype=np.float32)
    pad = 2
    for c in range(3):
        mask = (ci == c).astype(np.float32)
        vals = filled * mask
        vp = np.pad(vals, pad)
        mp = np.pad(mask, pad)
        num = np.zeros_like(vals)
        den = np.zeros_like(vals)
        for dy in range(5):
            for dx in range(5):
                wgt = 1.0 / (1 + abs(dy - 2) + abs(dx - 2))
                num += wgt * vp[dy:dy + h, dx:dx + w]
                den += wgt * mp[dy:dy + h, dx:dx + w]
        out[..., c] = num / den
    return np.clip(out, 0.0, 1.0)


def synthetic_rgb(h: int, w: int, seed: int) -> np.ndarray:
    """Deterministic smooth test scene (H, W, 3) in [0.05, 0.95].

    A few random-phase oriented sinusoids per channel over a shared
    gradient; enough structure for demosaicing to matter, smooth enough
    to overfit quickly.
    """
    if h % 4 or w % 4:
        raise ShapeError("synthetic_rgb", (h, w), "extents divisible by 4")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    out = np.zeros((h, w, 3))
    for c in range(3):
        img = 0.3 * (yy + xx) / 2 + 0.2 * rng.random()
        for _ in range(3):
            fy, fx = rng.uniform(1.0, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img = img + rng.uniform(0.1, 0.3) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        lo, hi = img.min(), img.max()
        out[..., c] = 0.05 + 0.9 * (img - lo) / (hi - lo)
    return out.astype(np.float32)


def read_manifest(path: str) -> list[str]:
    """Manifest = one rgb path per line; blank lines and # comments skipped."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"manifest: cannot read {path}: {exc}") from exc
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def write_manifest(paths: list[str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in paths:
            fh.write(p + "\n")
