"""Reconstruction quality metrics and dataset evaluation reports.

PSNR is computed on [0, 1] RGB without luminance conversion, SSIM with
the standard 11x11 Gaussian window over the valid (fully covered)
region only.  ``eval_dataset`` synthesizes the degraded input for each
ground-truth image, runs the pipeline, and aggregates.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import netpbm
from .cfa import (
    CfaSpec,
    add_gaussian_noise,
    apply_event_mask,
    bilinear_demosaic,
    read_manifest,
    synth_clean_quad,
)
from .errors import DataError, ShapeError

PSNR_CAP_DB = 100.0
_WIN = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def psnr(pred: np.ndarray, target: np.ndarray, max_val: float = 1.0) -> float:
    """10 log10(max^2 / MSE) in dB, capped at 100 for identical inputs."""
    if pred.shape != target.shape:
        raise ShapeError("psnr", pred.shape, target.shape)
    diff = pred.astype(np.float64) - target.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_val * max_val / mse)


def _gauss_window() -> np.ndarray:
    r = np.arange(_WIN) - (_WIN - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * _SIGMA * _SIGMA))
    g /= g.sum()
    return g


_G1 = _gauss_window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian over the valid region: (H,W) -> (H-10, W-10)."""
    from numpy.lib.stride_tricks import sliding_window_view

    rows = sliding_window_view(img, _WIN, axis=1) @ _G1
    return (sliding_window_view(rows, _WIN, axis=0) @ _G1)


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean single-scale SSIM; channels averaged, dynamic range 1."""
    if pred.shape != target.shape:
        raise ShapeError("ssim", pred.shape, target.shape)
    if pred.shape[0] < _WIN or pred.shape[1] < _WIN:
        raise ShapeError("ssim", pred.shape, f"extents >= {_WIN}")
    x = pred.astype(np.float64)
    y = target.astype(np.float64)
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    vals = []
    for c in range(x.shape[2]):
        xc, yc = x[..., c], y[..., c]
        mx = _filter_valid(xc)
        my = _filter_valid(yc)
        vx = _filter_valid(xc * xc) - mx * mx
        vy = _filter_valid(yc * yc) - my * my
        cxy = _filter_valid(xc * yc) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(float(s.mean()))
    return float(np.mean(vals))


@dataclass
class EvalRow:
    name: str
    psnr: float | None
    ssim: float | None
    error: str | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow]
    mean_psnr: float
    mean_ssim: float
    config: dict

    def to_csv_text(self) -> str:
        lines = ["name,psnr,ssim,error"]
        for r in self.rows:
            p = "" if r.psnr is None else f"{r.psnr:.4f}"
            s = "" if r.ssim is None else f"{r.ssim:.6f}"
            lines.append(f"{r.name},{p},{s},{r.error or ''}")
        lines.append(f"mean,{self.mean_psnr:.4f},{self.mean_ssim:.6f},")
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        doc = {
            "mean_psnr": round(self.mean_psnr, 4),
            "mean_ssim": round(self.mean_ssim, 6),
            "rows": [
                {"name": r.name, "psnr": r.psnr, "ssim": r.ssim, "error": r.error}
                for r in self.rows
            ],
            "config": self.config,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _worker_count(requested: int) -> int:
    """Requested worker threads, capped by HYBRIDEVS_THREADS when set."""
    n = max(1, requested)
    env = os.environ.get("HYBRIDEVS_THREADS", "")
    if env.strip():
        n = min(n, max(1, int(env)))
    return n


_LUMA = np.array([0.299, 0.587, 0.114])


def _psnr_view(img: np.ndarray, luma: bool, crop: int) -> np.ndarray:
    """Apply the configured PSNR protocol (border crop, Y conversion)."""
    if crop:
        if 2 * crop >= min(img.shape[0], img.shape[1]):
            raise DataError(f"psnr_crop {crop} leaves no pixels for shape {img.shape[:2]}")
        img = img[crop:-crop, crop:-crop]
    if luma and img.ndim == 3:
        img = img.astype(np.float64) @ _LUMA
    return img


def eval_dataset(net, manifest_path: str, spec: CfaSpec, config: dict | None = None) -> EvalReport:
    """Synthesize, restore, and score every manifest image.

    ``net`` is a TwoStageModel, or None for the bilinear baseline.  Rows
    that fail to load or process get an error record; the means cover
    the successful rows.  Row order always follows the manifest.
    """
    config = dict(config or {})
    sigma = float(config.get("sigma", 0.0))
    seed = int(config.get("seed", 0))
    luma = bool(config.get("psnr_luma", False))
    crop = int(config.get("psnr_crop", 0))
    paths = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))

    def run_one(idx_path):
        idx, rel = idx_path
        name = os.path.basename(rel)
        try:
            path = rel if os.path.isabs(rel) else os.path.join(base, rel)
            rgb = netpbm.load_image(path)
            if rgb.ndim != 3:
                raise DataError(f"{name}: expected an RGB image, got shape {rgb.shape}")
            clean = synth_clean_quad(rgb, spec)
            degraded = add_gaussian_noise(
                apply_event_mask(clean, spec), sigma,
                int(np.random.default_rng([seed, idx]).integers(2 ** 31)), spec)
            if net is None:
                out = bilinear_demosaic(degraded, spec)
            else:
                from .model import demosaic_image

                out = demosaic_image(net, degraded)
            p = psnr(_psnr_view(out, luma, crop), _psnr_view(rgb, luma, crop))
            return EvalRow(name=name, psnr=p, ssim=ssim(out, rgb))
        except Exception as exc:  # per-row fault isolation
            return EvalRow(name=name, psnr=None, ssim=None, error=str(exc))

    jobs = list(enumerate(paths))
    workers = _worker_count(int(config.get("threads", 1)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, jobs))
    else:
        rows = [run_one(j) for j in jobs]

    ok = [r for r in rows if r.error is None]
    mean_p = float(np.mean([r.psnr for r in ok])) if ok else 0.0
    mean_s = float(np.mean([r.ssim for r in ok])) if ok else 0.0
    return EvalReport(rows=rows, mean_psnr=mean_p, mean_ssim=mean_s, config=config)
