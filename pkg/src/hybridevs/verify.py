"""Finite-difference verification suite over blocks and the full model.

Every check builds its module in float64, scalarizes the output with a
fixed random weighting, and compares the tape gradient against central
differences.  The CLI's gradcheck command and the acceptance tests both
run exactly this suite.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .blocks import (
    AttnScanBlock,
    ConvScanBlock,
    CrossAttentionBlock,
    MultiDirScan,
    ResidualScanBlock,
    SpatialGate,
    WindowCrossAttention,
    fourier_features,
)
from .cfa import make_position_maps, synthetic_rgb, synth_clean_quad, apply_event_mask, coarse_inpaint
from .gradcheck import GradCheckReport, finite_diff_check
from .model import ModelConfig, TwoStageModel, variant_config
from .tensor import Tensor
from .train import charbonnier

_SAMPLE = 48  # probed elements per tensor; keeps the suite inside its budget


def _t(rng, shape, scale=1.0, shift=0.0) -> Tensor:
    return Tensor(rng.random(shape) * scale + shift, requires_grad=True, dtype=np.float64)


def _lossify(rng):
    """Scalarizer: fixed random weights, mean-scaled so f stays O(1)."""
    w = {}

    def loss(t: Tensor) -> Tensor:
        key = t.shape
        if key not in w:
            w[key] = Tensor(rng.standard_normal(t.shape) / np.sqrt(t.size), dtype=np.float64)
        return (t * w[key]).sum()

    return loss


def _check(f, probe, name, sample=_SAMPLE) -> GradCheckReport:
    return finite_diff_check(f, probe, name=name, sample=sample, seed=0)


def block_checks(seed: int) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    loss = _lossify(rng)
    out: list[GradCheckReport] = []

    pos = _t(rng, (8, 8, 3))
    out.append(_check(lambda p: loss(fourier_features(p, 2)), pos, f"fourier/pos[{seed}]"))

    gate = SpatialGate(rng, 4, 6, np.float64)
    fi, fp = _t(rng, (8, 8, 4)), _t(rng, (8, 8, 6))
    out.append(_check(lambda t: loss(gate(t, fp)), fi, f"gate/img[{seed}]"))
    out.append(_check(lambda t: loss(gate(fi, t)), fp, f"gate/pos[{seed}]"))

    wattn = WindowCrossAttention(rng, 4, 2, 2, np.float64)
    xw, yw = _t(rng, (4, 4, 4)), _t(rng, (4, 4, 4))
    out.append(_check(lambda t: loss(wattn(t, yw)), xw, f"wattn/keys[{seed}]"))
    out.append(_check(lambda t: loss(wattn(xw, t)), yw, f"wattn/queries[{seed}]"))

    xblk = CrossAttentionBlock(rng, 4, 2, 2, 2, np.float64)
    qfi, qfp = _t(rng, (6, 6, 4)), _t(rng, (6, 6, 4))
    out.append(_check(lambda t: loss(xblk(t, qfp, shift=1)), qfi, f"xattn/img[{seed}]"))
    out.append(_check(lambda t: loss(xblk(qfi, t, shift=1)), qfp, f"xattn/pos[{seed}]"))
    out.append(_check(lambda t: loss(xblk(qfi, qfp, shift=0)), xblk.attn.brel, f"xattn/brel[{seed}]"))

    L, C, N = 12, 3, 4
    sx = _t(rng, (L, C), 2.0, -1.0)
    sdelta = _t(rng, (L, C), 0.4, 0.05)
    sb, sc = _t(rng, (L, N), 2.0, -1.0), _t(rng, (L, N), 2.0, -1.0)
    sa = _t(rng, (C, N), 0.9, -1.0)
    sd = _t(rng, (C,), 2.0, -1.0)
    for probe, tag in ((sx, "x"), (sdelta, "delta"), (sb, "b"), (sc, "c"), (sa, "a"), (sd, "d")):
        out.append(_check(
            lambda t: loss(ops.sel_scan_1d(sx, sdelta, sb, sc, sa, sd)),
            probe, f"sel_scan_1d/{tag}[{seed}]"))

    mdscan = MultiDirScan(rng, 4, 4, np.float64)
    f2 = _t(rng, (6, 6, 4))
    out.append(_check(lambda t: loss(mdscan(t)), f2, f"mdscan/input[{seed}]"))
    out.append(_check(lambda t: loss(mdscan(f2)), mdscan.alog, f"mdscan/alog[{seed}]"))
    out.append(_check(lambda t: loss(mdscan(f2)), mdscan.wx, f"mdscan/wx[{seed}]"))

    scanblk = ResidualScanBlock(rng, 4, 2, 4, np.float64)
    f3 = _t(rng, (6, 6, 4))
    out.append(_check(lambda t: loss(scanblk(t)), f3, f"scanblock/input[{seed}]"))
    out.append(_check(lambda t: loss(scanblk(f3)), scanblk.scan.bdt, f"scanblock/bdt[{seed}]"))

    attnscan = AttnScanBlock(rng, 8, 6, 2, 2, 2, 2, 4, np.float64)
    f4, p4 = _t(rng, (6, 6, 8)), _t(rng, (6, 6, 6))
    out.append(_check(lambda t: loss(attnscan(t, p4, shift=1)), f4, f"attnscan/input[{seed}]"))
    out.append(_check(lambda t: loss(attnscan(f4, p4)), attnscan.pos_proj.w, f"attnscan/posproj[{seed}]"))

    convscan = ConvScanBlock(rng, 8, 2, 4, np.float64)
    f5 = _t(rng, (6, 6, 8))
    out.append(_check(lambda t: loss(convscan(t)), f5, f"convscan/input[{seed}]"))
    out.append(_check(lambda t: loss(convscan(f5)), convscan.conv.conv1.w, f"convscan/conv[{seed}]"))

    return out


def model_loss_check(seed: int, cfg: ModelConfig | None = None, size: int = 16) -> list[GradCheckReport]:
    """One sampled-element check per named parameter of the full model."""
    from dataclasses import replace

    base = cfg if cfg is not None else variant_config("toy")
    mcfg = replace(base, dtype="float64")
    model = TwoStageModel(mcfg, seed=seed)

    rgb = synthetic_rgb(size, size, seed=seed + 100)
    clean = synth_clean_quad(rgb, mcfg.cfa)
    degraded = coarse_inpaint(apply_event_mask(clean, mcfg.cfa), mcfg.cfa)
    pq, pe = make_position_maps(mcfg.cfa, size, size)
    raw = Tensor(degraded[..., None], dtype=np.float64)
    pq_t, pe_t = Tensor(pq, dtype=np.float64), Tensor(pe, dtype=np.float64)

    def loss_fn(_unused: Tensor) -> Tensor:
        return charbonnier(model.pipeline(raw, pq_t, pe_t), rgb)

    out = []
    worst = GradCheckReport(name=f"model/loss[{seed}]", max_rel_err=0.0, tol=1e-3)
    for name, p in model.named_parameters():
        rep = finite_diff_check(loss_fn, p, name=f"model/{name}[{seed}]",
                                sample=1, seed=seed)
        if rep.max_rel_err > worst.max_rel_err:
            worst = GradCheckReport(name=f"model/loss[{seed}] (worst: {name})",
                                    max_rel_err=rep.max_rel_err, tol=rep.tol)
        out.append(rep)
    return [worst] if all(r.passed for r in out) else [r for r in out if not r.passed]


def gradcheck_suite(seeds=(0, 1, 2), cfg: ModelConfig | None = None,
                    full_model: bool = True) -> list[GradCheckReport]:
    reports: list[GradCheckReport] = []
    for seed in seeds:
        reports.extend(block_checks(seed))
        if full_model:
            reports.extend(model_loss_check(seed, cfg))
    return reports
