"""Command-line entry point for the whole toolkit.

Subcommands: simulate, train, eval, infer, gradcheck, bench, ablate.
Every command is driven by one JSON config (see --help for the full
schema) and a seed, and writes byte-reproducible artifacts.  Exit
codes: 0 ok, 2 config error, 3 data error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import netpbm
from .cfa import (
    add_gaussian_noise,
    apply_event_mask,
    make_position_maps,
    synth_clean_quad,
    synthetic_rgb,
    write_manifest,
)
from .config import (
    build_cfa,
    build_model_config,
    build_train_config,
    config_help_text,
    load_config,
)
from .checkpoint import load_checkpoint
from .errors import ConfigError, DataError, VerificationError
from .metrics import eval_dataset, psnr
from .model import (
    ModelConfig,
    TwoStageModel,
    count_flops,
    count_params,
    demosaic_image,
)
from .ops import global_attention_madds
from .tensor import Tensor, no_grad
from .train import TrainConfig, train_phase
from .verify import gradcheck_suite

TOGGLE_CASES = {
    "full": {},
    "no_cross_attn": {"cross_attn": False},
    "no_spatial_gate": {"spatial_gate": False},
    "no_state_scan": {"state_scan": False},
    "no_fourier": {"fourier": False},
    "conv_only": {"cross_attn": False, "spatial_gate": False,
                  "state_scan": False, "fourier": False},
}

STRATEGY_CASES = {
    "scratch_joint": {"pretrain": False, "loss_mode": "final_only", "freeze": ()},
    "pretrain_joint": {"pretrain": True, "loss_mode": "final_only", "freeze": ()},
    "pretrain_dual": {"pretrain": True, "loss_mode": "dual", "freeze": ()},
    "frozen_inpaint": {"pretrain": True, "loss_mode": "final_only", "freeze": ("q2q.",)},
}


def _ensure_dir(path: str) -> None:
    if path:
        os.makedirs(path, exist_ok=True)


def _training_images(cfg: dict, patch: int) -> list[np.ndarray]:
    """Manifest images when configured, else procedural scenes."""
    manifest = cfg["io"]["train_manifest"]
    if manifest:
        from .cfa import read_manifest

        base = os.path.dirname(os.path.abspath(manifest))
        images = []
        for rel in read_manifest(manifest):
            path = rel if os.path.isabs(rel) else os.path.join(base, rel)
            img = netpbm.load_image(path)
            if img.ndim != 3:
                raise DataError(f"train image {path} is not RGB")
            images.append(img)
        if not images:
            raise DataError(f"train manifest {manifest} lists no images")
        return images
    side = max(64, patch)
    return [synthetic_rgb(side, side, seed=cfg["seed"] + i) for i in range(4)]


def _load_model_from_ckpt(ckpt_path: str) -> tuple[TwoStageModel, dict, dict]:
    arrays, echo, meta = load_checkpoint(ckpt_path)
    model_section = echo.get("model")
    if not model_section:
        raise DataError(f"checkpoint {ckpt_path} carries no model config echo")
    mcfg = ModelConfig.from_dict(model_section)
    model = TwoStageModel(mcfg, seed=int(echo.get("seed", 0)))
    model.load_state_dict(arrays)
    return model, echo, meta


def _echo(cfg: dict, mcfg: ModelConfig) -> dict:
    doc = json.loads(json.dumps(cfg))
    doc["model"] = mcfg.to_dict()
    return doc


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = build_cfa(cfg)
    sigma = cfg["eval"]["sigma"]
    names = sorted(n for n in os.listdir(args.indir) if n.lower().endswith(".ppm"))
    if not names:
        raise DataError(f"simulate: no .ppm images in {args.indir}")
    _ensure_dir(args.outdir)
    manifest_entries = []
    failures = []
    for idx, name in enumerate(names):
        src = os.path.join(args.indir, name)
        stem = os.path.splitext(name)[0]
        try:
            rgb = netpbm.load_image(src)
            if rgb.ndim != 3:
                raise DataError(f"{name}: expected RGB (P6)")
            h = rgb.shape[0] - rgb.shape[0] % 4
            w = rgb.shape[1] - rgb.shape[1] % 4
            if h < 4 or w < 4:
                raise DataError(f"{name}: too small after 4-alignment")
            rgb = rgb[:h, :w]
            clean = synth_clean_quad(rgb, spec)
            noise_seed = int(np.random.default_rng([cfg["seed"], idx]).integers(2 ** 31))
            degraded = add_gaussian_noise(apply_event_mask(clean, spec), sigma, noise_seed, spec)
            pq, pe = make_position_maps(spec, h, w)
            netpbm.save_image(clean, os.path.join(args.outdir, stem + ".clean.pgm"), bits=16)
            netpbm.save_image(degraded, os.path.join(args.outdir, stem + ".raw.pgm"), bits=16)
            netpbm.save_image(pq, os.path.join(args.outdir, stem + ".pq.ppm"), bits=16)
            netpbm.save_image(pe[..., 0], os.path.join(args.outdir, stem + ".pe.pgm"), bits=16)
            manifest_entries.append(os.path.relpath(src, args.outdir))
        except (DataError, OSError, ValueError) as exc:
            failures.append(f"{name}: {exc}")
            print(f"simulate: {name}: {exc}", file=sys.stderr)
    write_manifest(manifest_entries, os.path.join(args.outdir, "manifest.txt"))
    print(f"simulate: wrote {4 * len(manifest_entries)} artifacts for "
          f"{len(manifest_entries)} images to {args.outdir}")
    if failures:
        raise DataError(f"simulate: {len(failures)} of {len(names)} images failed")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    mcfg = build_model_config(cfg)
    tcfg = build_train_config(cfg, args.phase)
    model = TwoStageModel(mcfg, seed=cfg["seed"])
    images = _training_images(cfg, tcfg.patch)
    out_dir = cfg["io"]["out_dir"]
    _ensure_dir(out_dir)
    ckpt = os.path.join(out_dir, f"{args.phase}.ckpt")
    log = os.path.join(out_dir, f"{args.phase}.log.csv")
    result = train_phase(
        model, images, tcfg, args.phase,
        out_ckpt=ckpt, log_path=log, resume=args.resume,
        config_echo=_echo(cfg, mcfg), stop_iter=args.stop_iter)
    print(f"train: phase {args.phase} done at iter {result['meta']['iter']}, "
          f"final loss {result['final_loss']:.6e}, checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model, _, _ = _load_model_from_ckpt(args.ckpt)
    spec = model.cfg.cfa
    eval_cfg = {
        "sigma": cfg["eval"]["sigma"],
        "seed": cfg["seed"],
        "threads": cfg["eval"]["threads"],
        "psnr_luma": cfg["eval"]["psnr_luma"],
        "psnr_crop": cfg["eval"]["psnr_crop"],
    }
    report = eval_dataset(model, args.manifest, spec, eval_cfg)
    out_dir = cfg["io"]["out_dir"]
    _ensure_dir(out_dir)
    csv_path = os.path.join(out_dir, "eval.csv")
    json_path = os.path.join(out_dir, "eval.json")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv_text())
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json_text())
    print(f"eval: {len(report.rows)} images, mean psnr {report.mean_psnr:.4f} dB, "
          f"mean ssim {report.mean_ssim:.6f} -> {csv_path}")
    bad = [r for r in report.rows if r.error]
    if bad:
        raise DataError(f"eval: {len(bad)} of {len(report.rows)} rows failed")
    return 0


def cmd_infer(args) -> int:
    model, _, _ = _load_model_from_ckpt(args.ckpt)
    raw = netpbm.load_image(args.raw)
    if raw.ndim != 2:
        raise DataError(f"infer: {args.raw} is not a single-plane image")
    if raw.shape[0] % 4 or raw.shape[1] % 4:
        raise DataError(f"infer: raw extents {raw.shape} must be multiples of 4")
    if args.pq or args.pe:
        from .cfa import coarse_inpaint

        h, w = raw.shape
        dpq, dpe = make_position_maps(model.cfg.cfa, h, w)
        pq = netpbm.load_image(args.pq) if args.pq else dpq
        pe = netpbm.load_image(args.pe)[..., None] if args.pe else dpe
        dt = model.cfg.np_dtype
        filled = coarse_inpaint(raw, model.cfg.cfa)
        with no_grad():
            out = model.pipeline(Tensor(filled[..., None], dtype=dt),
                                 Tensor(pq, dtype=dt), Tensor(pe, dtype=dt))
        rgb = np.clip(out.data, 0.0, 1.0).astype(np.float32)
    else:
        rgb = demosaic_image(model, raw)
    netpbm.save_image(rgb, args.out, bits=16)
    print(f"infer: wrote {rgb.shape[1]}x{rgb.shape[0]} RGB to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    mcfg = build_model_config(cfg)
    t0 = time.time()
    reports = gradcheck_suite(seeds=tuple(args.seeds), cfg=mcfg,
                              full_model=not args.blocks_only)
    failed = 0
    for rep in reports:
        print(rep.line())
        failed += 0 if rep.passed else 1
    print(f"gradcheck: {len(reports) - failed}/{len(reports)} passed in {time.time() - t0:.1f}s")
    if failed:
        raise VerificationError(f"gradcheck: {failed} checks failed")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    mcfg = build_model_config(cfg)
    model = TwoStageModel(mcfg, seed=cfg["seed"])
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes:
        raise ConfigError("bench: --sizes is empty")
    d_ref = mcfg.q2r_channels[0]
    print("size,madds_q2q,madds_q2r,madds_total,ratio,attn_madds,attn_ratio")
    prev = prev_attn = None
    for s in sizes:
        rep = count_flops(model, s, s)
        attn = global_attention_madds(s, s, d_ref)
        ratio = "" if prev is None else f"{rep.total / prev:.3f}"
        aratio = "" if prev_attn is None else f"{attn / prev_attn:.3f}"
        print(f"{s},{rep.q2q},{rep.q2r},{rep.total},{ratio},{attn},{aratio}")
        prev, prev_attn = rep.total, attn
        t0 = time.time()
        demosaic_image(model, np.zeros((s, s), dtype=np.float32))
        print(f"bench: size {s} forward {time.time() - t0:.3f}s", file=sys.stderr)
    return 0


def _ablate_train_and_score(model: TwoStageModel, images, cfg: dict,
                            strategy: dict) -> tuple[float, float]:
    """Run the strategy's phases; returns (final joint loss, psnr)."""
    tcfg_q = build_train_config(cfg, "pretrain_q2q")
    tcfg_r = build_train_config(cfg, "pretrain_q2r")
    tcfg_j = build_train_config(cfg, "joint")
    tcfg_j = replace(tcfg_j, loss_mode=strategy["loss_mode"], freeze=tuple(strategy["freeze"]))
    if strategy["pretrain"]:
        train_phase(model, images, tcfg_q, "pretrain_q2q")
        train_phase(model, images, tcfg_r, "pretrain_q2r")
    res = train_phase(model, images, tcfg_j, "joint", allow_scratch=True)
    scene = images[0]
    degraded = apply_event_mask(synth_clean_quad(scene, model.cfg.cfa), model.cfg.cfa)
    return res["final_loss"], psnr(demosaic_image(model, degraded), scene)


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out_dir = cfg["io"]["out_dir"]
    _ensure_dir(out_dir)
    tcfg_probe = build_train_config(cfg, "joint")
    images = _training_images(cfg, tcfg_probe.patch)

    toggle_names = [t.strip() for t in args.toggles.split(",") if t.strip()]
    unknown = [t for t in toggle_names if t not in TOGGLE_CASES]
    if unknown:
        raise ConfigError(f"ablate: unknown toggle cases {unknown}; "
                          f"known: {sorted(TOGGLE_CASES)}")
    strategy_names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in strategy_names if s not in STRATEGY_CASES]
    if unknown:
        raise ConfigError(f"ablate: unknown strategy cases {unknown}; "
                          f"known: {sorted(STRATEGY_CASES)}")

    echo = json.loads(json.dumps(cfg))
    if toggle_names:
        rows = []
        for case in toggle_names:
            mcfg = replace(build_model_config(cfg), **TOGGLE_CASES[case])
            model = TwoStageModel(mcfg, seed=cfg["seed"])
            params = count_params(model)
            cost = count_flops(model, 64, 64)
            tcfg_j = build_train_config(cfg, "joint")
            train_phase(model, images, tcfg_j, "joint", allow_scratch=True)
            scene = images[0]
            degraded = apply_event_mask(synth_clean_quad(scene, mcfg.cfa), mcfg.cfa)
            score = psnr(demosaic_image(model, degraded), scene)
            rows.append({
                "case": case,
                "cross_attn": mcfg.cross_attn,
                "spatial_gate": mcfg.spatial_gate,
                "state_scan": mcfg.state_scan,
                "fourier": mcfg.fourier,
                "params_q2q": params.q2q,
                "params_q2r": params.q2r,
                "params_total": params.total,
                "madds": cost.total,
                "psnr": round(score, 4),
            })
            print(f"ablate: toggle case {case}: params {params.total}, psnr {score:.2f} dB")
        _write_report(os.path.join(out_dir, "ablate_toggles"), rows, echo)

    if strategy_names:
        rows = []
        for case in strategy_names:
            strat = STRATEGY_CASES[case]
            mcfg = build_model_config(cfg)
            model = TwoStageModel(mcfg, seed=cfg["seed"])
            loss, score = _ablate_train_and_score(model, images, cfg, strat)
            rows.append({
                "case": case,
                "pretrain": strat["pretrain"],
                "loss_mode": strat["loss_mode"],
                "freeze": ";".join(strat["freeze"]),
                "final_loss": float(loss),
                "psnr": round(score, 4),
            })
            print(f"ablate: strategy case {case}: final loss {loss:.6e}, psnr {score:.2f} dB")
        _write_report(os.path.join(out_dir, "ablate_strategies"), rows, echo)
    return 0


def _write_report(stem: str, rows: list[dict], echo: dict) -> None:
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r[c]) for c in cols))
    with open(stem + ".csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"rows": rows, "config": echo}, sort_keys=True, indent=2) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybridevs",
        description=__doc__,
        epilog=config_help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize degraded raw frames from RGB images")
    s.add_argument("--config", required=True)
    s.add_argument("--in", dest="indir", required=True, help="directory of .ppm RGB images")
    s.add_argument("--out", dest="outdir", required=True, help="output artifact directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="run one training phase")
    s.add_argument("--config", required=True)
    s.add_argument("--phase", required=True, choices=("pretrain_q2q", "pretrain_q2r", "joint"))
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.add_argument("--stop-iter", type=int, default=None,
                   help="end the phase early at this iteration (for split runs)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="demosaic one raw frame")
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--raw", required=True, help="input raw plane (PGM)")
    s.add_argument("--pq", default=None, help="color layout map (PPM); derived when omitted")
    s.add_argument("--pe", default=None, help="event map (PGM); derived when omitted")
    s.add_argument("--out", required=True, help="output RGB path (PPM)")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("gradcheck", help="finite-difference verification suite")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--blocks-only", action="store_true",
                   help="skip the (slow) full-model parameter sweep")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", help="FLOP and wall-time scaling across input sizes")
    s.add_argument("--config", required=True)
    s.add_argument("--sizes", default="64,128", help="comma-separated square sizes")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("ablate", help="module-toggle and training-strategy sweeps")
    s.add_argument("--config", required=True)
    s.add_argument("--toggles", default="full,no_cross_attn,no_spatial_gate,"
                                        "no_state_scan,no_fourier,conv_only",
                   help="comma-separated toggle cases (empty to skip)")
    s.add_argument("--strategies", default="",
                   help="comma-separated strategy cases (empty to skip)")
    s.set_defaults(func=cmd_ablate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
