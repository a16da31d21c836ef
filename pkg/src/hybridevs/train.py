"""Loss, schedule, optimizer, and the two-step training orchestration.

Three phases: pretrain the inpainting stage, pretrain the demosaicing
stage, then fine-tune jointly.  Each phase owns a fresh cosine schedule
and optimizer; parameter updates never leave the phase's declared
scope.  Every random decision derives from (seed, phase, iteration,
sample) so an interrupted run resumes bit-exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cfa import (
    CfaSpec,
    apply_event_mask,
    add_gaussian_noise,
    coarse_inpaint,
    make_position_maps,
    synth_clean_quad,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError
from .model import TwoStageModel
from .tensor import Tensor, tsqrt

PHASES = ("pretrain_q2q", "pretrain_q2r", "joint")
_PHASE_ID = {name: i for i, name in enumerate(PHASES)}
LOG_COLUMNS = "iter,phase,lr,loss_final,loss_q2q,wall_ms"


@dataclass(frozen=True)
class TrainConfig:
    patch: int = 128
    batch: int = 32
    iters: int = 1000
    lr_start: float = 2e-4
    lr_end: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    charb_eps: float = 1e-3
    clip_norm: float = 1.0
    sigma: float = 0.0
    loss_mode: str = "final_only"
    freeze: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.lr_end < self.lr_start):
            raise ConfigError(f"TrainConfig: need 0 < lr_end < lr_start, got {self.lr_end}, {self.lr_start}")
        if self.iters < 1:
            raise ConfigError(f"TrainConfig: iters must be >= 1, got {self.iters}")
        if self.patch % 4 or self.patch < 8:
            raise ConfigError(f"TrainConfig: patch must be a multiple of 4 and >= 8, got {self.patch}")
        if self.batch < 1:
            raise ConfigError(f"TrainConfig: batch must be >= 1, got {self.batch}")
        if self.loss_mode not in ("final_only", "dual"):
            raise ConfigError(f"TrainConfig: loss_mode must be final_only or dual, got {self.loss_mode!r}")
        if self.sigma < 0:
            raise ConfigError(f"TrainConfig: sigma must be >= 0, got {self.sigma}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["freeze"] = list(self.freeze)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"TrainConfig: unknown keys {sorted(unknown)}")
        kw = dict(d)
        if "freeze" in kw:
            kw["freeze"] = tuple(kw["freeze"])
        return cls(**kw)


def charbonnier(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """Mean of sqrt((pred - target)^2 + eps^2)."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise ShapeError("charbonnier", t.shape, pred.shape)
    diff = pred - Tensor(t.astype(pred.dtype))
    return tsqrt(diff * diff + eps * eps).mean()


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    """Annealed rate at iteration t of cfg.iters, endpoints included."""
    if not 0 <= t <= cfg.iters:
        raise ConfigError(f"cosine_lr: t={t} outside [0, {cfg.iters}]")
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * t / cfg.iters))


class Adam:
    """Bias-corrected Adam over a fixed named parameter list."""

    def __init__(self, params: list[tuple[str, Tensor]], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params}
        self.v = {n: np.zeros_like(p.data) for n, p in params}

    def step(self, lr: float) -> None:
        cfg = self.cfg
        if cfg.clip_norm > 0:
            sq = 0.0
            for _, p in self.params:
                g = p.grad
                sq += float(np.einsum("i,i->", g.ravel(), g.ravel(), dtype=np.float64))
            norm = math.sqrt(sq)
            scale = cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0
        else:
            scale = 1.0
        self.step_count += 1
        bc1 = 1.0 - cfg.beta1 ** self.step_count
        bc2 = 1.0 - cfg.beta2 ** self.step_count
        for n, p in self.params:
            g = p.grad if scale == 1.0 else p.grad * p.data.dtype.type(scale)
            m = self.m[n]
            v = self.v[n]
            m += (1.0 - cfg.beta1) * (g - m)
            v += (1.0 - cfg.beta2) * (g * g - v)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n, _ in self.params:
            out[f"opt.{n}.m"] = self.m[n]
            out[f"opt.{n}.v"] = self.v[n]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        from .errors import DataError

        for n, p in self.params:
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"opt.{n}.{slot}"
                if key not in arrays:
                    raise DataError(f"checkpoint missing array {key!r}")
                store[n][...] = np.asarray(arrays[key], dtype=p.data.dtype)
        self.step_count = step_count


class PatchSource:
    """Synthesizes training tuples from RGB images, seeded per sample."""

    def __init__(self, images: list[np.ndarray], spec: CfaSpec, cfg: TrainConfig):
        if not images:
            raise ConfigError("PatchSource: no training images")
        for im in images:
            if im.ndim != 3 or im.shape[2] != 3:
                raise ShapeError("PatchSource", im.shape, "(H, W, 3)")
            if min(im.shape[:2]) < cfg.patch:
                raise ConfigError(
                    f"PatchSource: image {im.shape[:2]} smaller than patch {cfg.patch}")
        self.images = images
        self.spec = spec
        self.cfg = cfg
        self._maps = make_position_maps(spec, cfg.patch, cfg.patch)

    def sample(self, phase: str, it: int, b: int) -> dict[str, np.ndarray]:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, _PHASE_ID[phase], it, b])
        img = self.images[int(rng.integers(len(self.images)))]
        h, w = img.shape[:2]
        y = int(rng.integers((h - cfg.patch) // 4 + 1)) * 4
        x = int(rng.integers((w - cfg.patch) // 4 + 1)) * 4
        rgb = np.ascontiguousarray(img[y:y + cfg.patch, x:x + cfg.patch])
        clean = synth_clean_quad(rgb, self.spec)
        noisy = add_gaussian_noise(
            apply_event_mask(clean, self.spec), cfg.sigma,
            int(rng.integers(2 ** 31)), self.spec)
        pq, pe = self._maps
        return {
            "rgb": rgb,
            "clean": clean,
            "inpainted": coarse_inpaint(noisy, self.spec),
            "pq": pq,
            "pe": pe,
        }


def _scope_prefixes(phase: str, cfg: TrainConfig) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(include, exclude) name-prefix filters for the phase's updates."""
    if phase == "pretrain_q2q":
        return ("q2q.",), ()
    if phase == "pretrain_q2r":
        return ("q2r.",), ()
    return ("",), tuple(cfg.freeze)


def _sample_loss(model: TwoStageModel, s: dict, phase: str, cfg: TrainConfig):
    dt = model.cfg.np_dtype
    pq = Tensor(s["pq"], dtype=dt)
    pe = Tensor(s["pe"], dtype=dt)
    clean = s["clean"][..., None]
    if phase == "pretrain_q2q":
        out = model.forward_q2q(Tensor(s["inpainted"][..., None], dtype=dt), pq, pe)
        return charbonnier(out, clean, cfg.charb_eps), None
    if phase == "pretrain_q2r":
        out = model.forward_q2r(Tensor(clean, dtype=dt), pq)
        return charbonnier(out, s["rgb"], cfg.charb_eps), None
    mid = model.forward_q2q(Tensor(s["inpainted"][..., None], dtype=dt), pq, pe)
    final = charbonnier(model.forward_q2r(mid, pq), s["rgb"], cfg.charb_eps)
    if cfg.loss_mode == "dual":
        return final, charbonnier(mid, clean, cfg.charb_eps)
    return final, None


def train_phase(
    model: TwoStageModel,
    images: list[np.ndarray],
    cfg: TrainConfig,
    phase: str,
    *,
    out_ckpt: str | None = None,
    log_path: str | None = None,
    resume: str | None = None,
    allow_scratch: bool = False,
    config_echo: dict | None = None,
    stop_iter: int | None = None,
) -> dict:
    """Run one phase; returns summary with final/tail losses and meta.

    ``resume`` restores parameters always, and optimizer state plus the
    iteration cursor when the checkpoint is mid-way through the same
    phase.  ``stop_iter`` ends the phase early (checkpoint still saved),
    which is how mid-phase checkpoints for resume tests are produced.
    """
    if phase not in PHASES:
        raise ConfigError(f"train_phase: unknown phase {phase!r}")
    trained: list[str] = []
    start_iter = 0
    resume_opt: dict | None = None
    if resume is not None:
        arrays, _, meta = load_checkpoint(resume)
        model.load_state_dict(arrays)
        trained = list(meta.get("trained_phases", []))
        if meta.get("phase") == phase and meta.get("iter", 0) < cfg.iters:
            start_iter = int(meta["iter"])
            resume_opt = {"arrays": arrays, "step": int(meta.get("opt_step", 0))}
    if phase == "joint" and not allow_scratch:
        missing = [p for p in ("pretrain_q2q", "pretrain_q2r") if p not in trained]
        if resume is None:
            raise ConfigError("joint phase requires a pretrained checkpoint (--resume)")
        if missing:
            raise ConfigError(f"joint phase requires pretrained stages, missing {missing}")

    include, exclude = _scope_prefixes(phase, cfg)
    params = [
        (n, p) for n, p in model.named_parameters()
        if any(n.startswith(i) for i in include) and not any(n.startswith(e) for e in exclude)
    ]
    if not params:
        raise ConfigError(f"train_phase: freeze list {cfg.freeze} leaves nothing to train")
    opt = Adam(params, cfg)
    if resume_opt is not None:
        opt.load_state_arrays(resume_opt["arrays"], resume_opt["step"])

    source = PatchSource(images, model.cfg.cfa, cfg)
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    if log is not None and log.tell() == 0:
        log.write(LOG_COLUMNS + "\n")

    end_iter = cfg.iters if stop_iter is None else min(stop_iter, cfg.iters)
    final_loss = math.nan
    tail: list[float] = []
    tail_n = max(1, (end_iter - start_iter) // 10)
    try:
        for it in range(start_iter, end_iter):
            t0 = time.perf_counter()
            lr = cosine_lr(it, cfg)
            finals = []
            extras = []
            for b in range(cfg.batch):
                lf, lq = _sample_loss(model, source.sample(phase, it, b), phase, cfg)
                finals.append(lf)
                if lq is not None:
                    extras.append(lq)
            total = _mean_of(finals)
            loss_q2q = None
            if extras:
                loss_q2q = _mean_of(extras)
                total = total + loss_q2q
            for _, p in model.named_parameters():
                p.zero_grad()
            total.backward()
            opt.step(lr)
            final_loss = float(_mean_of(finals).data)
            tail.append(final_loss)
            if len(tail) > tail_n:
                tail.pop(0)
            if log is not None:
                lq_txt = "" if loss_q2q is None else f"{float(loss_q2q.data):.9e}"
                wall = (time.perf_counter() - t0) * 1e3
                log.write(f"{it},{phase},{lr:.9e},{final_loss:.9e},{lq_txt},{wall:.3f}\n")
    finally:
        if log is not None:
            log.close()

    if phase not in trained:
        trained.append(phase)
    meta = {
        "phase": phase,
        "iter": end_iter,
        "total_iters": cfg.iters,
        "opt_step": opt.step_count,
        "trained_phases": trained,
        "seed": cfg.seed,
    }
    if out_ckpt is not None:
        arrays = dict(model.state_dict())
        arrays.update(opt.state_arrays())
        save_checkpoint(out_ckpt, arrays, config_echo or {}, meta)
    return {
        "final_loss": final_loss,
        "tail_loss": float(np.mean(tail)) if tail else math.nan,
        "meta": meta,
        "ckpt": out_ckpt,
    }


def _mean_of(losses: list[Tensor]) -> Tensor:
    acc = losses[0]
    for l in losses[1:]:
        acc = acc + l
    return acc * (1.0 / len(losses))


def pretrain_q2q(model, images, cfg: TrainConfig, **kw) -> dict:
    return train_phase(model, images, cfg, "pretrain_q2q", **kw)


def pretrain_q2r(model, images, cfg: TrainConfig, **kw) -> dict:
    return train_phase(model, images, cfg, "pretrain_q2r", **kw)


def joint_finetune(model, images, cfg: TrainConfig, **kw) -> dict:
    return train_phase(model, images, cfg, "joint", **kw)
