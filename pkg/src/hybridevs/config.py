"""Run configuration: one JSON document drives every command.

The schema below is the complete key set with its defaults; unknown
keys anywhere in the tree are rejected.  Model keys set to null take
their value from the size preset named by ``variant``.
"""

from __future__ import annotations

import copy
import json

from .cfa import CfaSpec, DEFAULT_EVENTS, DEFAULT_TILE
from .errors import ConfigError
from .model import ModelConfig, variant_config
from .train import TrainConfig

CONFIG_VERSION = 1

# null = "use the variant preset" for model overrides, "unset" elsewhere.
DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "cfa": {
        "tile": list(DEFAULT_TILE),
        "events": [list(e) for e in DEFAULT_EVENTS],
        "version": "quad-rggb/diag-events-v1",
    },
    "model": {
        "variant": "toy",
        "q2q_channels": None,
        "q2r_channels": None,
        "q2q_blocks": None,
        "q2r_blocks": None,
        "window": None,
        "heads": None,
        "mlp_ratio": None,
        "expand": None,
        "state": None,
        "freqs": None,
        "cross_attn": True,
        "spatial_gate": True,
        "state_scan": True,
        "fourier": True,
        "dtype": "float32",
    },
    "train": {
        "patch": 128,
        "batch": 32,
        "iters_q2q": 250,
        "iters_q2r": 250,
        "iters_joint": 500,
        "lr_start": 2e-4,
        "lr_end": 1e-7,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "charb_eps": 1e-3,
        "clip_norm": 1.0,
        "sigma": 0.0,
        "loss_mode": "final_only",
        "freeze": [],
    },
    "eval": {
        "sigma": 0.0,
        "threads": 1,
        "psnr_luma": False,
        "psnr_crop": 0,
    },
    "io": {
        "out_dir": "runs",
        "train_manifest": None,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in user.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"config: unknown key {here!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(val, dict):
                raise ConfigError(f"config: {here!r} must be an object")
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def merge_config(user: dict) -> dict:
    """Defaults overlaid with a user document; version is mandatory."""
    if "version" not in user:
        raise ConfigError("config: missing mandatory key 'version'")
    if user["version"] != CONFIG_VERSION:
        raise ConfigError(f"config: unsupported version {user['version']!r} (want {CONFIG_VERSION})")
    merged = _merge(DEFAULTS, user, "")
    CfaSpec.from_dict(merged["cfa"])  # validates early
    return merged


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config: {path} must hold a JSON object")
    return merge_config(doc)


def build_cfa(cfg: dict) -> CfaSpec:
    return CfaSpec.from_dict(cfg["cfa"])


def build_model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    overrides = {
        k: v for k, v in m.items()
        if k != "variant" and v is not None
    }
    for key in ("q2q_channels", "q2r_channels"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    overrides["cfa"] = build_cfa(cfg)
    return variant_config(m["variant"], **overrides)


def build_train_config(cfg: dict, phase: str) -> TrainConfig:
    t = cfg["train"]
    iters = {
        "pretrain_q2q": t["iters_q2q"],
        "pretrain_q2r": t["iters_q2r"],
        "joint": t["iters_joint"],
    }.get(phase)
    if iters is None:
        raise ConfigError(f"config: unknown training phase {phase!r}")
    return TrainConfig(
        patch=t["patch"],
        batch=t["batch"],
        iters=iters,
        lr_start=t["lr_start"],
        lr_end=t["lr_end"],
        beta1=t["beta1"],
        beta2=t["beta2"],
        adam_eps=t["adam_eps"],
        charb_eps=t["charb_eps"],
        clip_norm=t["clip_norm"],
        sigma=t["sigma"],
        loss_mode=t["loss_mode"],
        freeze=tuple(t["freeze"]),
        seed=cfg["seed"],
    )


def config_help_text() -> str:
    """The full schema with defaults, for --help (docs as contract)."""
    return "configuration keys and defaults:\n" + json.dumps(DEFAULTS, indent=2, sort_keys=True)
