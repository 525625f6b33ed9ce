"""Run configuration: a JSON file with a fixed key set, overridable by CLI flags.

Unknown keys are rejected. Every command writes the fully resolved
configuration next to its outputs as ``config.resolved.json`` so a run can
be reproduced from its artifacts alone.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .contrastive import TextEncoderConfig
from .data.corpus import CorpusSpec
from .data.vocab import Vocab
from .encoder import EncoderConfig
from .errors import ConfigError
from .genhead import DecoderConfig
from .optim import AdamHyper
from .pipeline import ModelConfig, V1_KIND, V2_KIND
from .trainer import StageConfig, TrainConfig

SCHEMA_VERSION = 1

DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "pipeline": "v2",
    "corpus": {
        "seeds": "0:64",
        "mode": "recap_v2",
        "noise": 0.0,
        "resolution": 32,
    },
    "model": {
        "patch_size": 4,
        "encoder": {"width": 64, "depth": 4, "heads": 4, "mlp_ratio": 4},
        "decoder": {"width": 64, "depth": 4, "heads": 4, "mlp_ratio": 4},
        "text": {"width": 64, "depth": 2, "heads": 4, "mlp_ratio": 4},
        "embed_dim": 64,
        "keep_ratio": 0.35,
        "max_caption_len": 0,
    },
    "train": {
        "stages": "32x500",
        "batch_size": 32,
        "peak_lr": 3e-3,
        "warmup": 60,
        "beta1": 0.9,
        "beta2": 0.95,
        "eps": 1e-8,
        "weight_decay": 0.1,
        "grad_clip": 1.0,
        "lambda_gen": 1.0,
        "dtype": "float32",
    },
}

PIPELINE_ALIASES = {"v1": V1_KIND, "v2": V2_KIND, V1_KIND: V1_KIND, V2_KIND: V2_KIND}


def _check_keys(given: dict, allowed: dict, path: str = "") -> None:
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in allowed:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(allowed[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            _check_keys(value, allowed[key], where)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """DEFAULTS <- config file <- CLI overrides, with unknown keys rejected."""
    resolved = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            given = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(given, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        version = given.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        _check_keys(given, DEFAULTS)
        resolved = _deep_merge(resolved, given)
    if overrides:
        _check_keys(overrides, DEFAULTS)
        resolved = _deep_merge(resolved, overrides)
    return resolved


def dump_resolved(resolved: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.resolved.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def parse_seed_range(text: str) -> tuple[int, int]:
    try:
        start, stop = text.split(":")
        return int(start), int(stop)
    except ValueError as exc:
        raise ConfigError(f"seed range must look like START:STOP, got {text!r}") from exc


def parse_stages(text: str, default_batch: int, default_lr: float, default_warmup: int):
    """Stage syntax: RESxSTEPS[xBATCH[xLR[xWARMUP]]], comma separated."""
    stages = []
    for part in text.split(","):
        fields = part.strip().split("x")
        if len(fields) < 2:
            raise ConfigError(f"stage {part!r} must look like RESxSTEPS")
        try:
            res, steps = int(fields[0]), int(fields[1])
            batch = int(fields[2]) if len(fields) > 2 else default_batch
            lr = float(fields[3]) if len(fields) > 3 else default_lr
            warmup = int(fields[4]) if len(fields) > 4 else min(default_warmup, steps // 2)
        except ValueError as exc:
            raise ConfigError(f"bad stage spec {part!r}") from exc
        stages.append(StageConfig(res, steps, batch, lr, warmup))
    if not stages:
        raise ConfigError("at least one stage is required")
    return tuple(stages)


def corpus_spec_from(resolved: dict, resolution: int | None = None) -> CorpusSpec:
    c = resolved["corpus"]
    start, stop = parse_seed_range(c["seeds"])
    return CorpusSpec(
        start, stop, c["mode"], float(c["noise"]), resolution or int(c["resolution"])
    )


def model_config_from(resolved: dict, first_resolution: int, vocab: Vocab, caption_len: int) -> ModelConfig:
    m = resolved["model"]
    enc = EncoderConfig(
        image_size=first_resolution,
        patch_size=int(m["patch_size"]),
        width=int(m["encoder"]["width"]),
        depth=int(m["encoder"]["depth"]),
        heads=int(m["encoder"]["heads"]),
        mlp_ratio=int(m["encoder"]["mlp_ratio"]),
    )
    max_len = int(m["max_caption_len"]) or caption_len
    dec = DecoderConfig(
        width=int(m["decoder"]["width"]),
        depth=int(m["decoder"]["depth"]),
        heads=int(m["decoder"]["heads"]),
        mlp_ratio=int(m["decoder"]["mlp_ratio"]),
        vocab_size=vocab.size,
        max_caption_len=max_len,
        keep_ratio=float(m["keep_ratio"]),
    )
    text = TextEncoderConfig(
        width=int(m["text"]["width"]),
        depth=int(m["text"]["depth"]),
        heads=int(m["text"]["heads"]),
        mlp_ratio=int(m["text"]["mlp_ratio"]),
        vocab_size=vocab.size,
        max_len=max_len,
        embed_dim=int(m["embed_dim"]),
    )
    return ModelConfig(encoder=enc, decoder=dec, text=text)


def train_config_from(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    kind = PIPELINE_ALIASES.get(resolved["pipeline"])
    if kind is None:
        raise ConfigError(
            f"unknown pipeline {resolved['pipeline']!r}; valid: v1, v2"
        )
    stages = parse_stages(
        t["stages"], int(t["batch_size"]), float(t["peak_lr"]), int(t["warmup"])
    )
    hyper = AdamHyper(
        beta1=float(t["beta1"]),
        beta2=float(t["beta2"]),
        eps=float(t["eps"]),
        weight_decay=float(t["weight_decay"]),
    )
    return TrainConfig(
        pipeline=kind,
        stages=stages,
        seed=int(resolved["seed"]),
        hyper=hyper,
        grad_clip=float(t["grad_clip"]),
        lambda_gen=float(t["lambda_gen"]),
        dtype=t["dtype"],
    )


def output_root() -> Path:
    return Path(os.environ.get("CAPVIT_OUT", "runs"))
