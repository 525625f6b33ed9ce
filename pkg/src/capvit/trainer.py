"""Optimization loop: stages, deterministic batching, metrics, checkpoints.

Training follows a low-to-high resolution curriculum: each stage has its
own step budget, batch size, and warmup+cosine learning-rate schedule.
When a stage raises the resolution, the positional table is bilinearly
resampled first. All randomness (batch order, token masks) is keyed by
(seed, global step, role), so runs are bit-reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, verify_shapes
from .contrastive import TextEncoderConfig
from .data.corpus import Corpus, CorpusSpec, build_batch
from .encoder import EncoderConfig
from .errors import ConfigError, NumericError
from .genhead import DecoderConfig
from .optim import AdamHyper, AdamState, adamw_step, clip_global_norm, lr_at
from .pipeline import KINDS, ModelConfig, make_pipeline
from .rng import SplitMix64, derive_seed

_BATCH_ROLE = 11
CHECKPOINT_DIR = "checkpoint"
METRICS_FILE = "metrics.csv"


@dataclass(frozen=True)
class StageConfig:
    resolution: int
    steps: int
    batch_size: int
    peak_lr: float
    warmup: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size <= 0 or self.resolution <= 0:
            raise ConfigError(f"invalid stage {self}")


@dataclass(frozen=True)
class TrainConfig:
    pipeline: str
    stages: tuple[StageConfig, ...]
    seed: int = 0
    hyper: AdamHyper = AdamHyper()
    grad_clip: float = 1.0
    lambda_gen: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.pipeline not in KINDS:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}; valid: {', '.join(KINDS)}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        res = [s.resolution for s in self.stages]
        if res != sorted(res):
            raise ConfigError(f"stage resolutions must be non-decreasing, got {res}")


@dataclass
class MetricsRow:
    step: int
    loss: float
    lr: float
    stage: int
    tokens_kept: int = 0


@dataclass
class TrainResult:
    pipeline: object
    state: AdamState
    rows: list[MetricsRow] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic example choice for one step; full-corpus when it fits."""
    if batch_size >= n:
        return np.arange(n, dtype=np.int64)
    rng = SplitMix64(derive_seed(seed, step, _BATCH_ROLE))
    return np.asarray(sorted(rng.sample_without_replacement(n, batch_size)), dtype=np.int64)


def run_stage(
    pipeline,
    corpus: Corpus,
    stage: StageConfig,
    train_cfg: TrainConfig,
    state: AdamState,
    global_step: int,
    stage_index: int,
) -> tuple[list[MetricsRow], int]:
    """Execute one stage; the corpus must already match the stage resolution."""
    if corpus.images.shape[1] != stage.resolution:
        raise ConfigError(
            f"corpus resolution {corpus.images.shape[1]} != stage resolution {stage.resolution}"
        )
    params = pipeline.named_params()
    max_len = pipeline.model.decoder.max_caption_len
    rows: list[MetricsRow] = []
    for s in range(stage.steps):
        lr = lr_at(s, stage.peak_lr, stage.warmup, stage.steps)
        idx = batch_indices(len(corpus), stage.batch_size, train_cfg.seed, global_step)
        batch = build_batch(corpus, idx, max_len, dtype=pipeline.dtype)
        for p in params.values():
            p.zero_grad()
        loss, aux = pipeline.loss(batch, train_cfg.seed, global_step)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"loss became non-finite at step {global_step}")
        loss.backward()
        clip_global_norm(params, train_cfg.grad_clip)
        adamw_step(params, state, lr, train_cfg.hyper)
        pipeline.post_step()
        rows.append(MetricsRow(global_step, value, lr, stage_index, aux.get("tokens_kept", 0)))
        global_step += 1
    return rows, global_step


def run_training(
    model: ModelConfig,
    train_cfg: TrainConfig,
    corpus_spec: CorpusSpec,
    out_dir=None,
    vocab=None,
) -> TrainResult:
    pipeline = make_pipeline(
        model, train_cfg.pipeline, train_cfg.seed, train_cfg.dtype, train_cfg.lambda_gen
    )
    state = AdamState()
    result = TrainResult(pipeline=pipeline, state=state)
    base = Corpus.from_spec(
        CorpusSpec(
            corpus_spec.seed_start,
            corpus_spec.seed_stop,
            corpus_spec.mode,
            corpus_spec.noise,
            train_cfg.stages[0].resolution,
        ),
        vocab,
    )
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        result.checkpoint_path = _save(pipeline, state, train_cfg, 0, out_path)

    global_step = 0
    corpus = base
    for stage_index, stage in enumerate(train_cfg.stages):
        if stage.resolution != pipeline.encoder_cfg.image_size:
            pipeline.set_resolution(stage.resolution)
            _drop_stale_moments(pipeline, state)
        if corpus.images.shape[1] != stage.resolution:
            corpus = base.at_resolution(stage.resolution)
        rows, global_step = run_stage(
            pipeline, corpus, stage, train_cfg, state, global_step, stage_index
        )
        result.rows.extend(rows)
        if out_path is not None:
            result.checkpoint_path = _save(pipeline, state, train_cfg, global_step, out_path)
    if out_path is not None:
        write_metrics(result.rows, out_path / METRICS_FILE)
    return result


def _drop_stale_moments(pipeline, state: AdamState) -> None:
    """Interpolated tables are new parameters; their Adam moments restart."""
    params = pipeline.named_params()
    for key in list(state.m):
        if key in params and state.m[key].shape != params[key].shape:
            del state.m[key]
            del state.v[key]


def _save(pipeline, state: AdamState, train_cfg: TrainConfig, step: int, out_dir: Path) -> Path:
    arrays: dict[str, np.ndarray] = {}
    for name, p in pipeline.named_params().items():
        arrays[name] = p.data
    for name, m in state.m.items():
        arrays[f"opt.m.{name}"] = m
    for name, v in state.v.items():
        arrays[f"opt.v.{name}"] = v
    configs = {
        "model": model_config_to_dict(pipeline.model, pipeline.encoder_cfg),
        "train": train_config_to_dict(train_cfg),
        "opt_step": state.step,
    }
    return save_checkpoint(arrays, configs, step, out_dir / CHECKPOINT_DIR)


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "stage"])
        for r in rows:
            writer.writerow([r.step, f"{r.loss:.8f}", f"{r.lr:.10g}", r.stage])


def model_config_to_dict(model: ModelConfig, current_encoder: EncoderConfig | None = None) -> dict:
    enc = current_encoder if current_encoder is not None else model.encoder
    out = {
        "encoder": dataclasses.asdict(enc),
        "decoder": dataclasses.asdict(model.decoder),
    }
    if model.text is not None:
        out["text"] = dataclasses.asdict(model.text)
    return out


def model_config_from_dict(d: dict) -> ModelConfig:
    text = TextEncoderConfig(**d["text"]) if d.get("text") else None
    return ModelConfig(
        encoder=EncoderConfig(**d["encoder"]),
        decoder=DecoderConfig(**d["decoder"]),
        text=text,
    )


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def train_config_from_dict(d: dict) -> TrainConfig:
    stages = tuple(StageConfig(**s) for s in d["stages"])
    hyper = AdamHyper(**d.get("hyper", {}))
    return TrainConfig(
        pipeline=d["pipeline"],
        stages=stages,
        seed=d.get("seed", 0),
        hyper=hyper,
        grad_clip=d.get("grad_clip", 1.0),
        lambda_gen=d.get("lambda_gen", 1.0),
        dtype=d.get("dtype", "float32"),
    )


def load_pipeline(path):
    """Rebuild a pipeline (and optimizer state) from a checkpoint directory.

    Every stored array's shape is verified against the configs in the
    manifest before any data is copied in.
    """
    arrays, configs, step = load_checkpoint(path)
    model = model_config_from_dict(configs["model"])
    train_cfg = train_config_from_dict(configs["train"])
    pipeline = make_pipeline(model, train_cfg.pipeline, train_cfg.seed, train_cfg.dtype,
                             train_cfg.lambda_gen)
    params = pipeline.named_params()
    verify_shapes(arrays, {name: p.shape for name, p in params.items()})
    for name, p in params.items():
        p.data = arrays[name].astype(pipeline.dtype)
    state = AdamState(step=configs.get("opt_step", 0))
    for name in params:
        m_key, v_key = f"opt.m.{name}", f"opt.v.{name}"
        if m_key in arrays:
            state.m[name] = arrays[m_key].astype(pipeline.dtype)
            state.v[name] = arrays[v_key].astype(pipeline.dtype)
    return pipeline, state, train_cfg, step
