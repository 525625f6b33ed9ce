"""Analytic FLOPs and activation-memory estimates for both pipelines.

Conventions (documented, deliberately coarse):

  * A multiply-accumulate counts as 2 FLOPs. Per transformer layer:
    qkv+output projections 8nd^2, attention score+apply 4n^2 d, and the
    MLP 4*mlp_ratio*nd^2. Layernorm/softmax/bias FLOPs are ignored
    (sub-1% at these scales).
  * Training FLOPs = 3x forward (backward ~ 2x forward).
  * Stored activations per layer and example: 14*n*d floats plus one
    h*n^2 attention map, 4 bytes each. Parameter and optimizer memory
    (AdamW: two extra moments) is replicated per device; activations
    scale with the per-device batch.
  * The token grid is resolution // patch (matches how off-grid
    resolutions like 384/14 are handled in practice).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from .errors import ConfigError
from .genhead import keep_count

ACT_FLOATS_PER_TOKEN = 14
ATTN_MAPS_PER_LAYER = 1
BYTES_PER_SCALAR = 4
OPT_STATES = 2  # AdamW first and second moments

V1 = "v1"
V2 = "v2"


@dataclass(frozen=True)
class TowerSpec:
    width: int
    depth: int
    heads: int = 16
    mlp_ratio: float = 4.0


@dataclass(frozen=True)
class PipelineSpec:
    pipeline: str  # "v1" or "v2"
    name: str
    resolution: int
    patch_size: int
    encoder: TowerSpec
    decoder: TowerSpec
    text: Optional[TowerSpec] = None
    vocab_size: int = 32000
    embed_dim: int = 768
    t_web: int = 80
    t_syn: int = 80
    keep_ratio: float = 0.35
    batch_size: int = 2048
    devices: int = 64

    def __post_init__(self):
        if self.pipeline not in (V1, V2):
            raise ConfigError(f"pipeline must be '{V1}' or '{V2}', got {self.pipeline!r}")
        if self.pipeline == V1 and self.text is None:
            raise ConfigError("v1 specs need a text tower")

    @property
    def n_tokens(self) -> int:
        return (self.resolution // self.patch_size) ** 2

    @property
    def kept_tokens(self) -> int:
        if self.pipeline == V1:
            return self.n_tokens  # the baseline never masks
        return keep_count(self.n_tokens, self.keep_ratio)


@dataclass(frozen=True)
class CostReport:
    spec: PipelineSpec
    components: dict  # forward FLOPs per image, by component
    params: int

    @property
    def forward_flops(self) -> float:
        return sum(self.components.values())

    @property
    def train_flops(self) -> float:
        return 3.0 * self.forward_flops

    def memory_bytes(self, batch_size: Optional[int] = None, devices: Optional[int] = None) -> float:
        return activation_memory(
            self.spec,
            self.spec.batch_size if batch_size is None else batch_size,
            self.spec.devices if devices is None else devices,
        )


def transformer_flops(n: int, d: int, depth: int, heads: int, mlp_ratio: float = 4.0) -> float:
    """Forward FLOPs of a transformer stack over n tokens (heads cancel out)."""
    if min(n, d, depth) < 0:
        raise ConfigError("dimensions must be non-negative")
    per_layer = 8 * n * d * d + 4 * n * n * d + 4 * mlp_ratio * n * d * d
    return depth * per_layer


def _tower_flops(n: int, tower: TowerSpec) -> float:
    return transformer_flops(n, tower.width, tower.depth, tower.heads, tower.mlp_ratio)


def pipeline_flops(spec: PipelineSpec) -> CostReport:
    """Per-image forward FLOPs, broken down by component."""
    n = spec.n_tokens
    m = spec.kept_tokens
    d_enc, d_dec = spec.encoder.width, spec.decoder.width
    patch_dim = spec.patch_size**2 * 3

    comps = {
        "patch_embed": 2.0 * n * patch_dim * d_enc,
        "encoder": _tower_flops(n, spec.encoder),
        "connector": 2.0 * m * d_enc * d_dec,
    }
    if spec.pipeline == V2:
        comps["decoder"] = _tower_flops(m + spec.t_syn, spec.decoder)
    else:
        comps["text_encoder"] = _tower_flops(spec.t_web, spec.text) + _tower_flops(
            spec.t_syn, spec.text
        )
        comps["decoder"] = _tower_flops(n + spec.t_web + spec.t_syn, spec.decoder)
        # projections into the shared space plus both B-way similarity rows
        comps["contrastive_head"] = (
            2.0 * d_enc * spec.embed_dim
            + 2 * 2.0 * spec.text.width * spec.embed_dim
            + 2 * 2 * 2.0 * spec.batch_size * spec.embed_dim
        )
    comps["lm_head"] = 2.0 * spec.t_syn * d_dec * spec.vocab_size
    return CostReport(spec=spec, components=comps, params=param_count(spec))


def _tower_params(tower: TowerSpec) -> int:
    # 4 d^2 attention projections plus the two MLP matrices
    return tower.depth * int((4 + 2 * tower.mlp_ratio) * tower.width * tower.width)


def param_count(spec: PipelineSpec) -> int:
    """Approximate parameter count: projection matrices plus embeddings."""
    n = spec.n_tokens
    d_enc, d_dec = spec.encoder.width, spec.decoder.width
    total = spec.patch_size**2 * 3 * d_enc + n * d_enc + _tower_params(spec.encoder)
    total += d_enc * d_dec  # connector
    total += (
        _tower_params(spec.decoder)
        + 2 * spec.vocab_size * d_dec  # token table + output head
        + spec.t_syn * d_dec
    )
    if spec.pipeline == V1:
        d_txt = spec.text.width
        total += (
            _tower_params(spec.text)
            + spec.vocab_size * d_txt
            + max(spec.t_web, spec.t_syn) * d_txt
            + d_txt * spec.embed_dim
            + d_enc * spec.embed_dim
        )
    return int(total)


def _tower_act_floats(n: int, tower: TowerSpec) -> float:
    per_layer = ACT_FLOATS_PER_TOKEN * n * tower.width + ATTN_MAPS_PER_LAYER * tower.heads * n * n
    return tower.depth * per_layer


def activation_memory(spec: PipelineSpec, batch_size: Optional[int] = None, devices: Optional[int] = None) -> float:
    """Per-device bytes: stored activations at this batch plus param+optimizer state."""
    batch = spec.batch_size if batch_size is None else batch_size
    devices = spec.devices if devices is None else devices
    if devices <= 0:
        raise ConfigError(f"device count must be positive, got {devices}")
    per_device = batch / devices

    n, m = spec.n_tokens, spec.kept_tokens
    floats = _tower_act_floats(n, spec.encoder)
    if spec.pipeline == V2:
        floats += _tower_act_floats(m + spec.t_syn, spec.decoder)
    else:
        floats += _tower_act_floats(n + spec.t_web + spec.t_syn, spec.decoder)
        floats += _tower_act_floats(spec.t_web, spec.text) + _tower_act_floats(
            spec.t_syn, spec.text
        )
    act = floats * BYTES_PER_SCALAR * per_device
    params = param_count(spec) * BYTES_PER_SCALAR * (1 + OPT_STATES)
    return act + params


# ---------------------------------------------------------------- presets

def load_presets() -> dict:
    text = resources.files("capvit").joinpath("presets.json").read_text(encoding="utf-8")
    return json.loads(text)["presets"]


def spec_from_preset(name: str, pipeline: str, **overrides) -> PipelineSpec:
    presets = load_presets()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(presets))}")
    p = dict(presets[name])
    towers = {
        "encoder": TowerSpec(**p.pop("encoder")),
        "decoder": TowerSpec(**p.pop("decoder")),
        "text": TowerSpec(**p.pop("text")) if "text" in p else None,
    }
    p.update(overrides)
    if pipeline == V2:
        towers["text"] = None
    return PipelineSpec(pipeline=pipeline, name=name, **towers, **p)


# ---------------------------------------------------------------- reports

_GIGA = 1e9


def report_rows(reports: list[CostReport]) -> list[dict]:
    """Flatten reports to table rows; ratios are relative to the first row."""
    rows = []
    base = reports[0] if reports else None
    for r in reports:
        mem = r.memory_bytes()
        row = {
            "name": r.spec.name,
            "pipeline": r.spec.pipeline,
            "resolution": r.spec.resolution,
            "batch_size": r.spec.batch_size,
            "forward_gflops_per_image": r.forward_flops / _GIGA,
            "train_gflops_per_image": r.train_flops / _GIGA,
            "memory_gb_per_device": mem / _GIGA,
            "flops_ratio_vs_first": r.forward_flops / base.forward_flops if base else 1.0,
            "memory_ratio_vs_first": mem / base.memory_bytes() if base else 1.0,
        }
        rows.append(row)
    return rows


def emit_csv(reports: list[CostReport]) -> str:
    buf = io.StringIO()
    fields = [
        "name",
        "pipeline",
        "resolution",
        "batch_size",
        "forward_gflops_per_image",
        "train_gflops_per_image",
        "memory_gb_per_device",
        "flops_ratio_vs_first",
        "memory_ratio_vs_first",
    ]
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for row in report_rows(reports):
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def emit_table(reports: list[CostReport]) -> str:
    """Aligned text table mirroring the CSV contents."""
    headers = [
        "name",
        "pipe",
        "res",
        "batch",
        "fwd GFLOPs/img",
        "train GFLOPs/img",
        "mem GB/dev",
        "flops ratio",
        "mem ratio",
    ]
    table = [headers]
    for row in report_rows(reports):
        table.append(
            [
                row["name"],
                row["pipeline"],
                str(row["resolution"]),
                str(row["batch_size"]),
                f"{row['forward_gflops_per_image']:.2f}",
                f"{row['train_gflops_per_image']:.2f}",
                f"{row['memory_gb_per_device']:.2f}",
                f"{row['flops_ratio_vs_first']:.3f}",
                f"{row['memory_ratio_vs_first']:.3f}",
            ]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for i, r in enumerate(table):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
