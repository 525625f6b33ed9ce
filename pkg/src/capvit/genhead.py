"""Generative head: keep-ratio masking, prefix-causal decoding, caption loss.

The decoder runs self-attention over [kept visual tokens ; caption tokens].
Visual positions attend bidirectionally among themselves and carry a single
learned segment embedding (their spatial identity is already baked into the
encoder output); caption position i attends to the whole visual prefix and
to caption positions <= i, predicting token i+1. Logits are produced only
at caption positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import MASK_OFF, BlockWeights, block_forward, init_block, ones, param, zeros
from .data.vocab import BOS_ID, EOS_ID, PAD_ID
from .errors import ConfigError
from .rng import SplitMix64, derive_seed, u64_stream, GAMMA, MASK64
from .tensor import (
    Tensor,
    concat,
    cross_entropy,
    embedding_lookup,
    layernorm,
    linear,
    reshape,
    slice_tokens,
    take_tokens,
)

IGNORE_ID = -1

# role tag for deriving per-example mask streams from (seed, step, example)
_MASK_ROLE = 7


@dataclass(frozen=True)
class DecoderConfig:
    width: int
    depth: int
    heads: int
    vocab_size: int
    max_caption_len: int
    keep_ratio: float = 0.35
    mlp_ratio: int = 4
    max_seq: int = 4096

    def __post_init__(self):
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")


@dataclass
class Connector:
    """Linear width adapter applied to every kept visual token."""

    w: Tensor
    b: Tensor

    def named_params(self) -> dict[str, Tensor]:
        return {"connector.w": self.w, "connector.b": self.b}


def init_connector(d_enc: int, d_dec: int, rng: np.random.Generator, dtype=np.float32) -> Connector:
    return Connector(w=param(rng, (d_enc, d_dec), dtype=dtype), b=zeros(d_dec, dtype))


@dataclass
class DecoderWeights:
    tok: Tensor  # [V, d]
    pos: Tensor  # [T, d]
    seg_visual: Tensor  # [d]
    blocks: list[BlockWeights] = field(default_factory=list)
    final_g: Tensor = None
    final_b: Tensor = None
    out_proj: Tensor = None  # [d, V]

    def named_params(self) -> dict[str, Tensor]:
        out = {"tok": self.tok, "pos": self.pos, "seg_visual": self.seg_visual}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_params(f"block{i}"))
        out["final_ln.g"] = self.final_g
        out["final_ln.b"] = self.final_b
        out["out_proj"] = self.out_proj
        return out


def init_decoder(config: DecoderConfig, rng: np.random.Generator, dtype=np.float32) -> DecoderWeights:
    return DecoderWeights(
        tok=param(rng, (config.vocab_size, config.width), dtype=dtype),
        pos=param(rng, (config.max_caption_len, config.width), dtype=dtype),
        seg_visual=param(rng, (config.width,), dtype=dtype),
        blocks=[init_block(rng, config.width, config.mlp_ratio, dtype) for _ in range(config.depth)],
        final_g=ones(config.width, dtype),
        final_b=zeros(config.width, dtype),
        out_proj=param(rng, (config.width, config.vocab_size), dtype=dtype),
    )


def keep_count(n: int, keep_ratio: float) -> int:
    """max(1, round(keep_ratio * n)) with round-half-up."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    if n < 1:
        raise ConfigError(f"token count must be >= 1, got {n}")
    return max(1, int(np.floor(keep_ratio * n + 0.5)))


def sample_mask(n: int, keep_ratio: float, rng: SplitMix64) -> np.ndarray:
    """Uniform sample without replacement of keep_count indices, ascending."""
    m = keep_count(n, keep_ratio)
    keys = u64_stream(rng.state, n)
    rng.state = (rng.state + n * GAMMA) & MASK64  # advance past the drawn words
    order = np.argsort(keys, kind="stable")
    kept = np.sort(order[:m])
    return kept.astype(np.int64)


def sample_batch_masks(
    batch: int, n: int, keep_ratio: float, seed: int, step: int
) -> np.ndarray:
    """[B, M] kept indices; stream per example keyed by (seed, step, example)."""
    return np.stack(
        [
            sample_mask(n, keep_ratio, SplitMix64(derive_seed(seed, step, i, _MASK_ROLE)))
            for i in range(batch)
        ]
    )


@dataclass(frozen=True)
class PrefixBatch:
    visual: Tensor  # [B, M, d_dec] kept tokens, connector + segment applied
    kept_indices: np.ndarray  # [B, M] ascending per row
    caption_ids: np.ndarray  # [B, T]
    loss_mask: np.ndarray  # [B, T] bool, True where position i predicts token i+1


def caption_loss_mask(ids: np.ndarray) -> np.ndarray:
    """Supervised positions: those whose next token is a real token (not PAD)."""
    mask = np.zeros_like(ids, dtype=bool)
    mask[:, :-1] = ids[:, 1:] != PAD_ID
    return mask


def build_prefix(
    visual_tokens: Tensor,
    kept_indices: np.ndarray,
    caption_ids: np.ndarray,
    connector: Connector,
    decoder: DecoderWeights,
) -> PrefixBatch:
    """Select kept tokens, adapt width, and attach the visual segment embedding."""
    kept = take_tokens(visual_tokens, kept_indices)
    vis = linear(kept, connector.w, connector.b) + decoder.seg_visual
    return PrefixBatch(
        visual=vis,
        kept_indices=kept_indices,
        caption_ids=np.asarray(caption_ids),
        loss_mask=caption_loss_mask(np.asarray(caption_ids)),
    )


def prefix_causal_mask(m: int, t: int, dtype=np.float64) -> np.ndarray:
    """[m+t, m+t] additive mask: bidirectional prefix, causal caption tail."""
    s = m + t
    allow = np.zeros((s, s), dtype=bool)
    allow[:m, :m] = True
    allow[m:, :m] = True
    allow[m:, m:] = np.tril(np.ones((t, t), dtype=bool))
    return np.where(allow, 0.0, MASK_OFF).astype(dtype)


def decode_forward(prefix: PrefixBatch, weights: DecoderWeights, config: DecoderConfig) -> Tensor:
    """Logits [B, T, V]; position i predicts caption token i+1."""
    b, m, d = prefix.visual.shape
    ids = prefix.caption_ids
    t = ids.shape[1]
    if m + t > config.max_seq:
        raise ConfigError(f"sequence {m}+{t} exceeds configured max {config.max_seq}")
    if t > config.max_caption_len:
        raise ConfigError(f"caption length {t} exceeds configured {config.max_caption_len}")
    if not (ids[:, 0] == BOS_ID).all():
        raise ConfigError("caption ids must begin with BOS")

    cap = embedding_lookup(weights.tok, ids) + slice_tokens_2d(weights.pos, t)
    x = concat([prefix.visual, cap], axis=1)
    mask = prefix_causal_mask(m, t, dtype=x.dtype)
    for blk in weights.blocks:
        x = block_forward(x, blk, config.heads, mask)
    hidden = layernorm(slice_tokens(x, m, m + t), weights.final_g, weights.final_b)
    return linear(hidden, weights.out_proj)


def slice_tokens_2d(table: Tensor, t: int) -> Tensor:
    """First t rows of a 2-D table (positional embeddings for a shorter caption)."""
    return reshape(slice_tokens(reshape(table, (1, *table.shape)), 0, t), (t, table.shape[1]))


def caption_loss(logits: Tensor, caption_ids: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Cross-entropy on supervised positions: targets are tokens 1..EOS, PAD ignored."""
    b, t, v = logits.shape
    ids = np.asarray(caption_ids)
    targets = np.full((b, t), IGNORE_ID, dtype=np.int64)
    targets[:, :-1] = ids[:, 1:]
    targets[~np.asarray(loss_mask)] = IGNORE_ID
    return cross_entropy(reshape(logits, (b * t, v)), targets.reshape(-1), ignore_id=IGNORE_ID)


def generative_loss(
    visual_tokens: Tensor,
    caption_ids: np.ndarray,
    connector: Connector,
    decoder: DecoderWeights,
    config: DecoderConfig,
    seed: int,
    step: int,
) -> tuple[Tensor, int]:
    """The caption-only training objective; returns (loss, kept token count)."""
    b, n, _ = visual_tokens.shape
    kept = sample_batch_masks(b, n, config.keep_ratio, seed, step)
    prefix = build_prefix(visual_tokens, kept, caption_ids, connector, decoder)
    logits = decode_forward(prefix, decoder, config)
    return caption_loss(logits, prefix.caption_ids, prefix.loss_mask), kept.shape[1]


def greedy_decode(
    visual_tokens: Tensor,
    connector: Connector,
    decoder: DecoderWeights,
    config: DecoderConfig,
    keep_ratio_eval: float = 1.0,
    seed: int = 0,
) -> list[int]:
    """Argmax decoding from BOS until EOS or the caption length limit.

    Ties break toward the lowest token id. All visual tokens are kept by
    default at evaluation time.
    """
    data = visual_tokens.data if isinstance(visual_tokens, Tensor) else np.asarray(visual_tokens)
    if data.ndim == 2:
        data = data[None]
    tokens = Tensor(data[:1])
    n = tokens.shape[1]
    if keep_ratio_eval >= 1.0:
        kept = np.arange(n, dtype=np.int64)[None, :]
    else:
        kept = sample_mask(n, keep_ratio_eval, SplitMix64(derive_seed(seed, _MASK_ROLE)))[None, :]

    seq = [BOS_ID]
    for _ in range(config.max_caption_len - 1):
        ids = np.asarray(seq, dtype=np.int64)[None, :]
        prefix = build_prefix(tokens, kept, ids, connector, decoder)
        logits = decode_forward(prefix, decoder, config)
        nxt = int(np.argmax(logits.data[0, -1]))
        seq.append(nxt)
        if nxt == EOS_ID:
            break
    return seq
