"""The contrastive+caption baseline objective that the generative pipeline replaces.

A causal text encoder embeds both the web and the synthetic caption; the
image embedding (mean-pooled encoder tokens, projected) is contrasted
against each with a symmetric InfoNCE, and a caption loss asks the decoder
to predict the synthetic caption given the image plus the web caption as
conditioning context. No visual masking here: masking is a change the
generative pipeline introduces, and the cost gap reflects that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import MASK_OFF, BlockWeights, block_forward, init_block, ones, param, zeros
from .data.vocab import PAD_ID, BOS_ID, EOS_ID
from .errors import ConfigError, DegenerateBatchError
from .genhead import (
    Connector,
    DecoderConfig,
    DecoderWeights,
    caption_loss,
    caption_loss_mask,
    slice_tokens_2d,
)
from .tensor import (
    Tensor,
    concat,
    cross_entropy,
    embedding_lookup,
    l2_normalize,
    layernorm,
    linear,
    mean_axis,
    mul,
    reshape,
    slice_tokens,
    swap_last2,
    take_tokens,
    texp,
    trecip,
)


@dataclass(frozen=True)
class TextEncoderConfig:
    width: int
    depth: int
    heads: int
    vocab_size: int
    max_len: int
    embed_dim: int
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")


@dataclass
class TextEncoderWeights:
    tok: Tensor
    pos: Tensor
    blocks: list[BlockWeights] = field(default_factory=list)
    final_g: Tensor = None
    final_b: Tensor = None
    proj: Tensor = None  # [d_txt, d_emb]

    def named_params(self) -> dict[str, Tensor]:
        out = {"tok": self.tok, "pos": self.pos}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_params(f"block{i}"))
        out["final_ln.g"] = self.final_g
        out["final_ln.b"] = self.final_b
        out["proj"] = self.proj
        return out


def init_text_encoder(
    config: TextEncoderConfig, rng: np.random.Generator, dtype=np.float32
) -> TextEncoderWeights:
    return TextEncoderWeights(
        tok=param(rng, (config.vocab_size, config.width), dtype=dtype),
        pos=param(rng, (config.max_len, config.width), dtype=dtype),
        blocks=[init_block(rng, config.width, config.mlp_ratio, dtype) for _ in range(config.depth)],
        final_g=ones(config.width, dtype),
        final_b=zeros(config.width, dtype),
        proj=param(rng, (config.width, config.embed_dim), dtype=dtype),
    )


@dataclass
class ContrastiveHead:
    """Image projection plus the learnable temperature (stored as a log value)."""

    img_proj: Tensor  # [d_enc, d_emb]
    log_inv_tau: Tensor  # scalar, init ln(1/0.07)

    TAU_MIN = 0.01
    TAU_MAX = 100.0

    def named_params(self) -> dict[str, Tensor]:
        return {"head.img_proj": self.img_proj, "head.log_inv_tau": self.log_inv_tau}

    def tau(self) -> Tensor:
        """Temperature as a differentiable scalar: tau = exp(-log_inv_tau)."""
        return trecip(texp(self.log_inv_tau))

    def clamp(self) -> None:
        """Keep tau inside [0.01, 100]; applied after each optimizer step."""
        lo, hi = np.log(1.0 / self.TAU_MAX), np.log(1.0 / self.TAU_MIN)
        np.clip(self.log_inv_tau.data, lo, hi, out=self.log_inv_tau.data)


def init_head(d_enc: int, d_emb: int, rng: np.random.Generator, dtype=np.float32) -> ContrastiveHead:
    return ContrastiveHead(
        img_proj=param(rng, (d_enc, d_emb), dtype=dtype),
        log_inv_tau=Tensor(np.asarray(np.log(1.0 / 0.07), dtype=dtype), requires_grad=True),
    )


def text_encode(ids: np.ndarray, weights: TextEncoderWeights, config: TextEncoderConfig) -> Tensor:
    """Causal transformer over caption ids, pooled at the last non-PAD token."""
    ids = np.asarray(ids)
    b, t = ids.shape
    x = embedding_lookup(weights.tok, ids) + slice_tokens_2d(weights.pos, t)
    causal = np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, MASK_OFF).astype(x.dtype)
    for blk in weights.blocks:
        x = block_forward(x, blk, config.heads, causal)
    x = layernorm(x, weights.final_g, weights.final_b)
    nonpad = ids != PAD_ID
    last = t - 1 - np.argmax(nonpad[:, ::-1], axis=1)
    pooled = take_tokens(x, last[:, None])  # [B, 1, d]
    return linear(reshape(pooled, (b, config.width)), weights.proj)


def info_nce(img_emb: Tensor, txt_emb: Tensor, tau) -> Tensor:
    """Symmetric cross-entropy over the similarity matrix divided by tau.

    Embeddings are L2-normalized internally; tau may be a float or a
    differentiable scalar Tensor.
    """
    b = img_emb.shape[0]
    if b == 0:
        raise DegenerateBatchError("info_nce over an empty batch")
    img = l2_normalize(img_emb)
    txt = l2_normalize(txt_emb)
    sim = img @ swap_last2(txt)
    scaled = mul(sim, trecip(tau)) if isinstance(tau, Tensor) else mul(sim, 1.0 / float(tau))
    labels = np.arange(b)
    return mul(
        cross_entropy(scaled, labels) + cross_entropy(swap_last2(scaled), labels), 0.5
    )


def dual_contrastive(img_emb: Tensor, web_txt_emb: Tensor, syn_txt_emb: Tensor, tau) -> Tensor:
    """Mean of InfoNCE against the web caption and the synthetic caption."""
    return mul(info_nce(img_emb, web_txt_emb, tau) + info_nce(img_emb, syn_txt_emb, tau), 0.5)


def _strip_content(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop BOS/EOS/PAD, left-align the content words, PAD-fill the rest.

    Returns (content matrix [B, W], pad mask [B, W]); W is the batch max
    content length and may be 0 for all-empty captions.
    """
    ids = np.asarray(ids)
    b, t = ids.shape
    keep = (ids != PAD_ID) & (ids != BOS_ID) & (ids != EOS_ID)
    lengths = keep.sum(axis=1)
    w = int(lengths.max()) if b else 0
    content = np.full((b, w), PAD_ID, dtype=ids.dtype)
    for i in range(b):
        content[i, : lengths[i]] = ids[i, keep[i]]
    return content, content == PAD_ID


def v1_caption_loss(
    visual_tokens: Tensor,
    web_ids: np.ndarray,
    synthetic_ids: np.ndarray,
    connector: Connector,
    decoder: DecoderWeights,
    seg_web: Tensor,
    config: DecoderConfig,
) -> Tensor:
    """Predict the synthetic caption given all visual tokens plus the web caption.

    Decoder prefix = [every visual token ; web caption content tokens]; the
    whole prefix is bidirectional, synthetic caption positions are causal.
    Supervision covers synthetic-caption positions only.
    """
    b, n, _ = visual_tokens.shape
    vis = linear(visual_tokens, connector.w, connector.b) + decoder.seg_visual
    web_content, web_pad = _strip_content(web_ids)
    w = web_content.shape[1]
    syn = np.asarray(synthetic_ids)
    t = syn.shape[1]
    if not (syn[:, 0] == BOS_ID).all():
        raise ConfigError("caption ids must begin with BOS")
    if n + w + t > config.max_seq:
        raise ConfigError(f"sequence {n}+{w}+{t} exceeds configured max {config.max_seq}")

    parts = [vis]
    if w:
        web_x = embedding_lookup(decoder.tok, web_content) + slice_tokens_2d(decoder.pos, w) + seg_web
        parts.append(web_x)
    cap = embedding_lookup(decoder.tok, syn) + slice_tokens_2d(decoder.pos, t)
    parts.append(cap)
    x = concat(parts, axis=1)

    p = n + w
    s = p + t
    allow = np.zeros((s, s), dtype=bool)
    allow[:p, :p] = True
    allow[p:, :p] = True
    allow[p:, p:] = np.tril(np.ones((t, t), dtype=bool))
    mask = np.where(allow, 0.0, MASK_OFF).astype(x.dtype)
    if w:
        # per-example bias: web PAD columns are not valid keys
        key_bias = np.zeros((b, 1, 1, s), dtype=x.dtype)
        key_bias[:, 0, 0, n:p][web_pad] = MASK_OFF
        mask = mask + key_bias

    for blk in decoder.blocks:
        x = block_forward(x, blk, config.heads, mask)
    hidden = layernorm(slice_tokens(x, p, s), decoder.final_g, decoder.final_b)
    logits = linear(hidden, decoder.out_proj)
    return caption_loss(logits, syn, caption_loss_mask(syn))


def v1_total_loss(dual: Tensor, cap: Tensor, lambda_gen: float = 1.0) -> Tensor:
    """dual_contrastive + lambda_gen * caption loss."""
    if lambda_gen < 0:
        raise ConfigError(f"lambda_gen must be >= 0, got {lambda_gen}")
    return dual + mul(cap, float(lambda_gen))


def image_embedding(visual_tokens: Tensor, head: ContrastiveHead) -> Tensor:
    """Mean-pool encoder tokens and project into the shared embedding space."""
    return linear(mean_axis(visual_tokens, axis=1), head.img_proj)
