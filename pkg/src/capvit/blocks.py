"""Pre-norm transformer blocks shared by the encoder, decoder, and text tower."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, gelu, layernorm, linear, mul, reshape, softmax, swapaxes

MASK_OFF = -1e30  # additive attention mask value for disallowed positions


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def param(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> Tensor:
    return Tensor(trunc_normal(rng, shape, std, dtype), requires_grad=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


@dataclass
class BlockWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}


def init_block(rng: np.random.Generator, d: int, mlp_ratio: int, dtype=np.float32) -> BlockWeights:
    hidden = mlp_ratio * d
    return BlockWeights(
        wq=param(rng, (d, d), dtype=dtype),
        wk=param(rng, (d, d), dtype=dtype),
        wv=param(rng, (d, d), dtype=dtype),
        wo=param(rng, (d, d), dtype=dtype),
        ln1_g=ones(d, dtype),
        ln1_b=zeros(d, dtype),
        w1=param(rng, (d, hidden), dtype=dtype),
        b1=zeros(hidden, dtype),
        w2=param(rng, (hidden, d), dtype=dtype),
        b2=zeros(d, dtype),
        ln2_g=ones(d, dtype),
        ln2_b=zeros(d, dtype),
    )


def attention(x: Tensor, blk: BlockWeights, heads: int, mask: Optional[np.ndarray]) -> Tensor:
    """Multi-head self-attention over [B, n, d]; `mask` is additive, 0 or MASK_OFF."""
    b, n, d = x.shape
    if d % heads:
        raise ShapeError(f"width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return swapaxes(reshape(t, (b, n, heads, dh)), 1, 2)  # [B, h, n, dh]

    q = split(linear(x, blk.wq))
    k = split(linear(x, blk.wk))
    v = split(linear(x, blk.wv))
    scores = mul(q @ swapaxes(k, -1, -2), 1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + mask.astype(scores.dtype)
    probs = softmax(scores, axis=-1)
    ctx = reshape(swapaxes(probs @ v, 1, 2), (b, n, d))
    return linear(ctx, blk.wo)


def block_forward(x: Tensor, blk: BlockWeights, heads: int, mask: Optional[np.ndarray] = None) -> Tensor:
    h = x + attention(layernorm(x, blk.ln1_g, blk.ln1_b), blk, heads, mask)
    m = linear(gelu(linear(layernorm(h, blk.ln2_g, blk.ln2_b), blk.w1, blk.b1)), blk.w2, blk.b2)
    return h + m
