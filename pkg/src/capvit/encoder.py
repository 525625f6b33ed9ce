"""Vanilla ViT image encoder producing a full sequence of visual tokens.

No CLS token, no pooling inside the encoder: the generative head consumes
all patch tokens and the contrastive baseline mean-pools them. Positional
embeddings are learned so they can be resampled bilinearly when the input
resolution changes between curriculum stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockWeights, block_forward, init_block, ones, param, zeros
from .errors import ConfigError, NumericError, ShapeError
from .tensor import Tensor, layernorm, linear
from . import tensor as T


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int
    patch_size: int
    width: int
    depth: int
    heads: int
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2 * 3

    def at_resolution(self, image_size: int) -> "EncoderConfig":
        return EncoderConfig(
            image_size, self.patch_size, self.width, self.depth, self.heads, self.mlp_ratio
        )


@dataclass
class EncoderWeights:
    patch_proj: Tensor  # [patch^2 * 3, d]
    pos: Tensor  # [N, d]
    blocks: list[BlockWeights] = field(default_factory=list)
    final_g: Tensor = None
    final_b: Tensor = None

    def named_params(self) -> dict[str, Tensor]:
        out = {"patch_proj": self.patch_proj, "pos": self.pos}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_params(f"block{i}"))
        out["final_ln.g"] = self.final_g
        out["final_ln.b"] = self.final_b
        return out


def init_encoder(config: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> EncoderWeights:
    return EncoderWeights(
        patch_proj=param(rng, (config.patch_dim, config.width), dtype=dtype),
        pos=param(rng, (config.num_tokens, config.width), dtype=dtype),
        blocks=[init_block(rng, config.width, config.mlp_ratio, dtype) for _ in range(config.depth)],
        final_g=ones(config.width, dtype),
        final_b=zeros(config.width, dtype),
    )


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """[H, W, 3] -> [N, patch^2*3]: row-major patches, row-major pixels, channel-fastest."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != image.shape[1] or image.shape[2] != 3:
        raise ShapeError(f"expected a square [H, H, 3] image, got {image.shape}")
    h = image.shape[0]
    if h % patch_size:
        raise ShapeError(f"image size {h} not divisible by patch size {patch_size}")
    g = h // patch_size
    tiles = image.reshape(g, patch_size, g, patch_size, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(g * g, patch_size * patch_size * 3)


def unpatchify(tokens: np.ndarray, patch_size: int) -> np.ndarray:
    """Inverse of patchify; exact reassembly."""
    n = tokens.shape[0]
    g = int(round(np.sqrt(n)))
    if g * g != n:
        raise ShapeError(f"token count {n} is not a square grid")
    tiles = tokens.reshape(g, g, patch_size, patch_size, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(g * patch_size, g * patch_size, 3)


def _patchify_batch(images: np.ndarray, patch_size: int) -> np.ndarray:
    b, h, w, c = images.shape
    g = h // patch_size
    tiles = images.reshape(b, g, patch_size, g, patch_size, c).transpose(0, 1, 3, 2, 4, 5)
    return tiles.reshape(b, g * g, patch_size * patch_size * c)


def encode(images, weights: EncoderWeights, config: EncoderConfig) -> Tensor:
    """Run the ViT: output is the layernormed token sequence [B, N, d]."""
    pixels = images.images if hasattr(images, "images") else np.asarray(images)
    if pixels.ndim == 3:
        pixels = pixels[None]
    b, h, w, _ = pixels.shape
    if h != config.image_size or w != config.image_size:
        raise ShapeError(f"images are {h}x{w}, config expects {config.image_size}")
    if weights.pos.shape[0] != config.num_tokens:
        raise ShapeError(
            f"positional table has {weights.pos.shape[0]} rows, config expects {config.num_tokens}"
        )
    patches = Tensor(_patchify_batch(pixels, config.patch_size).astype(weights.patch_proj.dtype))
    x = linear(patches, weights.patch_proj) + weights.pos
    for i, blk in enumerate(weights.blocks):
        x = block_forward(x, blk, config.heads)
        if np.isnan(x.data).any():
            raise NumericError(f"NaN in encoder layer {i}")
    return layernorm(x, weights.final_g, weights.final_b)


def mean_pool(tokens: Tensor) -> Tensor:
    """Average over the token axis: [B, N, d] -> [B, d]."""
    return T.mean_axis(tokens, axis=1)


def interpolate_pos(table: np.ndarray, grid_from: int, grid_to: int) -> np.ndarray:
    """Bilinearly resample a [N1, d] positional table between square grids.

    Align-corners semantics; identity grids return a bit-identical copy.
    The map is linear in the table values.
    """
    table = np.asarray(table)
    if table.ndim != 2 or table.shape[0] != grid_from * grid_from:
        raise ShapeError(
            f"table with {table.shape[0] if table.ndim == 2 else '?'} rows is not a "
            f"{grid_from}x{grid_from} grid"
        )
    if grid_to < 1:
        raise ShapeError(f"target grid must be positive, got {grid_to}")
    if grid_from == grid_to:
        return table.copy()
    d = table.shape[1]
    src = table.reshape(grid_from, grid_from, d).astype(np.float64)

    if grid_to == 1:
        coords = np.zeros(1)
    elif grid_from == 1:
        coords = np.zeros(grid_to)
    else:
        coords = np.arange(grid_to) * (grid_from - 1) / (grid_to - 1)
    i0 = np.floor(coords).astype(int)
    i1 = np.minimum(i0 + 1, grid_from - 1)
    frac = coords - i0

    rows = src[i0] * (1 - frac)[:, None, None] + src[i1] * frac[:, None, None]
    out = (
        rows[:, i0] * (1 - frac)[None, :, None] + rows[:, i1] * frac[None, :, None]
    )
    return out.reshape(grid_to * grid_to, d).astype(table.dtype)
