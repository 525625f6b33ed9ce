"""Model bundles for the two training pipelines.

``v2_generative`` is encoder -> connector -> masked prefix -> decoder with
the caption loss alone. ``v1_contrastive`` adds the text tower and the
dual contrastive loss, and conditions its caption loss on the (unmasked)
visual tokens plus the web caption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .blocks import param
from .contrastive import (
    ContrastiveHead,
    TextEncoderConfig,
    TextEncoderWeights,
    dual_contrastive,
    image_embedding,
    init_head,
    init_text_encoder,
    text_encode,
    v1_caption_loss,
    v1_total_loss,
)
from .data.corpus import Batch
from .encoder import EncoderConfig, EncoderWeights, encode, init_encoder, interpolate_pos
from .errors import ConfigError
from .genhead import (
    Connector,
    DecoderConfig,
    DecoderWeights,
    generative_loss,
    greedy_decode,
    init_connector,
    init_decoder,
)
from .tensor import Tensor

V2_KIND = "v2_generative"
V1_KIND = "v1_contrastive"
KINDS = (V1_KIND, V2_KIND)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    decoder: DecoderConfig
    text: Optional[TextEncoderConfig] = None


def _np_dtype(dtype) -> np.dtype:
    return np.dtype(dtype)


class V2Pipeline:
    kind = V2_KIND

    def __init__(self, model: ModelConfig, seed: int = 0, dtype="float32"):
        self.model = model
        self.encoder_cfg = model.encoder
        self.dtype = _np_dtype(dtype)
        rng = np.random.default_rng(seed)
        self.encoder = init_encoder(model.encoder, rng, self.dtype)
        self.connector = init_connector(model.encoder.width, model.decoder.width, rng, self.dtype)
        self.decoder = init_decoder(model.decoder, rng, self.dtype)

    def named_params(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_params().items()}
        out.update(self.connector.named_params())
        out.update({f"decoder.{k}": v for k, v in self.decoder.named_params().items()})
        return out

    def visual_tokens(self, images) -> Tensor:
        return encode(images, self.encoder, self.encoder_cfg)

    def loss(self, batch: Batch, seed: int, step: int):
        tokens = self.visual_tokens(batch.images.astype(self.dtype))
        value, kept = generative_loss(
            tokens, batch.train, self.connector, self.decoder, self.model.decoder, seed, step
        )
        return value, {"tokens_kept": kept}

    def decode(self, image: np.ndarray, keep_ratio_eval: float = 1.0, seed: int = 0) -> list[int]:
        tokens = self.visual_tokens(image[None] if image.ndim == 3 else image)
        return greedy_decode(
            tokens, self.connector, self.decoder, self.model.decoder, keep_ratio_eval, seed
        )

    def set_resolution(self, image_size: int) -> None:
        """Switch stages: bilinearly resample the positional table."""
        new_cfg = self.encoder_cfg.at_resolution(image_size)
        table = interpolate_pos(self.encoder.pos.data, self.encoder_cfg.grid, new_cfg.grid)
        self.encoder.pos = Tensor(table, requires_grad=True)
        self.encoder_cfg = new_cfg

    def post_step(self) -> None:
        pass


class V1Pipeline(V2Pipeline):
    kind = V1_KIND

    def __init__(self, model: ModelConfig, seed: int = 0, dtype="float32", lambda_gen: float = 1.0):
        if model.text is None:
            raise ConfigError("the contrastive pipeline needs a text-encoder config")
        super().__init__(model, seed, dtype)
        rng = np.random.default_rng(seed + 1)
        self.text_cfg = model.text
        self.text = init_text_encoder(model.text, rng, self.dtype)
        self.head = init_head(model.encoder.width, model.text.embed_dim, rng, self.dtype)
        self.seg_web = param(rng, (model.decoder.width,), dtype=self.dtype)
        self.lambda_gen = float(lambda_gen)

    def named_params(self) -> dict[str, Tensor]:
        out = super().named_params()
        out.update({f"text.{k}": v for k, v in self.text.named_params().items()})
        out.update(self.head.named_params())
        out["seg_web"] = self.seg_web
        return out

    def loss(self, batch: Batch, seed: int, step: int):
        tokens = self.visual_tokens(batch.images.astype(self.dtype))
        tau = self.head.tau()
        img = image_embedding(tokens, self.head)
        web_emb = text_encode(batch.web, self.text, self.text_cfg)
        syn_emb = text_encode(batch.synthetic, self.text, self.text_cfg)
        dual = dual_contrastive(img, web_emb, syn_emb, tau)
        cap = v1_caption_loss(
            tokens,
            batch.web,
            batch.synthetic,
            self.connector,
            self.decoder,
            self.seg_web,
            self.model.decoder,
        )
        total = v1_total_loss(dual, cap, self.lambda_gen)
        return total, {
            "tokens_kept": tokens.shape[1],
            "dual": dual.item(),
            "caption": cap.item(),
        }

    def post_step(self) -> None:
        self.head.clamp()


def make_pipeline(model: ModelConfig, kind: str, seed: int = 0, dtype="float32", lambda_gen: float = 1.0):
    if kind == V2_KIND:
        return V2Pipeline(model, seed, dtype)
    if kind == V1_KIND:
        return V1Pipeline(model, seed, dtype, lambda_gen)
    raise ConfigError(f"unknown pipeline {kind!r}; valid: {', '.join(KINDS)}")
