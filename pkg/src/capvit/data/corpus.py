"""Corpus materialization, shard files, and batch assembly.

Shard format (little-endian): one header line ``CAPVIT-CORPUS v1`` then
records of

    u32 H, u32 W, H*W*3 float32 pixels,
    u16 synthetic-caption token count, that many u16 ids,
    u16 web-caption token count, that many u16 ids.

Stored ids are content words only; BOS/EOS/PAD are added at batch time.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ConfigError
from .captions import MODES, caption, training_caption
from .scenes import generate_scene
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocab, tokenize

HEADER = b"CAPVIT-CORPUS v1\n"


@dataclass(frozen=True)
class CorpusSpec:
    seed_start: int
    seed_stop: int  # exclusive
    mode: str = "recap_v2"
    noise: float = 0.0
    resolution: int = 32

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown caption mode {self.mode!r}; valid modes: {', '.join(MODES)}")
        if self.seed_stop < self.seed_start:
            raise ConfigError(f"empty-or-negative seed range {self.seed_start}:{self.seed_stop}")

    @property
    def seeds(self) -> range:
        return range(self.seed_start, self.seed_stop)

    def __len__(self) -> int:
        return self.seed_stop - self.seed_start


def iter_pairs(spec: CorpusSpec):
    for seed in spec.seeds:
        yield caption(generate_scene(seed), spec.mode, spec.noise, seed)


def max_caption_len(spec: CorpusSpec) -> int:
    """Longest caption in the spec (content + BOS + EOS), without rendering."""
    longest = 0
    for pair in iter_pairs(spec):
        for text in (pair.synthetic, pair.web, training_caption(pair)):
            longest = max(longest, len(text.split()) + 2)
    return max(longest, 3)


@dataclass(frozen=True)
class Corpus:
    """Materialized dataset: rendered images plus tokenized caption ids."""

    spec: CorpusSpec
    vocab: Vocab
    images: np.ndarray  # [n, H, W, 3] float32
    synthetic_ids: tuple[np.ndarray, ...]  # content word ids, per record
    web_ids: tuple[np.ndarray, ...]
    train_ids: tuple[np.ndarray, ...]  # the mode's supervised caption

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_spec(cls, spec: CorpusSpec, vocab: Vocab | None = None) -> "Corpus":
        if vocab is None:
            vocab = Vocab.full_grammar()
        images, syn, web, train = [], [], [], []
        for seed in spec.seeds:
            scene = generate_scene(seed)
            pair = caption(scene, spec.mode, spec.noise, seed)
            images.append(scene.render(spec.resolution))
            syn.append(_content_ids(pair.synthetic, vocab))
            web.append(_content_ids(pair.web, vocab))
            train.append(_content_ids(training_caption(pair), vocab))
        stack = (
            np.stack(images)
            if images
            else np.zeros((0, spec.resolution, spec.resolution, 3), dtype=np.float32)
        )
        return cls(
            spec=spec,
            vocab=vocab,
            images=stack,
            synthetic_ids=tuple(syn),
            web_ids=tuple(web),
            train_ids=tuple(train),
        )

    def at_resolution(self, resolution: int) -> "Corpus":
        """Re-render the same scenes and captions at a new resolution."""
        new_spec = CorpusSpec(
            self.spec.seed_start, self.spec.seed_stop, self.spec.mode, self.spec.noise, resolution
        )
        return Corpus.from_spec(new_spec, self.vocab)

    def max_caption_len(self) -> int:
        """Longest tokenized caption (content + BOS + EOS) in the corpus."""
        longest = 0
        for ids in (*self.train_ids, *self.synthetic_ids):
            longest = max(longest, len(ids) + 2)
        return max(longest, 3)


def _content_ids(text: str, vocab: Vocab) -> np.ndarray:
    return np.asarray([vocab.id_of(w) for w in text.split()], dtype=np.uint16)


@dataclass(frozen=True)
class Batch:
    """Images plus padded token-id matrices; immutable once built."""

    images: np.ndarray  # [B, H, W, 3]
    synthetic: np.ndarray  # [B, T] int64, BOS ... EOS PAD*
    web: np.ndarray  # [B, T]
    train: np.ndarray  # [B, T] supervised caption for the generative loss
    synthetic_pad_mask: np.ndarray  # [B, T] bool, True on PAD
    web_pad_mask: np.ndarray

    def __post_init__(self):
        for arr in (
            self.images,
            self.synthetic,
            self.web,
            self.train,
            self.synthetic_pad_mask,
            self.web_pad_mask,
        ):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return self.images.shape[0]


def _pad_matrix(id_lists, vocab: Vocab, max_len: int) -> np.ndarray:
    rows = []
    for ids in id_lists:
        text_ids = [int(i) for i in ids][: max_len - 2]
        row = [BOS_ID, *text_ids, EOS_ID]
        row.extend([PAD_ID] * (max_len - len(row)))
        rows.append(row)
    return np.asarray(rows, dtype=np.int64)


def build_batch(corpus: Corpus, indices, max_len: int, dtype=np.float32) -> Batch:
    idx = np.asarray(indices, dtype=np.int64)
    syn = _pad_matrix([corpus.synthetic_ids[i] for i in idx], corpus.vocab, max_len)
    web = _pad_matrix([corpus.web_ids[i] for i in idx], corpus.vocab, max_len)
    train = _pad_matrix([corpus.train_ids[i] for i in idx], corpus.vocab, max_len)
    return Batch(
        images=corpus.images[idx].astype(dtype),
        synthetic=syn,
        web=web,
        train=train,
        synthetic_pad_mask=syn == PAD_ID,
        web_pad_mask=web == PAD_ID,
    )


def write_shards(spec: CorpusSpec, out_dir, vocab: Vocab | None = None, shard_size: int = 10000):
    """Write the corpus as shard files; returns [(path, sha256, n_records)]."""
    if vocab is None:
        vocab = Vocab.full_grammar()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(spec.seeds)
    results = []
    for shard_no, lo in enumerate(range(0, max(len(seeds), 1), shard_size)):
        chunk = seeds[lo : lo + shard_size]
        if not chunk and shard_no > 0:
            break
        path = out_dir / f"shard-{shard_no:05d}.bin"
        digest = hashlib.sha256()
        with open(path, "wb") as fh:
            _write_blob(fh, digest, HEADER)
            for seed in chunk:
                scene = generate_scene(seed)
                pair = caption(scene, spec.mode, spec.noise, seed)
                image = scene.render(spec.resolution)
                h, w = image.shape[:2]
                _write_blob(fh, digest, struct.pack("<II", h, w))
                _write_blob(fh, digest, image.astype("<f4").tobytes())
                for text in (pair.synthetic, pair.web):
                    ids = _content_ids(text, vocab)
                    _write_blob(fh, digest, struct.pack("<H", len(ids)))
                    _write_blob(fh, digest, ids.astype("<u2").tobytes())
        results.append((path, digest.hexdigest(), len(chunk)))
    return results


def _write_blob(fh, digest, blob: bytes) -> None:
    fh.write(blob)
    digest.update(blob)


def read_shard(path):
    """Parse one shard; returns (images list, synthetic ids list, web ids list)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(HEADER):
        raise CheckpointError(f"{path}: not a corpus shard (bad header)")
    off = len(HEADER)
    images, syn, web = [], [], []
    while off < len(raw):
        try:
            h, w = struct.unpack_from("<II", raw, off)
            off += 8
            n = h * w * 3
            pixels = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(h, w, 3)
            off += 4 * n
            caps = []
            for _ in range(2):
                (count,) = struct.unpack_from("<H", raw, off)
                off += 2
                ids = np.frombuffer(raw, dtype="<u2", count=count, offset=off).copy()
                off += 2 * count
                caps.append(ids)
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated shard record") from exc
        images.append(pixels.copy())
        syn.append(caps[0])
        web.append(caps[1])
    return images, syn, web
