from .scenes import COLORS, SHAPES, Scene, SceneObject, generate_scene, render
from .captions import CaptionPair, MODES, caption, base_caption, training_caption
from .vocab import (
    BOS_ID,
    EOS_ID,
    GRAMMAR_WORDS,
    PAD_ID,
    UNK_ID,
    Vocab,
    build_vocab,
    detokenize,
    load_vocab,
    save_vocab,
    tokenize,
)
from .corpus import Batch, Corpus, CorpusSpec, build_batch, read_shard, write_shards

__all__ = [
    "COLORS",
    "SHAPES",
    "Scene",
    "SceneObject",
    "generate_scene",
    "render",
    "CaptionPair",
    "MODES",
    "caption",
    "base_caption",
    "training_caption",
    "PAD_ID",
    "BOS_ID",
    "EOS_ID",
    "UNK_ID",
    "GRAMMAR_WORDS",
    "Vocab",
    "build_vocab",
    "tokenize",
    "detokenize",
    "save_vocab",
    "load_vocab",
    "Batch",
    "Corpus",
    "CorpusSpec",
    "build_batch",
    "read_shard",
    "write_shards",
]
