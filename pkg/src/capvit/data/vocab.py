"""Word-level tokenizer over the closed caption grammar.

Ids 0-3 are reserved (PAD, BOS, EOS, UNK); corpus words get ids in
first-seen order over a deterministic corpus scan. The grammar is closed,
so the full word list is also available as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .captions import MODES  # noqa: F401  (re-exported context for corpus specs)
from .scenes import COLORS, SHAPES

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

# Every word the caption grammar can emit, in a fixed documented order.
GRAMMAR_WORDS: tuple[str, ...] = (
    "a",
    "the",
    "in",
    "and",
    "is",
    "of",
    "alone",
    "above",
    "below",
    "left",
    "right",
    "center",
    "top",
    "middle",
    "bottom",
    *COLORS,
    *SHAPES,
)


@dataclass(frozen=True)
class Vocab:
    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    @classmethod
    def from_words(cls, words) -> "Vocab":
        tokens = list(RESERVED)
        for w in words:
            if w not in tokens:
                tokens.append(w)
        return cls(token_to_id={t: i for i, t in enumerate(tokens)}, id_to_token=tuple(tokens))

    @classmethod
    def full_grammar(cls) -> "Vocab":
        """Reserved ids plus the whole closed grammar, in documented order."""
        return cls.from_words(GRAMMAR_WORDS)


def build_vocab(spec) -> Vocab:
    """Scan a corpus spec's captions and assign ids in first-seen order.

    The scan order is seed order; per record the synthetic caption is
    scanned before the web caption. Two builds over the same spec yield
    identical maps.
    """
    from .corpus import iter_pairs  # local import to avoid a cycle

    words: list[str] = []
    seen: set[str] = set()
    for pair in iter_pairs(spec):
        for text in (pair.synthetic, pair.web):
            for w in text.split():
                if w not in seen:
                    seen.add(w)
                    words.append(w)
    return Vocab.from_words(words)


def tokenize(text: str, vocab: Vocab, max_len: int) -> np.ndarray:
    """BOS + word ids + EOS, PAD-right to max_len.

    Overlong sentences are truncated so that EOS lands at max_len-1.
    Unknown words map to UNK.
    """
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    ids = [vocab.id_of(w) for w in text.split()]
    ids = ids[: max_len - 2]
    seq = [BOS_ID, *ids, EOS_ID]
    seq.extend([PAD_ID] * (max_len - len(seq)))
    return np.asarray(seq, dtype=np.int64)


def detokenize(ids, vocab: Vocab) -> str:
    words = []
    for i in np.asarray(ids).reshape(-1):
        i = int(i)
        if i == EOS_ID:
            break
        if i in (PAD_ID, BOS_ID):
            continue
        words.append(vocab.id_to_token[i] if 0 <= i < vocab.size else "<unk>")
    return " ".join(words)


def save_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, tok in enumerate(vocab.id_to_token):
            fh.write(f"{tok}\t{i}\n")


def load_vocab(path) -> Vocab:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            tok, i = line.split("\t")
            pairs.append((int(i), tok))
    pairs.sort()
    tokens = tuple(tok for _, tok in pairs)
    return Vocab(token_to_id={t: i for i, t in enumerate(tokens)}, id_to_token=tokens)
