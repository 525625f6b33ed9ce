"""Frozen-encoder evaluation: caption exact match, perplexity, linear probes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data.corpus import Corpus
from .data.scenes import COLORS, SHAPES, Scene, generate_scene
from .data.vocab import BOS_ID, EOS_ID
from .errors import ConfigError, DegenerateBatchError
from .data.corpus import build_batch
from .genhead import build_prefix, caption_loss, caption_loss_mask, decode_forward

PROBE_TASKS = ("shape", "color")


@dataclass(frozen=True)
class ProbeTask:
    """Classify a scene attribute of the dominant (first-in-cell-order) object."""

    name: str
    classes: tuple[str, ...]
    label_fn: Callable[[Scene], int]
    train_seeds: tuple[int, int]  # [start, stop)
    test_seeds: tuple[int, int]


def make_task(name: str, train_seeds=(0, 2000), test_seeds=(100000, 104000)) -> ProbeTask:
    if name == "shape":
        classes = SHAPES
        fn = lambda scene: SHAPES.index(scene.objects[0].shape)  # noqa: E731
    elif name == "color":
        classes = COLORS
        fn = lambda scene: COLORS.index(scene.objects[0].color)  # noqa: E731
    else:
        raise ConfigError(f"unknown probe task {name!r}; valid: {', '.join(PROBE_TASKS)}")
    if set(range(*train_seeds)) & set(range(*test_seeds)):
        raise ConfigError("probe train/test seed ranges overlap")
    return ProbeTask(name, tuple(classes), fn, tuple(train_seeds), tuple(test_seeds))


def balanced_scenes(task: ProbeTask, seed_range: tuple[int, int], per_class: int):
    """Scan seeds in order, keeping scenes until every class hits its quota."""
    counts = {c: 0 for c in range(len(task.classes))}
    scenes, labels = [], []
    for seed in range(*seed_range):
        scene = generate_scene(seed)
        y = task.label_fn(scene)
        if counts[y] >= per_class:
            continue
        counts[y] += 1
        scenes.append(scene)
        labels.append(y)
        if all(v >= per_class for v in counts.values()):
            break
    else:
        raise ConfigError(
            f"seed range {seed_range} too small to balance {per_class} per class"
        )
    return scenes, np.asarray(labels, dtype=np.int64)


def encoder_features(pipeline, scenes, resolution: int, chunk: int = 64) -> np.ndarray:
    """Mean-pooled final encoder tokens for each scene, frozen weights."""
    feats = []
    for lo in range(0, len(scenes), chunk):
        images = np.stack([s.render(resolution) for s in scenes[lo : lo + chunk]])
        tokens = pipeline.visual_tokens(images)
        feats.append(tokens.data.mean(axis=1))
    return np.concatenate(feats, axis=0)


def softmax_regression(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    classes: int,
    l2: float = 0.0,
    epochs: int = 300,
    lr: float = 0.5,
) -> float:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with train-set statistics, which also makes
    the result exactly invariant to positive feature rescaling.
    """
    if len(np.unique(y_train)) < 2:
        raise ConfigError("probe training split contains a single class")
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0) + 1e-12
    xtr = (x_train - mu) / sd
    xte = (x_test - mu) / sd
    n, d = xtr.shape
    w = np.zeros((d, classes))
    b = np.zeros(classes)
    onehot = np.eye(classes)[y_train]
    for _ in range(epochs):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        gl = (p - onehot) / n
        w -= lr * (xtr.T @ gl + l2 * w)
        b -= lr * gl.sum(axis=0)
    pred = np.argmax(xte @ w + b, axis=1)
    return float((pred == y_test).mean())


def linear_probe(pipeline, task: ProbeTask, l2: float = 0.0, epochs: int = 300,
                 per_class_train: int = 50, per_class_test: int = 50) -> float:
    """Held-out accuracy of a linear classifier on frozen encoder features."""
    resolution = pipeline.encoder_cfg.image_size
    train_scenes, y_train = balanced_scenes(task, task.train_seeds, per_class_train)
    test_scenes, y_test = balanced_scenes(task, task.test_seeds, per_class_test)
    x_train = encoder_features(pipeline, train_scenes, resolution)
    x_test = encoder_features(pipeline, test_scenes, resolution)
    return softmax_regression(
        x_train, y_train, x_test, y_test, len(task.classes), l2=l2, epochs=epochs
    )


def exact_match(pipeline, corpus: Corpus) -> float:
    """Fraction of greedy decodes equal to the synthetic caption, token for token."""
    if len(corpus) == 0:
        raise DegenerateBatchError("exact_match over an empty dataset")
    hits = 0
    for i in range(len(corpus)):
        decoded = pipeline.decode(corpus.images[i])
        reference = [BOS_ID, *(int(t) for t in corpus.synthetic_ids[i]), EOS_ID]
        hits += decoded == reference
    return hits / len(corpus)


def perplexity(pipeline, corpus: Corpus, caption_field: str = "synthetic", chunk: int = 32) -> float:
    """exp of the mean caption loss per supervised token; all tokens kept."""
    if len(corpus) == 0:
        raise DegenerateBatchError("perplexity over an empty dataset")
    max_len = pipeline.model.decoder.max_caption_len
    total_nll, total_count = 0.0, 0
    for lo in range(0, len(corpus), chunk):
        idx = np.arange(lo, min(lo + chunk, len(corpus)))
        batch = build_batch(corpus, idx, max_len, dtype=pipeline.dtype)
        ids = getattr(batch, caption_field)
        tokens = pipeline.visual_tokens(batch.images)
        n = tokens.shape[1]
        kept = np.tile(np.arange(n, dtype=np.int64), (len(idx), 1))
        prefix = build_prefix(tokens, kept, ids, pipeline.connector, pipeline.decoder)
        logits = decode_forward(prefix, pipeline.decoder, pipeline.model.decoder)
        mask = caption_loss_mask(ids)
        count = int(mask.sum())
        if count == 0:
            continue
        loss = caption_loss(logits, ids, mask)
        total_nll += loss.item() * count
        total_count += count
    if total_count == 0:
        raise DegenerateBatchError("perplexity: no supervised tokens")
    return float(np.exp(total_nll / total_count))
