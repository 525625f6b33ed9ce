"""Caption generation: a closed template grammar with controllable quality.

Every scene has one canonical description (template A) that names each
object's color, shape, and grid position in cell order, e.g.

    a red circle in the top left and a blue square in the middle

Three caption modes model different supervision quality:

  * ``recap``    - the training caption is template A.
  * ``recap_v2`` - template A plus one grounded relational clause, picked
                   by weighted choice over object pairs (adjacent pairs
                   weighted higher); single-object scenes get "... is alone".
  * ``alt_text`` - the training caption is the degraded web caption.

The web caption is the alt-text analogue in every mode: with probability
`noise` one attribute of one object is dropped or corrupted (drop color /
swap color / drop position), so at noise=0 it equals template A and at
noise=1 it always differs from it.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from ..rng import SplitMix64, derive_seed
from .scenes import COLORS, Scene, SceneObject

MODES = ("alt_text", "recap", "recap_v2")

_ROW_NAMES = ("top", "middle", "bottom")
_COL_NAMES = ("left", "center", "right")

# sub-stream tags so web degradation and clause choice draw independently
_WEB_STREAM = 101
_CLAUSE_STREAM = 202


@dataclass(frozen=True)
class CaptionPair:
    synthetic: str
    web: str
    mode: str


def cell_phrase(cell: int) -> str:
    row, col = cell // 3, cell % 3
    if row == 1 and col == 1:
        return "middle"
    return f"{_ROW_NAMES[row]} {_COL_NAMES[col]}"


def object_phrase(obj: SceneObject) -> str:
    return f"a {obj.color} {obj.shape} in the {cell_phrase(obj.cell)}"


def base_caption(scene: Scene) -> str:
    """Template A: every object, in cell order."""
    return " and ".join(object_phrase(o) for o in scene.objects)


def _relations(a: SceneObject, b: SceneObject) -> list[str]:
    rels = []
    if a.col < b.col:
        rels.append("left of")
    if a.col > b.col:
        rels.append("right of")
    if a.row < b.row:
        rels.append("above")
    if a.row > b.row:
        rels.append("below")
    return rels


def relational_clause(scene: Scene, rng: SplitMix64) -> str:
    """One grounded extra clause; weighted toward adjacent object pairs."""
    objs = scene.objects
    if len(objs) == 1:
        o = objs[0]
        return f"the {o.color} {o.shape} is alone"
    candidates = []
    weights = []
    for i, a in enumerate(objs):
        for j, b in enumerate(objs):
            if i == j:
                continue
            adjacent = max(abs(a.row - b.row), abs(a.col - b.col)) == 1
            for rel in _relations(a, b):
                candidates.append((a, rel, b))
                weights.append(2 if adjacent else 1)
    a, rel, b = rng.weighted_choice(candidates, weights)
    return f"the {a.color} {a.shape} is {rel} the {b.color} {b.shape}"


def _degrade(scene: Scene, noise: float, rng: SplitMix64) -> str:
    """Web alt-text analogue: possibly drop/corrupt one attribute.

    With probability `noise`, pick one object and one item from the fixed
    degradation menu: drop its color word, swap its color for a different
    one, or drop its position phrase. Each choice guarantees the caption
    differs from template A.
    """
    phrases = [object_phrase(o) for o in scene.objects]
    if noise > 0.0 and rng.next_float() < noise:
        k = rng.randint(len(scene.objects))
        o = scene.objects[k]
        kind = rng.randint(3)
        if kind == 0:  # drop color
            phrases[k] = f"a {o.shape} in the {cell_phrase(o.cell)}"
        elif kind == 1:  # swap color
            others = [c for c in COLORS if c != o.color]
            wrong = others[rng.randint(len(others))]
            phrases[k] = f"a {wrong} {o.shape} in the {cell_phrase(o.cell)}"
        else:  # drop position
            phrases[k] = f"a {o.color} {o.shape}"
    return " and ".join(phrases)


def caption(scene: Scene, mode: str, noise: float, seed: int) -> CaptionPair:
    """Produce the (synthetic, web) caption pair for a scene."""
    if mode not in MODES:
        raise ConfigError(f"unknown caption mode {mode!r}; valid modes: {', '.join(MODES)}")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise must be in [0, 1], got {noise}")
    base = base_caption(scene)
    web = _degrade(scene, noise, SplitMix64(derive_seed(seed, _WEB_STREAM)))
    if mode == "recap_v2":
        clause = relational_clause(scene, SplitMix64(derive_seed(seed, _CLAUSE_STREAM)))
        synthetic = f"{base} and {clause}"
    else:
        synthetic = base
    return CaptionPair(synthetic=synthetic, web=web, mode=mode)


def training_caption(pair: CaptionPair) -> str:
    """The caption the generative pipeline is supervised on.

    alt_text mode trains on the raw (degraded) web caption; the recap
    modes train on the clean synthetic caption.
    """
    return pair.web if pair.mode == "alt_text" else pair.synthetic
