"""Speaker policies and description metrics over noun token sets.

Captions themselves are external inputs: callers provide token lists and
optional per-caption scores, and these functions decide when a speaker
triggers and how well the produced descriptions cover the environment.
Set intersections are soft: a similarity provider scores token pairs and the
intersection is the value of the optimal one-to-one assignment.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyCategories, EmptySet


class SpeakerKind(Enum):
    DEPTH = "depth"
    OBJECT = "object"
    SURPRISAL = "surprisal"

SURPRISAL_WINDOW = 20


@dataclass
class SpeakerPolicy:
    """Trigger rule: depth mean > D, object count >= O, or windowed surprisal > S."""

    kind: SpeakerKind
    threshold: float
    window: deque = field(default_factory=lambda: deque(maxlen=SURPRISAL_WINDOW))

    def push_surprisal(self, value: float) -> None:
        self.window.append(value)

    def rolling_surprisal(self) -> float:
        return float(sum(self.window))


def speaker_trigger(policy: SpeakerPolicy, stat: float) -> bool:
    """Compare a step statistic against the policy threshold.

    Object uses >= (at least O objects in view); depth and surprisal use >.
    """
    if policy.kind == SpeakerKind.OBJECT:
        return stat >= policy.threshold
    return stat > policy.threshold


class ExactMatch:
    """Similarity 1 for equal tokens, else 0."""

    def __call__(self, a: str, b: str) -> float:
        return 1.0 if a == b else 0.0


class EmbeddingTable:
    """Cosine similarity (clamped to [0, 1]) over a word-vector table.

    File format: one token per line, the token then its floats, whitespace
    separated. Unknown tokens fall back to exact matching.
    """

    def __init__(self, vectors: dict[str, np.ndarray]):
        self.vectors = {}
        for token, vec in vectors.items():
            v = np.asarray(vec, dtype=np.float64)
            norm = np.linalg.norm(v)
            self.vectors[token] = v / norm if norm > 0 else v

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        table = {}
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if len(parts) < 2:
                    continue
                table[parts[0]] = np.array([float(x) for x in parts[1:]])
        return cls(table)

    def __call__(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        va = self.vectors.get(a)
        vb = self.vectors.get(b)
        if va is None or vb is None:
            return 0.0
        return float(max(0.0, va @ vb))


def hungarian_intersection(tokens_a: list[str], tokens_b: list[str], sim=None) -> float:
    """Max-weight one-to-one assignment value between two token multisets.

    With exact matching this equals the multiset intersection size. Empty
    inputs intersect to 0.
    """
    if not tokens_a or not tokens_b:
        return 0.0
    if sim is None:
        sim = ExactMatch()
    profits = np.array([[sim(a, b) for b in tokens_b] for a in tokens_a])
    rows, cols = linear_sum_assignment(profits, maximize=True)
    return float(profits[rows, cols].sum())


def coverage_score(
    nouns: list[str],
    categories: list[str],
    sim=None,
    areas: list[float] | None = None,
    min_area: float = 0.0,
) -> float:
    """Soft coverage: intersection with the category set over its size.

    When per-category visible areas are given, categories below min_area are
    dropped before scoring.
    """
    cats = list(categories)
    if areas is not None:
        cats = [c for c, a in zip(cats, areas) if a >= min_area]
    if not cats:
        raise EmptyCategories("no ground-truth categories to cover")
    inter = hungarian_intersection(nouns, cats, sim)
    return min(max(inter / len(cats), 0.0), 1.0)


def diversity_score(nouns_t: list[str], nouns_next: list[str], sim=None) -> float:
    """Jaccard distance between consecutive caption noun sets."""
    if not nouns_t or not nouns_next:
        raise EmptySet("diversity needs two nonempty noun sets")
    inter = hungarian_intersection(nouns_t, nouns_next, sim)
    return 1.0 - inter / (len(nouns_t) + len(nouns_next) - inter)


def episode_description_score(
    caption_scores: list[float],
    episode_nouns: list[str],
    env_objects: list[str],
    pct_area_seen: float,
    sim=None,
    dedup: bool = True,
) -> float:
    """Mean caption score x noun/object assignment IoU x fraction of area seen.

    Episode nouns are deduplicated by default (dedup=False keeps the raw
    multiset). No captions means a zero score.
    """
    if not caption_scores:
        return 0.0
    nouns = list(dict.fromkeys(episode_nouns)) if dedup else list(episode_nouns)
    if not nouns or not env_objects:
        iou = 0.0
    else:
        inter = hungarian_intersection(nouns, env_objects, sim)
        iou = inter / (len(nouns) + len(env_objects) - inter)
    return float(np.mean(caption_scores)) * iou * pct_area_seen


def loquacity(trigger_count: int, episode_length: int) -> float:
    """Triggers per step; multiply by 100 for the reported percentage."""
    if episode_length <= 0:
        raise EmptySet("episode length must be positive")
    return trigger_count / episode_length
