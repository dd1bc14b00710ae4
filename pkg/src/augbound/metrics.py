"""Monte-Carlo estimators of the augmentation distance terms.

Two quantities drive the bounds:

* the *min cross-image* term, ``E_a min_a' ||f(a(x)) - f(a'(x'))||`` for
  same-class images ``x != x'``;
* the *max same-image* term, ``max_{a,a'} ||f(a(x)) - f(a'(x))||``.

Neither min nor max over a continuous augmentation family is computable, so
both are taken over sampled candidate pools that always contain the identity.
The min estimate is therefore biased upward and the max estimate downward.

``embed`` is any callable mapping an image batch ``(n, d, d, 3)`` to feature
rows ``(n, k)``; ``None`` means raw pixels, i.e. Frobenius distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ._seeding import STREAM_ANCHOR, STREAM_CANDIDATE, derive_rng
from .augment import IDENTITY, AugDistribution, Augmentation, apply_batch, sample_augmentations

log = logging.getLogger(__name__)

Embed = Callable[[np.ndarray], np.ndarray]


@dataclass
class DistanceEstimate:
    value: float
    std_error: float
    m_a: int
    m_c: int

    def to_row(self, term: str, **params: Any) -> dict[str, Any]:
        return {"term": term, "value": self.value, "std_error": self.std_error,
                "params": {"m_a": self.m_a, "m_c": self.m_c, **params}}


def features(imgs: np.ndarray, embed: Embed | None) -> np.ndarray:
    imgs = np.asarray(imgs, dtype=np.float64)
    if embed is None:
        return imgs.reshape(imgs.shape[0], -1)
    return np.asarray(embed(imgs), dtype=np.float64)


def _std_error(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def anchor_views(dist: AugDistribution, m_a: int, seed: int, index: int) -> list[Augmentation]:
    return sample_augmentations(dist, derive_rng(seed, STREAM_ANCHOR, index), m_a)


def candidate_views(dist: AugDistribution, m_c: int, seed: int, index: int) -> list[Augmentation]:
    """Identity followed by ``m_c - 1`` sampled augmentations."""
    return [IDENTITY] + sample_augmentations(dist, derive_rng(seed, STREAM_CANDIDATE, index), m_c - 1)


def min_cross_image_distance(
    x: np.ndarray,
    x2: np.ndarray,
    dist: AugDistribution,
    embed: Embed | None = None,
    m_a: int = 16,
    m_c: int = 16,
    seed: int = 0,
) -> DistanceEstimate:
    """Average over ``m_a`` anchor views of ``x`` of the distance to the closest
    of ``m_c`` candidate views of ``x2`` (identity included)."""
    if m_a < 1 or m_c < 1:
        raise ValueError("m_a and m_c must be >= 1")
    a = features(apply_batch(x, anchor_views(dist, m_a, seed, 0)), embed)
    b = features(apply_batch(x2, candidate_views(dist, m_c, seed, 1)), embed)
    per_anchor = cdist(a, b).min(axis=1)
    return DistanceEstimate(float(per_anchor.mean()), _std_error(per_anchor), m_a, m_c)


def max_same_image_distance(
    x: np.ndarray,
    dist: AugDistribution,
    embed: Embed | None = None,
    m: int = 16,
    seed: int = 0,
) -> DistanceEstimate:
    """Largest pairwise distance among ``m`` views of ``x`` (identity included).

    A single maximum carries no sampling spread, so ``std_error`` is 0.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    v = features(apply_batch(x, candidate_views(dist, m, seed, 0)), embed)
    return DistanceEstimate(float(pdist(v).max()), 0.0, m, m)


@dataclass
class ClassDistanceTerms:
    min_term: DistanceEstimate
    max_term: DistanceEstimate
    per_class_min: dict[int, float] = field(default_factory=dict)
    per_class_max: dict[int, float] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.min_term.value + self.max_term.value


def _combine(values: dict[int, float], errors: dict[int, float], m_a: int, m_c: int) -> DistanceEstimate:
    if not values:
        return DistanceEstimate(float("nan"), float("nan"), m_a, m_c)
    v = np.array(list(values.values()))
    e = np.array(list(errors.values()))
    return DistanceEstimate(float(v.mean()), float(np.sqrt(np.sum(e**2)) / v.size), m_a, m_c)


def class_distance_terms(
    dataset: Sequence[tuple[np.ndarray, int]],
    dist: AugDistribution,
    embed: Embed | None = None,
    m_a: int = 8,
    m_c: int = 8,
    seed: int = 0,
) -> ClassDistanceTerms:
    """Per-class averages of both terms, then an unweighted mean over classes.

    Image ``i`` of the dataset (global position) gets ``m_a`` anchor views and
    ``m_c`` candidate views from streams keyed by ``(seed, i)``; the candidate
    views also form the pool for its max term. The min term of an image
    averages over every *other* element of its class. Standard errors are
    taken across images within a class.
    """
    imgs = np.stack([np.asarray(img, dtype=np.float64) for img, _ in dataset])
    labels = np.array([int(c) for _, c in dataset])
    anchors, cands = [], []
    for i in range(len(dataset)):
        anchors.append(features(apply_batch(imgs[i], anchor_views(dist, m_a, seed, i)), embed))
        cands.append(features(apply_batch(imgs[i], candidate_views(dist, m_c, seed, i)), embed))

    min_v, min_e, max_v, max_e, skipped = {}, {}, {}, {}, []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        maxima = np.array([pdist(cands[i]).max() if m_c > 1 else 0.0 for i in idx])
        max_v[int(c)], max_e[int(c)] = float(maxima.mean()), _std_error(maxima)
        if idx.size < 2:
            log.warning("class %d has fewer than two images; skipped for the min term", c)
            skipped.append(int(c))
            continue
        pool = np.concatenate([cands[i] for i in idx])
        per_image = []
        for pos, i in enumerate(idx):
            d = cdist(anchors[i], pool).reshape(m_a, idx.size, m_c).min(axis=2)
            d = np.delete(d, pos, axis=1)
            per_image.append(d.mean())
        per_image = np.array(per_image)
        min_v[int(c)], min_e[int(c)] = float(per_image.mean()), _std_error(per_image)

    return ClassDistanceTerms(
        min_term=_combine(min_v, min_e, m_a, m_c),
        max_term=_combine(max_v, max_e, m_c, m_c),
        per_class_min=min_v,
        per_class_max=max_v,
        skipped=skipped,
    )


def lipschitz_estimate(embed: Embed, pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Largest ``||f(x) - f(x')|| / ||x - x'||`` over the pairs; a lower bound
    on the Lipschitz constant. Pairs at zero input distance are skipped."""
    best = 0.0
    for x, x2 in pairs:
        gap = float(np.linalg.norm(np.asarray(x, float) - np.asarray(x2, float)))
        if gap == 0.0:
            continue
        fx = features(np.stack([x, x2]), embed)
        best = max(best, float(np.linalg.norm(fx[0] - fx[1])) / gap)
    return best


def centering_residual(embed: Embed, x: np.ndarray, dist: AugDistribution, m: int = 64, seed: int = 0) -> float:
    """``||mean_j f(a_j(x)) - f(x)||`` over ``m`` sampled augmentations."""
    if m < 1:
        raise ValueError("m must be >= 1")
    views = features(apply_batch(x, anchor_views(dist, m, seed, 0)), embed)
    base = features(np.asarray(x, float)[None], embed)[0]
    return float(np.linalg.norm(views.mean(axis=0) - base))
