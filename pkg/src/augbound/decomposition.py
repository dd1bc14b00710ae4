"""Exact small-world checks of the contrastive risk decomposition and bounds.

A :class:`DiscreteWorld` has finitely many classes, images per class and
augmentations, all with explicit probabilities, so every expectation in the
contrastive and supervised risks is a finite sum. Two independent routes are
kept apart on purpose:

* the *direct* route enumerates each of the ``K + 1`` tuple slots over flat
  ``(class, image, augmentation)`` options and never groups by class pattern;
* the *pattern* route enumerates multisets of off-class negative labels with
  their multinomial multiplicities and evaluates the inner risk of each.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from ._seeding import STREAM_WORLD, derive_rng
from .risk import col_term, intermediate_sup_risk_exact, tau_K

ENUM_LIMIT = 10**7
PROB_TOL = 1e-12

Aug = Callable[[np.ndarray], np.ndarray]
Embed = Callable[[np.ndarray], np.ndarray]


class EnumerationTooLarge(ValueError):
    """Raised when an exhaustive sum would exceed :data:`ENUM_LIMIT` terms."""


def _guard(count: int, what: str) -> None:
    if count > ENUM_LIMIT:
        raise EnumerationTooLarge(f"{what}: {count} terms exceed the limit {ENUM_LIMIT}")


def _check_probs(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name} must be a non-empty probability vector")
    return p


def _identity(x: np.ndarray) -> np.ndarray:
    return x


@dataclass
class DiscreteWorld:
    """Finite data-generation process.

    ``images[c]`` is an ``(n_c, ...)`` array of the originals of class ``c``,
    drawn with probabilities ``image_probs[c]``. ``augs[0]`` must be the
    identity; ``aug_probs`` weights the augmentation set.
    """

    prior: np.ndarray
    images: list[np.ndarray]
    augs: list[Aug]
    aug_probs: np.ndarray
    K: int
    image_probs: list[np.ndarray] | None = None

    def __post_init__(self) -> None:
        self.prior = _check_probs(self.prior, "prior")
        self.aug_probs = _check_probs(self.aug_probs, "aug_probs")
        self.images = [np.asarray(x, dtype=np.float64) for x in self.images]
        if len(self.images) != self.prior.size:
            raise ValueError("need one image array per class")
        if any(x.shape[0] == 0 for x in self.images):
            raise ValueError("every class needs at least one image")
        if self.image_probs is None:
            self.image_probs = [np.full(x.shape[0], 1.0 / x.shape[0]) for x in self.images]
        self.image_probs = [_check_probs(p, f"image_probs[{c}]") for c, p in enumerate(self.image_probs)]
        if len(self.augs) != self.aug_probs.size:
            raise ValueError("aug_probs must have one entry per augmentation")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        probe = self.images[0][0]
        if not np.array_equal(self.augs[0](probe), probe):
            raise ValueError("augs[0] must be the identity")

    @property
    def C(self) -> int:
        return self.prior.size

    @property
    def A(self) -> int:
        return len(self.augs)

    def features(self, f: Embed) -> "FeatureTable":
        return FeatureTable.build(self, f)


@dataclass
class FeatureTable:
    """``feats[c][i, a]`` is ``f(aug_a(image_ci))``; ``probs[c][i, a]`` its weight
    within class ``c``."""

    world: DiscreteWorld
    feats: list[np.ndarray]
    probs: list[np.ndarray]

    @classmethod
    def build(cls, world: DiscreteWorld, f: Embed) -> "FeatureTable":
        feats, probs = [], []
        for c in range(world.C):
            views = np.stack([np.stack([aug(x) for aug in world.augs]) for x in world.images[c]])
            n, A = views.shape[:2]
            flat = np.asarray(f(views.reshape(n * A, *views.shape[2:])), dtype=np.float64)
            feats.append(flat.reshape(n, A, -1))
            probs.append(np.outer(world.image_probs[c], world.aug_probs))
        return cls(world, feats, probs)

    def slot(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        """Flattened options and weights for a negative slot of class ``c``."""
        F = self.feats[c]
        return F.reshape(-1, F.shape[-1]), self.probs[c].ravel()

    def class_means(self) -> np.ndarray:
        """Means of ``f`` over unaugmented originals (augmentation 0)."""
        return np.stack([self.world.image_probs[c] @ self.feats[c][:, 0] for c in range(self.world.C)])


# -- patterns -------------------------------------------------------------------

@dataclass(frozen=True)
class Pattern:
    k: int
    labels: tuple[int, ...]
    multiplicity: int


def enumerate_patterns(C: int, c: int, K: int) -> list[Pattern]:
    """Every multiset of ``k <= K`` labels other than ``c``, with the number of
    ordered negative-class tuples realising it."""
    if C < 1 or K < 1 or not 0 <= c < C:
        raise ValueError("need C >= 1, K >= 1 and 0 <= c < C")
    others = [i for i in range(C) if i != c]
    _guard(math.comb(len(others) + K, K), "pattern enumeration")
    out = []
    for k in range(K + 1):
        for labels in itertools.combinations_with_replacement(others, k):
            denom = math.factorial(K - k)
            for n in Counter(labels).values():
                denom *= math.factorial(n)
            out.append(Pattern(k, labels, math.factorial(K) // denom))
    return out


def p_k(prior: np.ndarray, c: int, pattern: Pattern, K: int) -> float:
    pi = np.asarray(prior, dtype=np.float64)
    return float(pattern.multiplicity * np.prod(pi[list(pattern.labels)]) * pi[c] ** (K - pattern.k))


# -- exhaustive expectations --------------------------------------------------------

def _expected_log1p_sum(terms: Sequence[np.ndarray], weights: Sequence[np.ndarray]) -> np.ndarray:
    """``sum over tuples of prod w * log(1 + sum_m t_m)``, one slot per list entry.

    ``terms[m]`` has shape ``(B, n_m)`` (a batch of independent problems) and
    ``weights[m]`` shape ``(n_m,)``.
    """
    B = terms[0].shape[0]
    total = np.zeros((B, 1))
    w = np.ones(1)
    for t, wm in zip(terms, weights):
        total = (total[:, :, None] + t[:, None, :]).reshape(B, -1)
        w = np.outer(w, wm).ravel()
    return np.log1p(total) @ w


def r_k_exhaustive(table: FeatureTable, c: int, i: int, a: int, pattern: Pattern) -> float:
    """Inner risk: exact InfoNCE expectation for anchor ``aug_a(x_ci)`` over the
    positive augmentation and over negatives drawn from the pattern classes
    (and class ``c`` for the remaining slots)."""
    world = table.world
    K = world.K
    slots = list(pattern.labels) + [c] * (K - pattern.k)
    _guard(world.A * math.prod(table.feats[s].shape[0] * world.A for s in slots), "inner risk")
    z = table.feats[c][i, a]
    s_pos = table.feats[c][i] @ z                              # over positive augmentations
    terms, weights = [], []
    for s in slots:
        F, w = table.slot(s)
        terms.append(np.exp((F @ z)[None, :] - s_pos[:, None]))
        weights.append(w)
    per_pos = _expected_log1p_sum(terms, weights)
    return float(per_pos @ world.aug_probs)


def unsup_risk_direct(table: FeatureTable) -> float:
    """Exact contrastive risk, enumerating each negative slot over all
    ``(class, image, augmentation)`` options jointly."""
    world = table.world
    flat_F, flat_w = [], []
    for c in range(world.C):
        F, w = table.slot(c)
        flat_F.append(F)
        flat_w.append(world.prior[c] * w)
    flat_F, flat_w = np.concatenate(flat_F), np.concatenate(flat_w)
    _guard(sum(F.shape[0] for F in table.feats) * world.A**2 * flat_w.size**world.K, "direct risk")
    total = 0.0
    for c in range(world.C):
        F = table.feats[c]
        n, A = F.shape[:2]
        z = F.reshape(n * A, -1)                                # anchors (i, a)
        s_pos = np.einsum("iak,ibk->iab", F, F).reshape(n * A, A)   # (anchor, positive aug)
        s_neg = z @ flat_F.T                                    # (anchor, option)
        e = np.exp(s_neg[:, None, :] - s_pos[:, :, None]).reshape(n * A * A, -1)
        per = _expected_log1p_sum([e] * world.K, [flat_w] * world.K).reshape(n * A, A)
        w_anchor = table.probs[c].ravel()
        total += world.prior[c] * float(w_anchor @ (per @ world.aug_probs))
    return total


# -- reports ---------------------------------------------------------------

@dataclass
class PatternRow:
    c: int
    pattern: Pattern
    p: float
    r: float


@dataclass
class DecompositionReport:
    rows: list[PatternRow]
    reconstructed: float
    direct: float
    p_totals: dict[int, float] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return abs(self.reconstructed - self.direct)

    def to_dict(self) -> dict:
        return {
            "reconstructed": self.reconstructed,
            "direct": self.direct,
            "gap": self.gap,
            "p_totals": {str(c): v for c, v in self.p_totals.items()},
            "rows": [{"c": r.c, "k": r.pattern.k, "labels": list(r.pattern.labels),
                      "multiplicity": r.pattern.multiplicity, "p_k": r.p, "r_k": r.r} for r in self.rows],
        }


def _anchor_options(table: FeatureTable, c: int):
    n, A = table.feats[c].shape[:2]
    for i in range(n):
        for a in range(A):
            yield i, a, table.probs[c][i, a]


def decomposition_check(world: DiscreteWorld, f: Embed) -> DecompositionReport:
    """Rebuild the contrastive risk from pattern probabilities and inner risks
    and compare with the direct enumeration."""
    table = world.features(f)
    rows, recon, p_totals = [], 0.0, {}
    for c in range(world.C):
        if world.prior[c] == 0:
            continue
        patterns = enumerate_patterns(world.C, c, world.K)
        p_totals[c] = sum(p_k(world.prior, c, pat, world.K) for pat in patterns)
        for pat in patterns:
            p = p_k(world.prior, c, pat, world.K)
            if p == 0:
                continue
            r = sum(w * r_k_exhaustive(table, c, i, a, pat) for i, a, w in _anchor_options(table, c))
            rows.append(PatternRow(c, pat, p, r))
            recon += world.prior[c] * p * r
    return DecompositionReport(rows, recon, unsup_risk_direct(table), p_totals)


def r_k_sup(z: np.ndarray, c: int, pattern: Pattern, means: np.ndarray, K: int) -> float:
    """``log(1 + (K - k) + sum_m exp(-z.(mu_c - mu_{i_m})))``."""
    z = np.asarray(z, dtype=np.float64)
    scores = means @ z
    terms = [0.0] + [scores[i] - scores[c] for i in pattern.labels]
    if pattern.k < K:
        terms.append(math.log(K - pattern.k))
    return float(logsumexp(terms))


# -- distance terms on a world ------------------------------------------------------

def _support(world: DiscreteWorld) -> np.ndarray:
    return np.flatnonzero(world.aug_probs > 0)


def max_terms(table: FeatureTable) -> np.ndarray:
    """``max_terms[c][i]``: largest distance between two supported views of image ``(c, i)``."""
    sup = _support(table.world)
    out = []
    for F in table.feats:
        V = F[:, sup]
        d = np.linalg.norm(V[:, :, None] - V[:, None, :], axis=-1)
        out.append(d.max(axis=(1, 2)))
    return out


def min_term(table: FeatureTable, c: int, i: int) -> float:
    """``E_{x' ~ rho_c} E_{a'} min_{a''} ||f(a'(x)) - f(a''(x'))||`` for ``x = x_ci``;
    ``x'`` ranges over the whole class, ``x`` itself included."""
    world = table.world
    sup = _support(world)
    F = table.feats[c]
    anchors = F[i]                                             # (A, k)
    cands = F[:, sup]                                          # (n, |sup|, k)
    d = np.linalg.norm(anchors[None, :, None, :] - cands[:, None, :, :], axis=-1).min(axis=2)   # (n, A)
    return float(world.image_probs[c] @ d @ world.aug_probs)


@dataclass
class BoundCheck:
    """An upper bound ``lhs <= rhs``; ``slack = rhs - lhs``."""

    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class InnerBoundRow:
    c: int
    i: int
    a: int
    pattern: Pattern
    r_k: float
    r_k_sup: float
    penalty: float

    @property
    def rhs(self) -> float:
        return self.r_k_sup - self.penalty

    @property
    def slack(self) -> float:
        return self.r_k - self.rhs


def inner_risk_bound_check(world: DiscreteWorld, f: Embed, patterns: Sequence[tuple[int, Pattern]] | None = None
                           ) -> list[InnerBoundRow]:
    """Check ``r_k >= r_k^sup - penalty`` for every anchor ``(c, i, a)`` and pattern.

    The penalty is ``2||f(a(x)) - f(x)|| + 2 Max_c + max_m Max_{i_m} + Min(x)``
    where ``Max_j`` averages the per-image max term over class ``j`` and
    ``Min(x)`` is :func:`min_term`. The last-but-one term is 0 for ``k = 0``.
    """
    table = world.features(f)
    means = table.class_means()
    mx = max_terms(table)
    class_max = np.array([world.image_probs[j] @ mx[j] for j in range(world.C)])
    if patterns is None:
        patterns = [(c, pat) for c in range(world.C) for pat in enumerate_patterns(world.C, c, world.K)]
    rows = []
    for c, pat in patterns:
        neg_max = max((class_max[j] for j in pat.labels), default=0.0)
        for i, a, _ in _anchor_options(table, c):
            z = table.feats[c][i, a]
            base = table.feats[c][i, 0]
            penalty = (2 * np.linalg.norm(z - base) + 2 * class_max[c] + neg_max + min_term(table, c, i))
            rows.append(InnerBoundRow(c, i, a, pat, r_k_exhaustive(table, c, i, a, pat),
                                      r_k_sup(base, c, pat, means, world.K), float(penalty)))
    return rows


@dataclass
class WorldRisks:
    """Exact risks and distance terms of a world under one encoder."""

    r_un: float
    rbar_sup: float
    rbar_sup_patterns: float
    r_sup: float
    r_sup_conditional: float
    min_term: float
    max_term: float
    tau: float
    col: float

    @property
    def rbar_rhs(self) -> float:
        return self.r_un + self.min_term + 5 * self.max_term

    @property
    def rbar_slack(self) -> float:
        return self.rbar_rhs - self.rbar_sup

    @property
    def curl_gap(self) -> float:
        """``Rbar_sup - [(1 - tau) R_sup_cond + tau * col]``; logged, not asserted."""
        return self.rbar_sup - ((1 - self.tau) * self.r_sup_conditional + self.tau * self.col)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(rbar_rhs=self.rbar_rhs, rbar_slack=self.rbar_slack, curl_gap=self.curl_gap)
        return d


def world_risks(world: DiscreteWorld, f: Embed) -> WorldRisks:
    table = world.features(f)
    means = table.class_means()
    scores = [table.feats[c][:, 0] @ means.T for c in range(world.C)]
    rbar = intermediate_sup_risk_exact(scores, world.prior, world.K, weights_by_class=world.image_probs)
    rbar_cond = intermediate_sup_risk_exact(scores, world.prior, world.K, conditional=True,
                                            weights_by_class=world.image_probs)
    rbar_pat = 0.0
    r_sup = 0.0
    for c in range(world.C):
        if world.prior[c] == 0:
            continue
        for pat in enumerate_patterns(world.C, c, world.K):
            p = p_k(world.prior, c, pat, world.K)
            if p == 0:
                continue
            vals = np.array([r_k_sup(z, c, pat, means, world.K) for z in table.feats[c][:, 0]])
            rbar_pat += world.prior[c] * p * float(world.image_probs[c] @ vals)
        gaps = scores[c] - scores[c][:, [c]]
        gaps[:, c] = -np.inf
        per = np.logaddexp(0.0, logsumexp(gaps, axis=1)) if world.C > 1 else np.zeros(len(gaps))
        r_sup += world.prior[c] * float(world.image_probs[c] @ per)
    mx = max_terms(table)
    max_total = sum(world.prior[c] * float(world.image_probs[c] @ mx[c]) for c in range(world.C))
    min_total = 0.0
    for c in range(world.C):
        per = np.array([min_term(table, c, i) for i in range(table.feats[c].shape[0])])
        min_total += world.prior[c] * float(world.image_probs[c] @ per)
    return WorldRisks(
        r_un=unsup_risk_direct(table), rbar_sup=rbar, rbar_sup_patterns=rbar_pat, r_sup=r_sup,
        r_sup_conditional=rbar_cond, min_term=min_total, max_term=max_total,
        tau=tau_K(world.prior, world.K), col=col_term(world.prior, world.K),
    )


def rbar_bound_check(world: DiscreteWorld, f: Embed) -> BoundCheck:
    """``Rbar_sup <= R_un + Min + 5 Max`` with every term exact."""
    r = world_risks(world, f)
    return BoundCheck(lhs=r.rbar_sup, rhs=r.rbar_rhs)


# -- random worlds ---------------------------------------------------------------

def unit_linear_encoder(W: np.ndarray) -> Embed:
    """``x -> Wx / ||Wx||`` on flattened inputs."""
    W = np.asarray(W, dtype=np.float64)

    def f(x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64).reshape(len(x), -1) @ W.T
        return h / np.linalg.norm(h, axis=1, keepdims=True)

    return f


def _linear_aug(M: np.ndarray) -> Aug:
    def aug(x: np.ndarray) -> np.ndarray:
        return M @ x
    return aug


def random_world(seed: int, C: int = 2, K: int = 2, n_img: int = 2, n_aug: int = 2, dim: int = 4,
                 aug_noise: float = 0.5, skew: float = 0.0) -> DiscreteWorld:
    """Random world: Gaussian images around class centres, identity plus random
    linear augmentations ``I + aug_noise * G``. ``skew > 0`` draws a Dirichlet
    prior with concentration ``1/skew`` instead of the uniform one."""
    rng = derive_rng(seed, STREAM_WORLD)
    prior = np.full(C, 1.0 / C) if skew <= 0 else rng.dirichlet(np.full(C, 1.0 / skew))
    prior = prior / prior.sum()
    centres = rng.normal(size=(C, dim))
    images = [centres[c] + 0.7 * rng.normal(size=(n_img, dim)) for c in range(C)]
    augs: list[Aug] = [_identity] + [_linear_aug(np.eye(dim) + aug_noise * rng.normal(size=(dim, dim)) / np.sqrt(dim))
                                      for _ in range(n_aug - 1)]
    aug_probs = rng.dirichlet(np.ones(n_aug))
    image_probs = [rng.dirichlet(np.ones(n_img)) for _ in range(C)]
    return DiscreteWorld(prior, images, augs, aug_probs, K, image_probs)


def random_encoder(seed: int, dim: int, out: int = 3) -> Embed:
    rng = derive_rng(seed, STREAM_WORLD, 1)
    return unit_linear_encoder(rng.normal(size=(out, dim)))


def constant_encoder(out: int = 3) -> Embed:
    e = np.zeros(out)
    e[0] = 1.0

    def f(x: np.ndarray) -> np.ndarray:
        return np.tile(e, (len(x), 1))

    return f
