"""Contrastive and supervised risks, collision statistics and a Rademacher term.

Encoders here are plain callables mapping a batch ``(n, ...)`` to feature rows
``(n, k)``. Classes are zero-based.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from ._seeding import STREAM_RISK, derive_rng

Embed = Callable[[np.ndarray], np.ndarray]

FORMS = ("softmax", "logistic")


# -- InfoNCE --------------------------------------------------------------

def infonce(z: np.ndarray, z_pos: np.ndarray, negatives: np.ndarray, form: str = "logistic") -> float:
    """InfoNCE of one anchor ``z`` against its positive and ``K`` negatives (rows)."""
    z = np.asarray(z, dtype=np.float64)
    z_pos = np.asarray(z_pos, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if z.ndim != 1 or z_pos.shape != z.shape or negatives.shape[1] != z.size:
        raise ValueError(f"dimension mismatch: anchor {z.shape}, positive {z_pos.shape}, negatives {negatives.shape}")
    return float(infonce_batch(z[None], z_pos[None], negatives[None], form)[0])


def infonce_batch(z: np.ndarray, z_pos: np.ndarray, negatives: np.ndarray, form: str = "logistic") -> np.ndarray:
    """Vectorised InfoNCE: ``z, z_pos`` are ``(n, k)``, ``negatives`` is ``(n, K, k)``."""
    s_pos = np.einsum("nk,nk->n", z, z_pos)
    s_neg = np.einsum("nk,njk->nj", z, negatives)
    if form == "softmax":
        scores = np.concatenate([s_pos[:, None], s_neg], axis=1)
        return logsumexp(scores, axis=1) - s_pos
    if form == "logistic":
        gaps = s_neg - s_pos[:, None]
        top = np.maximum(gaps.max(axis=1), 0.0)
        return top + np.log(np.exp(-top) + np.exp(gaps - top[:, None]).sum(axis=1))
    raise ValueError(f"form must be one of {FORMS}, got {form!r}")


@dataclass
class ContrastiveTuple:
    """Anchor ``a(x)``, positive ``a'(x)`` and negatives ``a_k(x_k)``."""

    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray

    def __post_init__(self) -> None:
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        self.positive = np.asarray(self.positive, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.negatives.ndim != self.anchor.ndim + 1 or self.negatives.shape[0] < 1:
            raise ValueError("negatives must stack at least one item shaped like the anchor")
        if self.positive.shape != self.anchor.shape or self.negatives.shape[1:] != self.anchor.shape:
            raise ValueError("anchor, positive and negatives must share a shape")

    @property
    def K(self) -> int:
        return self.negatives.shape[0]


def _encode(f: Embed | None, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if f is None:
        return x.reshape(x.shape[0], -1)
    return np.asarray(f(x), dtype=np.float64)


def encode_tuples(S: Sequence[ContrastiveTuple], f: Embed | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Encode a list of equal-K tuples into anchor, positive and negative arrays."""
    if len(S) == 0:
        raise ValueError("empty tuple list")
    K = S[0].K
    if any(t.K != K for t in S):
        raise ValueError("all tuples must have the same number of negatives")
    n = len(S)
    batch = np.concatenate([np.stack([t.anchor for t in S]), np.stack([t.positive for t in S]),
                            np.concatenate([t.negatives for t in S])])
    feats = _encode(f, batch)
    return feats[:n], feats[n:2 * n], feats[2 * n:].reshape(n, K, -1)


def empirical_unsup_risk(S: Sequence[ContrastiveTuple], f: Embed | None = None, form: str = "logistic") -> float:
    """Mean InfoNCE over the tuples after encoding (``f=None``: inputs are features)."""
    z, zp, zn = encode_tuples(S, f)
    return float(infonce_batch(z, zp, zn, form).mean())


class TupleSource(Protocol):
    """Generative process for contrastive tuples."""

    class_prior: np.ndarray

    def draw_image(self, c: int, rng: np.random.Generator) -> np.ndarray: ...

    def draw_view(self, img: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


def draw_tuple(source: TupleSource, K: int, rng: np.random.Generator) -> tuple[ContrastiveTuple, int, np.ndarray]:
    """One tuple in generation order: classes, anchor image, negative images, views.

    Returns the tuple, the anchor class and the negative classes.
    """
    pi = np.asarray(source.class_prior, dtype=np.float64)
    classes = rng.choice(pi.size, size=K + 1, p=pi)
    c, negs = int(classes[0]), classes[1:]
    x = source.draw_image(c, rng)
    xs = [source.draw_image(int(ck), rng) for ck in negs]
    anchor = source.draw_view(x, rng)
    positive = source.draw_view(x, rng)
    negatives = np.stack([source.draw_view(xk, rng) for xk in xs])
    return ContrastiveTuple(anchor, positive, negatives), c, negs


def population_unsup_risk_mc(source: TupleSource, f: Embed | None, n: int, K: int, seed: int = 0,
                             form: str = "logistic") -> tuple[float, float]:
    """Monte-Carlo population contrastive risk over ``n`` fresh tuples.

    Tuple ``j`` uses its own generator keyed by ``(seed, j)``. Returns the mean
    and its standard error.
    """
    if n < 1 or K < 1:
        raise ValueError("n and K must be >= 1")
    S = [draw_tuple(source, K, derive_rng(seed, STREAM_RISK, j))[0] for j in range(n)]
    z, zp, zn = encode_tuples(S, f)
    losses = infonce_batch(z, zp, zn, form)
    se = float(np.std(losses, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(losses.mean()), se


# -- mean classifier --------------------------------------------------------

@dataclass
class MeanClassifier:
    W: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def scores(self, feats: np.ndarray) -> np.ndarray:
        return np.asarray(feats, dtype=np.float64) @ self.W.T

    def predict(self, feats: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, so ties go to the lowest class id
        return np.argmax(self.scores(feats), axis=1)


def _split_labeled(labeled: Sequence[tuple[np.ndarray, int]]) -> tuple[np.ndarray, np.ndarray]:
    if len(labeled) == 0:
        raise ValueError("labeled set is empty")
    x = np.stack([np.asarray(img, dtype=np.float64) for img, _ in labeled])
    y = np.array([int(c) for _, c in labeled])
    return x, y


def mean_classifier(f: Embed | None, labeled: Sequence[tuple[np.ndarray, int]],
                    num_classes: int | None = None) -> MeanClassifier:
    """Rows are per-class means of ``f`` over the original images."""
    x, y = _split_labeled(labeled)
    C = int(y.max()) + 1 if num_classes is None else num_classes
    feats = _encode(f, x)
    rows = []
    for c in range(C):
        mask = y == c
        if not mask.any():
            raise ValueError(f"class {c} has no labeled images")
        rows.append(feats[mask].mean(axis=0))
    return MeanClassifier(np.stack(rows))


def sup_risk_terms(feats: np.ndarray, y: np.ndarray, W: MeanClassifier) -> np.ndarray:
    """Per-sample ``log(1 + sum_{c' != c} exp(-f(x).(mu_c - mu_c')))``."""
    s = W.scores(feats)
    gaps = s - s[np.arange(y.size), y][:, None]
    gaps[np.arange(y.size), y] = -np.inf
    return np.logaddexp(0.0, logsumexp(gaps, axis=1)) if W.num_classes > 1 else np.zeros(y.size)


def sup_risk(f: Embed | None, W: MeanClassifier, labeled: Sequence[tuple[np.ndarray, int]]) -> float:
    """Mean-classifier supervised risk, summing over all other classes."""
    x, y = _split_labeled(labeled)
    return float(sup_risk_terms(_encode(f, x), y, W).mean())


def _tuple_loss(g: np.ndarray, c: int, negs: np.ndarray, mu_scores: np.ndarray) -> float:
    gaps = mu_scores[negs] - mu_scores[c]
    return float(np.logaddexp(0.0, logsumexp(gaps)))


def intermediate_sup_risk(f: Embed | None, W: MeanClassifier, prior: np.ndarray, K: int, n_mc: int,
                          labeled: Sequence[tuple[np.ndarray, int]], seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of ``E_{c, c_k} E_x log(1 + sum_k exp(-f(x).(mu_c - mu_{c_k})))``.

    ``x`` is drawn uniformly from the labeled images of class ``c``. A negative
    class equal to ``c`` contributes ``exp(0) = 1``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    x, y = _split_labeled(labeled)
    feats = _encode(f, x)
    scores = W.scores(feats)
    pi = np.asarray(prior, dtype=np.float64)
    by_class = [np.flatnonzero(y == c) for c in range(pi.size)]
    losses = np.empty(n_mc)
    for j in range(n_mc):
        rng = derive_rng(seed, STREAM_RISK, j)
        classes = rng.choice(pi.size, size=K + 1, p=pi)
        c = int(classes[0])
        if by_class[c].size == 0:
            raise ValueError(f"class {c} has no labeled images")
        i = int(rng.choice(by_class[c]))
        losses[j] = _tuple_loss(feats[i], c, classes[1:], scores[i])
    se = float(np.std(losses, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    return float(losses.mean()), se


def _neg_class_tuples(C: int, K: int, max_tuples: int = 10**6):
    if C**K > max_tuples:
        raise ValueError(f"{C}^{K} class tuples exceed the enumeration limit {max_tuples}")
    return np.array(list(itertools.product(range(C), repeat=K)), dtype=np.int64).reshape(-1, K)


def intermediate_sup_risk_exact(scores_by_class: Sequence[np.ndarray], prior: np.ndarray, K: int,
                                conditional: bool = False,
                                weights_by_class: Sequence[np.ndarray] | None = None) -> float:
    """Exact intermediate supervised risk by enumerating every negative-class tuple.

    ``scores_by_class[c]`` holds the rows ``f(x) . mu_c'`` (shape ``(n_c, C)``)
    for the images of class ``c``, weighted by ``weights_by_class[c]`` (equal
    weights by default). With
    ``conditional=True`` the expectation is restricted to tuples in which no
    negative class equals ``c`` (the distinct-class task), renormalised.
    """
    pi = np.asarray(prior, dtype=np.float64)
    C = pi.size
    tuples = _neg_class_tuples(C, K)
    log_p = np.log(pi, where=pi > 0, out=np.full(C, -np.inf))
    tuple_p = np.exp(log_p[tuples].sum(axis=1))
    total = 0.0
    mass = 0.0
    for c in range(C):
        if pi[c] == 0:
            continue
        s = np.asarray(scores_by_class[c], dtype=np.float64)
        p = tuple_p.copy()
        if conditional:
            p[np.any(tuples == c, axis=1)] = 0.0
        gaps = s[:, tuples] - s[:, c][:, None, None]          # (n_c, tuples, K)
        w = np.full(len(s), 1.0 / len(s)) if weights_by_class is None else np.asarray(weights_by_class[c], float)
        loss = w @ np.logaddexp(0.0, logsumexp(gaps, axis=2))
        total += pi[c] * float(loss @ p)
        mass += pi[c] * float(p.sum())
    if conditional:
        if mass == 0:
            return float("nan")
        return total / mass
    return total


# -- collision statistics ---------------------------------------------------

def _check_prior(pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1 or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise ValueError("prior must be a non-negative vector summing to 1")
    return pi


def tau_K(prior: np.ndarray, K: int) -> float:
    """Probability that at least one of ``K`` negatives shares the anchor class."""
    if K < 1:
        raise ValueError("K must be >= 1")
    pi = _check_prior(prior)
    return float(1.0 - np.sum(pi * (1.0 - pi) ** K))


def col_term(prior: np.ndarray, K: int) -> float:
    """``E log(Col + 1)`` where ``Col`` counts negatives sharing the anchor class."""
    if K < 1:
        raise ValueError("K must be >= 1")
    pi = _check_prior(prior)
    j = np.arange(K + 1)
    log_binom = gammaln(K + 1) - gammaln(j + 1) - gammaln(K - j + 1)
    out = 0.0
    for p in pi:
        if p == 0:
            continue
        if p == 1:
            out += math.log(K + 1)
            continue
        w = np.exp(log_binom + j * np.log(p) + (K - j) * np.log1p(-p))
        out += p * float(w @ np.log(j + 1))
    return out


# -- Rademacher term ----------------------------------------------------------

def rademacher_linear(S: Sequence[ContrastiveTuple], W_max: float, d_out: int, n_sign_draws: int = 200,
                      seed: int = 0) -> tuple[float, float]:
    """Empirical Rademacher complexity of ``{x -> Wx : ||W||_F <= W_max}`` on ``S``.

    For fixed signs the supremum is ``W_max * ||M||_F`` where row ``t`` of ``M``
    is ``sum_{j,k} (e_{jkt1} x_j + e_{jkt2} x'_j + e_{jkt3} x_{jk})``. The
    expectation over signs is Monte Carlo; returns mean and standard error.
    """
    if len(S) == 0:
        raise ValueError("empty tuple list")
    if n_sign_draws < 1:
        raise ValueError("n_sign_draws must be >= 1")
    n, K = len(S), S[0].K
    X = np.stack([t.anchor.ravel() for t in S])
    Xp = np.stack([t.positive.ravel() for t in S])
    Xn = np.stack([t.negatives.reshape(K, -1) for t in S])            # (n, K, p)
    vals = np.empty(n_sign_draws)
    for r in range(n_sign_draws):
        eps = derive_rng(seed, STREAM_RISK, r).choice([-1.0, 1.0], size=(n, K, d_out, 3))
        M = (np.einsum("jkt,jp->tp", eps[..., 0], X) + np.einsum("jkt,jp->tp", eps[..., 1], Xp)
             + np.einsum("jkt,jkp->tp", eps[..., 2], Xn))
        vals[r] = W_max * np.linalg.norm(M)
    se = float(np.std(vals, ddof=1) / np.sqrt(n_sign_draws)) if n_sign_draws > 1 else 0.0
    return float(vals.mean()), se


def default_loss_bound(K: int, R: float = 1.0) -> float:
    """Bound on InfoNCE when every feature has norm at most ``R``."""
    return float(math.log1p(K * math.exp(2.0 * R * R)))
