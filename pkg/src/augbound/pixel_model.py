"""Synthetic images drawn from a class-conditional semantic-label model.

An image is a ``(d, d, 3)`` float64 array of non-negative intensities. Each
pixel carries a semantic label; which semantics appear depends on the class,
and pixel values are drawn per semantic and channel from a Gaussian truncated
at zero.

Indexing is zero-based throughout: classes are ``0..C-1`` and semantics are
``0..T-1`` with ``T-1`` the background, which is present in every image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from ._seeding import STREAM_DATASET, derive_rng

PRIOR_TOL = 1e-12


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] != img.shape[1]:
        raise ValueError(f"image must have shape (d, d, 3), got {img.shape}")
    if img.shape[0] < 2:
        raise ValueError(f"image side must be >= 2, got {img.shape[0]}")
    if np.any(img < 0) or not np.all(np.isfinite(img)):
        raise ValueError("image pixels must be finite and non-negative")
    return img


@dataclass
class GenerativeConfig:
    """Parameters of the semantic-label pixel model.

    Parameters
    ----------
    class_prior : (C,) array
        Class probabilities, summing to one.
    semantic_prob : (C, T) array
        ``semantic_prob[y, t]`` is the probability that semantic ``t`` is
        present in an image of class ``y``. The last column is the background
        and must be all ones.
    channel_mean, channel_std : (T, 3) arrays
        Location and scale of the per-channel pixel law of each semantic.
    side : int
        Image side length ``d``.
    """

    class_prior: np.ndarray
    semantic_prob: np.ndarray
    channel_mean: np.ndarray
    channel_std: np.ndarray
    side: int = 8

    def __post_init__(self) -> None:
        self.class_prior = np.asarray(self.class_prior, dtype=np.float64)
        self.semantic_prob = np.atleast_2d(np.asarray(self.semantic_prob, dtype=np.float64))
        self.channel_mean = np.atleast_2d(np.asarray(self.channel_mean, dtype=np.float64))
        self.channel_std = np.atleast_2d(np.asarray(self.channel_std, dtype=np.float64))
        self.side = int(self.side)
        self.validate()

    @property
    def num_classes(self) -> int:
        return self.class_prior.shape[0]

    @property
    def num_semantics(self) -> int:
        return self.semantic_prob.shape[1]

    @property
    def background(self) -> int:
        return self.num_semantics - 1

    def validate(self) -> None:
        pi, q = self.class_prior, self.semantic_prob
        if pi.ndim != 1 or pi.size == 0:
            raise ValueError("class_prior must be a non-empty vector")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > PRIOR_TOL:
            raise ValueError(f"class_prior must be non-negative and sum to 1, got sum {pi.sum()!r}")
        if q.shape[0] != pi.size:
            raise ValueError(f"semantic_prob must have {pi.size} rows, got {q.shape[0]}")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("semantic_prob entries must lie in [0, 1]")
        if not np.all(q[:, -1] == 1.0):
            raise ValueError("background column of semantic_prob (last) must be 1")
        T = q.shape[1]
        for name, arr in (("channel_mean", self.channel_mean), ("channel_std", self.channel_std)):
            if arr.shape != (T, 3):
                raise ValueError(f"{name} must have shape ({T}, 3), got {arr.shape}")
            if np.any(arr < 0):
                raise ValueError(f"{name} entries must be non-negative")
        if self.side < 2:
            raise ValueError(f"side must be >= 2, got {self.side}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "class_prior": self.class_prior.tolist(),
            "semantic_prob": self.semantic_prob.tolist(),
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
            "side": self.side,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GenerativeConfig":
        return cls(
            class_prior=d["class_prior"],
            semantic_prob=d["semantic_prob"],
            channel_mean=d["channel_mean"],
            channel_std=d["channel_std"],
            side=d.get("side", 8),
        )


@dataclass
class SemanticImage:
    image: np.ndarray
    labels: np.ndarray
    class_label: int
    cells: list[tuple[int, int, int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.image.shape[:2] != self.labels.shape:
            raise ValueError("image and label map sides differ")

    @property
    def side(self) -> int:
        return self.labels.shape[0]


def guillotine_partition(side: int, n_cells: int, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    """Split the ``side x side`` grid into ``n_cells`` axis-aligned rectangles.

    Cells are ``(row0, row1, col0, col1)`` half-open boxes. At each step a cell
    is picked with probability proportional to its area (among cells with more
    than one pixel) and cut at a uniform interior position along a random axis.
    """
    if not 1 <= n_cells <= side * side:
        raise ValueError(f"cannot split a {side}x{side} grid into {n_cells} cells")
    cells = [(0, side, 0, side)]
    while len(cells) < n_cells:
        areas = np.array([(r1 - r0) * (c1 - c0) for r0, r1, c0, c1 in cells], dtype=np.float64)
        areas[areas <= 1] = 0.0
        idx = int(rng.choice(len(cells), p=areas / areas.sum()))
        r0, r1, c0, c1 = cells.pop(idx)
        h, w = r1 - r0, c1 - c0
        split_rows = w == 1 or (h > 1 and rng.random() < h / (h + w))
        if split_rows:
            cut = r0 + int(rng.integers(1, h))
            cells += [(r0, cut, c0, c1), (cut, r1, c0, c1)]
        else:
            cut = c0 + int(rng.integers(1, w))
            cells += [(r0, r1, c0, cut), (r0, r1, cut, c1)]
    return cells


def _draw_pixels(mean: np.ndarray, std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = mean.copy()
    noisy = std > 0
    if np.any(noisy):
        loc, scale = mean[noisy], std[noisy]
        out[noisy] = stats.truncnorm.rvs(-loc / scale, np.inf, loc=loc, scale=scale, random_state=rng)
    return out


def sample_semantic_image(config: GenerativeConfig, c: int, rng: np.random.Generator) -> SemanticImage:
    """Draw one image of class ``c``: active semantics, partition, then pixels."""
    if not 0 <= c < config.num_classes:
        raise ValueError(f"class label {c} outside [0, {config.num_classes})")
    d = config.side
    active = np.flatnonzero(rng.random(config.num_semantics) < config.semantic_prob[c])
    # background has probability one, so ``active`` is never empty
    cells = guillotine_partition(d, active.size, rng)
    order = rng.permutation(active)
    labels = np.empty((d, d), dtype=np.int64)
    for (r0, r1, c0, c1), s in zip(cells, order):
        labels[r0:r1, c0:c1] = s
    img = _draw_pixels(config.channel_mean[labels], config.channel_std[labels], rng)
    return SemanticImage(image=img, labels=labels, class_label=int(c), cells=list(zip(cells, order.tolist())))


def sample_dataset(config: GenerativeConfig, per_class: int, seed: int) -> list[SemanticImage]:
    """Balanced dataset with ``per_class`` images of each class, class-major order."""
    return [
        sample_semantic_image(config, c, derive_rng(seed, STREAM_DATASET, c, i))
        for c in range(config.num_classes)
        for i in range(per_class)
    ]


def analytic_sigma(config: GenerativeConfig, s: int, side: int | None = None) -> float:
    """Whole-image noise scale ``[d^2 * sum_i std_i^2]^(1/2)`` of semantic ``s``."""
    d = config.side if side is None else side
    return float(d * np.sqrt(np.sum(config.channel_std[s] ** 2)))


def analytic_delta_mu(config: GenerativeConfig, s: int, s2: int) -> float:
    return float(np.linalg.norm(config.channel_mean[s] - config.channel_mean[s2]))


def truncated_moments(config: GenerativeConfig, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Actual per-channel mean and std of semantic ``s`` after truncation at zero."""
    mu, sd = config.channel_mean[s], config.channel_std[s]
    mean, std = mu.copy(), np.zeros(3)
    pos = sd > 0
    if np.any(pos):
        dist = stats.truncnorm(-mu[pos] / sd[pos], np.inf, loc=mu[pos], scale=sd[pos])
        mean[pos] = dist.mean()
        std[pos] = dist.std()
    return mean, std


def toy_config(num_classes: int = 4, side: int = 16, noise: float = 0.02) -> GenerativeConfig:
    """A small config used by the experiments: one private semantic per class,
    one semantic shared by all classes, and a dark background. Objects are
    bright against the background so that where a crop lands matters."""
    T = num_classes + 2
    q = np.zeros((num_classes, T))
    for c in range(num_classes):
        q[c, c] = 0.9
        q[c, (c + 1) % num_classes] = 0.25
        q[c, num_classes] = 0.5
    q[:, -1] = 1.0
    hues = 1.2 * np.array([[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.2, 0.3, 0.9], [0.8, 0.8, 0.2],
                           [0.7, 0.3, 0.8], [0.2, 0.8, 0.8], [0.9, 0.6, 0.3], [0.5, 0.5, 0.9]])
    means = np.vstack([hues[np.arange(num_classes) % len(hues)], [[0.55, 0.55, 0.55]], [[0.05, 0.05, 0.05]]])
    return GenerativeConfig(
        class_prior=np.full(num_classes, 1.0 / num_classes),
        semantic_prob=q,
        channel_mean=means,
        channel_std=np.full((T, 3), noise),
        side=side,
    )


# -- export ----------------------------------------------------------------

def to_float32_bytes(img: np.ndarray) -> bytes:
    """Row-major little-endian float32 dump of an image."""
    return np.ascontiguousarray(img, dtype="<f4").tobytes()


def from_float32_bytes(buf: bytes, side: int) -> np.ndarray:
    return np.frombuffer(buf, dtype="<f4").reshape(side, side, 3).astype(np.float64)


def write_ppm(path: str | Path, img: np.ndarray, vmax: float | None = None) -> None:
    """Binary PPM (P6). Intensities are scaled by ``vmax`` (default: image max)."""
    vmax = float(img.max()) if vmax is None else vmax
    scaled = np.clip(img / vmax if vmax > 0 else img, 0.0, 1.0)
    data = np.round(scaled * 255).astype(np.uint8)
    d = img.shape[0]
    Path(path).write_bytes(f"P6\n{d} {d}\n255\n".encode() + data.tobytes())


def write_pgm(path: str | Path, labels: np.ndarray) -> None:
    """Binary PGM (P5) of a label map, ids spread over the grey range."""
    top = max(int(labels.max()), 1)
    data = (labels * (255 // top)).astype(np.uint8)
    h, w = labels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())
