"""Augmentation operators and the augmentation distribution.

Images are treated as functions on the unit square, pixel ``(j, l)`` covering
``[j/d, (j+1)/d) x [l/d, (l+1)/d)``. A crop with scale ``theta`` and offsets
``(tau, tau2)`` reads the window ``[tau, tau+theta] x [tau2, tau2+theta]`` and
resizes it back to ``d x d`` with bilinear interpolation (nearest neighbour for
label maps). Windows leaving the frame are shifted back inside it, and the
scale is floored at one pixel, ``1/d``.

All operators act on batches; the single-image functions are batches of one,
so replaying a recorded :class:`Augmentation` is bit-exact either way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

UNIFORMS_PER_VIEW = 9
# the experiments give no value for the gain bound; it must exceed 1 for
# brightness to be able to push views apart
DEFAULT_BRIGHTNESS = 1.2


@dataclass(frozen=True)
class CropParams:
    scale: float
    tau: float = 0.0
    tau2: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"crop scale must lie in (0, 1], got {self.scale}")
        if not (0.0 <= self.tau <= 1.0 and 0.0 <= self.tau2 <= 1.0):
            raise ValueError(f"crop offsets must lie in [0, 1], got {(self.tau, self.tau2)}")


@dataclass(frozen=True)
class ColorParams:
    gains: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.gains) != 3 or min(self.gains) <= 0:
            raise ValueError(f"need three positive channel gains, got {self.gains}")


@dataclass(frozen=True)
class Augmentation:
    """One sampled transform. Fields left at their defaults are not applied,
    so ``Augmentation()`` is the identity. Order of application is fixed:
    crop, flip, color, gray."""

    crop: CropParams | None = None
    flip: bool = False
    color: ColorParams | None = None
    gray: bool = False

    @property
    def is_identity(self) -> bool:
        return self.crop is None and not self.flip and self.color is None and not self.gray

    @property
    def transforms(self) -> list[tuple[str, Any]]:
        out: list[tuple[str, Any]] = []
        if self.crop is not None:
            out.append(("crop", self.crop))
        if self.flip:
            out.append(("flip", None))
        if self.color is not None:
            out.append(("color", self.color))
        if self.gray:
            out.append(("gray", None))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "crop": None if self.crop is None else [self.crop.scale, self.crop.tau, self.crop.tau2],
            "flip": self.flip,
            "color": None if self.color is None else list(self.color.gains),
            "gray": self.gray,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Augmentation":
        crop = None if d.get("crop") is None else CropParams(*d["crop"])
        color = None if d.get("color") is None else ColorParams(tuple(d["color"]))
        return cls(crop=crop, flip=bool(d.get("flip", False)), color=color, gray=bool(d.get("gray", False)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


IDENTITY = Augmentation()


@dataclass
class AugDistribution:
    """Random resized crop (always), then flip, brightness and grayscale each
    applied independently with their probabilities.

    ``crop_scale = (lo, hi)`` draws the scale from ``Unif(lo, hi]``; gains are
    ``Unif(0, brightness]`` per channel.
    """

    crop_scale: tuple[float, float] = (0.2, 1.0)
    brightness: float = DEFAULT_BRIGHTNESS
    flip_prob: float = 0.5
    color_prob: float = 0.8
    gray_prob: float = 0.2
    fixed_offset: bool = field(default=False)

    def __post_init__(self) -> None:
        self.crop_scale = (float(self.crop_scale[0]), float(self.crop_scale[1]))
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if self.brightness <= 0:
            raise ValueError(f"brightness bound must be positive, got {self.brightness}")
        for name in ("flip_prob", "color_prob", "gray_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @classmethod
    def identity(cls) -> "AugDistribution":
        """Every draw is an exact identity (full-frame crop, nothing else)."""
        return cls(crop_scale=(1.0, 1.0), flip_prob=0.0, color_prob=0.0, gray_prob=0.0, fixed_offset=True)

    def replace(self, **changes: Any) -> "AugDistribution":
        d = self.to_dict()
        d.update(changes)
        return AugDistribution.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "crop_scale": list(self.crop_scale),
            "brightness": self.brightness,
            "flip_prob": self.flip_prob,
            "color_prob": self.color_prob,
            "gray_prob": self.gray_prob,
            "fixed_offset": self.fixed_offset,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AugDistribution":
        return cls(
            crop_scale=tuple(d.get("crop_scale", (0.2, 1.0))),
            brightness=float(d.get("brightness", DEFAULT_BRIGHTNESS)),
            flip_prob=float(d.get("flip_prob", 0.5)),
            color_prob=float(d.get("color_prob", 0.8)),
            gray_prob=float(d.get("gray_prob", 0.2)),
            fixed_offset=bool(d.get("fixed_offset", False)),
        )


def _from_uniforms(dist: AugDistribution, u: np.ndarray) -> Augmentation:
    lo, hi = dist.crop_scale
    theta = hi - u[0] * (hi - lo)
    # window position uniform over the admissible range, so it never leaves the frame
    tau, tau2 = (0.0, 0.0) if dist.fixed_offset else (float(u[1] * (1.0 - theta)), float(u[2] * (1.0 - theta)))
    color = None
    if u[4] < dist.color_prob:
        color = ColorParams(tuple(float(g) for g in dist.brightness * (1.0 - u[5:8])))
    return Augmentation(
        crop=CropParams(float(theta), tau, tau2),
        flip=bool(u[3] < dist.flip_prob),
        color=color,
        gray=bool(u[8] < dist.gray_prob),
    )


def sample_augmentations(dist: AugDistribution, rng: np.random.Generator, n: int) -> list[Augmentation]:
    """Draw ``n`` augmentations. Each draw consumes a fixed block of uniforms,
    so the first ``m`` of ``n`` draws equal an ``m``-draw call on the same
    generator state."""
    u = rng.random((n, UNIFORMS_PER_VIEW))
    return [_from_uniforms(dist, row) for row in u]


def sample_augmentation(dist: AugDistribution, rng: np.random.Generator) -> Augmentation:
    return sample_augmentations(dist, rng, 1)[0]


# -- geometry ------------------------------------------------------------------

def _window(scale: np.ndarray, tau: np.ndarray, side: int) -> tuple[np.ndarray, np.ndarray]:
    scale = np.clip(scale, 1.0 / side, 1.0)
    tau = np.minimum(tau, 1.0 - scale)
    return scale, tau


def _source_coords(scale: np.ndarray, tau: np.ndarray, side: int) -> np.ndarray:
    """Continuous source coordinate (pixel units) of each output pixel centre."""
    scale, tau = _window(scale, tau, side)
    centres = np.arange(side, dtype=np.float64) + 0.5
    return tau[:, None] * side + scale[:, None] * centres[None, :]


def _bilinear_axis(imgs: np.ndarray, pos: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation along ``axis`` (1 = rows, 2 = cols) at per-image
    positions ``pos`` of shape ``(n, d)`` given in pixel-centre units."""
    d = imgs.shape[axis]
    pos = np.clip(pos, 0.0, d - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, d - 1)
    t = pos - i0
    shape = [imgs.shape[0], 1, 1, 1]
    shape[axis] = d
    i0, i1, t = i0.reshape(shape), i1.reshape(shape), t.reshape(shape)
    lo = np.take_along_axis(imgs, i0, axis=axis)
    hi = np.take_along_axis(imgs, i1, axis=axis)
    return (1.0 - t) * lo + t * hi


def crop_batch(imgs: np.ndarray, scale: np.ndarray, tau: np.ndarray, tau2: np.ndarray) -> np.ndarray:
    side = imgs.shape[1]
    rows = _source_coords(np.asarray(scale, float), np.asarray(tau, float), side) - 0.5
    cols = _source_coords(np.asarray(scale, float), np.asarray(tau2, float), side) - 0.5
    return _bilinear_axis(_bilinear_axis(imgs, rows, 1), cols, 2)


def crop_labels_batch(labels: np.ndarray, scale: np.ndarray, tau: np.ndarray, tau2: np.ndarray) -> np.ndarray:
    n, side = labels.shape[0], labels.shape[1]
    rows = np.clip(np.floor(_source_coords(np.asarray(scale, float), np.asarray(tau, float), side)), 0, side - 1)
    cols = np.clip(np.floor(_source_coords(np.asarray(scale, float), np.asarray(tau2, float), side)), 0, side - 1)
    rows, cols = rows.astype(np.intp), cols.astype(np.intp)
    return labels[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]


def _params(augs: Sequence[Augmentation]) -> dict[str, np.ndarray]:
    n = len(augs)
    scale, tau, tau2 = np.ones(n), np.zeros(n), np.zeros(n)
    gains = np.ones((n, 3))
    flip = np.zeros(n, dtype=bool)
    gray = np.zeros(n, dtype=bool)
    for i, a in enumerate(augs):
        if a.crop is not None:
            scale[i], tau[i], tau2[i] = a.crop.scale, a.crop.tau, a.crop.tau2
        if a.color is not None:
            gains[i] = a.color.gains
        flip[i], gray[i] = a.flip, a.gray
    return {"scale": scale, "tau": tau, "tau2": tau2, "gains": gains, "flip": flip, "gray": gray}


def apply_batch(imgs: np.ndarray, augs: Sequence[Augmentation]) -> np.ndarray:
    """Apply ``augs[i]`` to ``imgs[i]``; ``imgs`` may also be a single image,
    which is then broadcast to every augmentation."""
    imgs = np.asarray(imgs, dtype=np.float64)
    if imgs.ndim == 3:
        imgs = np.broadcast_to(imgs, (len(augs),) + imgs.shape)
    if imgs.shape[0] != len(augs):
        raise ValueError(f"{imgs.shape[0]} images for {len(augs)} augmentations")
    p = _params(augs)
    out = crop_batch(imgs, p["scale"], p["tau"], p["tau2"])
    out = np.where(p["flip"][:, None, None, None], out[:, :, ::-1, :], out)
    out = out * p["gains"][:, None, None, :]
    grey = np.broadcast_to(out.mean(axis=-1, keepdims=True), out.shape)
    return np.where(p["gray"][:, None, None, None], grey, out)


def apply_labels_batch(labels: np.ndarray, augs: Sequence[Augmentation]) -> np.ndarray:
    """Geometric part (crop, flip) of each augmentation applied to label maps."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = np.broadcast_to(labels, (len(augs),) + labels.shape)
    p = _params(augs)
    out = crop_labels_batch(labels, p["scale"], p["tau"], p["tau2"])
    return np.where(p["flip"][:, None, None], out[:, :, ::-1], out)


def apply(aug: Augmentation, img: np.ndarray) -> np.ndarray:
    return apply_batch(img[None], [aug])[0]


def apply_crop(img: np.ndarray, p: CropParams) -> np.ndarray:
    return apply(Augmentation(crop=p), img)


def apply_color(img: np.ndarray, p: ColorParams) -> np.ndarray:
    return apply(Augmentation(color=p), img)


def apply_flip(img: np.ndarray) -> np.ndarray:
    return apply(Augmentation(flip=True), img)


def apply_gray(img: np.ndarray) -> np.ndarray:
    return apply(Augmentation(gray=True), img)


def crop_semantic_map(labels: np.ndarray, p: CropParams) -> np.ndarray:
    return apply_labels_batch(labels[None], [Augmentation(crop=p)])[0]


def label_stats(labels: np.ndarray) -> tuple[tuple[int, ...], int]:
    """Semantics present in a label map and the number of pixels that differ
    from the majority semantic."""
    ids, counts = np.unique(labels, return_counts=True)
    return tuple(int(i) for i in ids), int(labels.size - counts.max())
