"""Experiment configuration: a single JSON document, validated field by field.

Errors name the offending field by its dotted path, e.g. ``sweeps[0].values[2]``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..augment import AugDistribution
from ..encoder import ARCHS, TrainConfig
from ..pixel_model import GenerativeConfig, toy_config

KINDS = ("pixel-distances", "repr-distances", "bound-report", "decomp-check", "train-sweep")
SWEEP_PARAMS = ("crop_min", "color_prob")
# desk-scale training defaults
DEFAULT_TRAIN = {"lr": 2.0, "epochs": 100, "K": 4, "batch_size": 32}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _get(d: dict[str, Any], key: str, path: str, kind: type | tuple[type, ...], default: Any = ...) -> Any:
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}".lstrip("."), "missing required field")
        return default
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    ok = isinstance(v, kind) and not (isinstance(v, bool) and kind in (int, float, (int, float)))
    if not ok:
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}.{key}".lstrip("."), f"expected {name}, got {type(v).__name__}")
    return v


def _positive_int(d: dict[str, Any], key: str, path: str, default: int, minimum: int = 1) -> int:
    v = _get(d, key, path, int, default)
    if v < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {v}")
    return v


@dataclass
class Sweep:
    param: str
    values: list[float]

    def distribution(self, base: AugDistribution, value: float) -> AugDistribution:
        if self.param == "crop_min":
            return base.replace(crop_scale=[value, base.crop_scale[1]])
        return base.replace(color_prob=value)


@dataclass
class EncoderSpec:
    arch: str = "mlp1"
    out_dim: int = 16
    hidden: int = 32


@dataclass
class WorldSpec:
    """Random discrete worlds. Size fields are inclusive ``[lo, hi]`` ranges;
    a single integer in the config fixes the value."""

    num_worlds: int = 20
    classes: tuple[int, int] = (2, 3)
    K: tuple[int, int] = (1, 3)
    images: tuple[int, int] = (1, 3)
    augs: tuple[int, int] = (2, 3)
    dim: int = 4
    aug_noise: float = 0.5
    skew: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        for key in RANGE_FIELDS:
            d[key] = list(d[key])
        return d


RANGE_FIELDS = ("classes", "K", "images", "augs")
RANGE_MIN = {"classes": 1, "K": 1, "images": 1, "augs": 1}


@dataclass
class ExperimentConfig:
    kind: str
    generative: GenerativeConfig
    augment: AugDistribution
    sweeps: list[Sweep]
    seed: int = 0
    per_class: int = 32
    test_per_class: int = 32
    m_a: int = 8
    m_c: int = 16
    K: int = 4
    n_risk: int = 512
    probe_epochs: int = 100
    probe_lr: float = 1.0
    fresh_data: bool = True
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    world: WorldSpec = field(default_factory=WorldSpec)
    delta: float = 0.05
    embeddings: str | None = None
    raw: dict[str, Any] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "generative": self.generative.to_dict(),
            "augment": self.augment.to_dict(),
            "sweeps": [{"param": s.param, "values": list(s.values)} for s in self.sweeps],
            "seed": self.seed,
            "per_class": self.per_class,
            "test_per_class": self.test_per_class,
            "m_a": self.m_a,
            "m_c": self.m_c,
            "K": self.K,
            "n_risk": self.n_risk,
            "probe_epochs": self.probe_epochs,
            "probe_lr": self.probe_lr,
            "fresh_data": self.fresh_data,
            "encoder": dict(self.encoder.__dict__),
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
            "world": self.world.to_dict(),
            "delta": self.delta,
            "embeddings": self.embeddings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _parse_generative(d: Any) -> GenerativeConfig:
    if d is None:
        return toy_config()
    if not isinstance(d, dict):
        raise ConfigError("generative", "expected an object")
    if "toy" in d:
        t = d["toy"]
        if not isinstance(t, dict):
            raise ConfigError("generative.toy", "expected an object")
        return toy_config(
            num_classes=_positive_int(t, "num_classes", "generative.toy", 4, 2),
            side=_positive_int(t, "side", "generative.toy", 16, 2),
            noise=_get(t, "noise", "generative.toy", float, 0.02),
        )
    try:
        return GenerativeConfig.from_dict(d)
    except KeyError as exc:
        raise ConfigError(f"generative.{exc.args[0]}", "missing required field") from None
    except ValueError as exc:
        raise ConfigError("generative", str(exc)) from None


def _parse_augment(d: Any) -> AugDistribution:
    if d is None:
        return AugDistribution()
    if not isinstance(d, dict):
        raise ConfigError("augment", "expected an object")
    known = set(AugDistribution().to_dict())
    for key in d:
        if key not in known:
            raise ConfigError(f"augment.{key}", "unknown field")
    cs = d.get("crop_scale", [0.2, 1.0])
    if not (isinstance(cs, list) and len(cs) == 2 and all(isinstance(x, (int, float)) for x in cs)):
        raise ConfigError("augment.crop_scale", "expected a [lo, hi] pair of numbers")
    try:
        return AugDistribution.from_dict(d)
    except ValueError as exc:
        raise ConfigError("augment", str(exc)) from None


def _parse_sweeps(d: Any, kind: str) -> list[Sweep]:
    if d is None:
        if kind in ("decomp-check", "bound-report"):
            return []
        raise ConfigError("sweeps", "missing required field")
    if not isinstance(d, list):
        raise ConfigError("sweeps", "expected a list")
    out = []
    for i, s in enumerate(d):
        path = f"sweeps[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(path, "expected an object")
        param = _get(s, "param", path, str)
        if param not in SWEEP_PARAMS:
            raise ConfigError(f"{path}.param", f"must be one of {SWEEP_PARAMS}, got {param!r}")
        values = _get(s, "values", path, list)
        if not values:
            raise ConfigError(f"{path}.values", "sweep list must be non-empty")
        vals = []
        for j, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}.values[{j}]", "expected a number")
            if param == "crop_min" and not 0.0 < v <= 1.0:
                raise ConfigError(f"{path}.values[{j}]", f"crop scale must lie in (0, 1], got {v}")
            if param == "color_prob" and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{path}.values[{j}]", f"probability must lie in [0, 1], got {v}")
            vals.append(float(v))
        out.append(Sweep(param, vals))
    if kind in ("pixel-distances", "repr-distances", "train-sweep") and not out:
        raise ConfigError("sweeps", "sweep list must be non-empty")
    return out


def _parse_train(d: Any) -> TrainConfig:
    if d is None:
        return TrainConfig(**DEFAULT_TRAIN)
    if not isinstance(d, dict):
        raise ConfigError("train", "expected an object")
    known = set(TrainConfig().to_dict()) - {"seed"}
    for key in d:
        if key == "seed":
            raise ConfigError("train.seed", "training is seeded from the top-level seed")
        if key not in known:
            raise ConfigError(f"train.{key}", "unknown field")
    try:
        return TrainConfig(**{**DEFAULT_TRAIN, **d})
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None


def _parse_encoder(d: Any) -> EncoderSpec:
    if d is None:
        return EncoderSpec()
    if not isinstance(d, dict):
        raise ConfigError("encoder", "expected an object")
    arch = _get(d, "arch", "encoder", str, "mlp1")
    if arch not in ARCHS:
        raise ConfigError("encoder.arch", f"must be one of {ARCHS}, got {arch!r}")
    return EncoderSpec(arch, _positive_int(d, "out_dim", "encoder", 16), _positive_int(d, "hidden", "encoder", 32))


def _parse_range(v: Any, path: str, minimum: int) -> tuple[int, int]:
    if isinstance(v, int) and not isinstance(v, bool):
        lo = hi = v
    elif (isinstance(v, list) and len(v) == 2
          and all(isinstance(x, int) and not isinstance(x, bool) for x in v)):
        lo, hi = v
    else:
        raise ConfigError(path, "expected an integer or an [lo, hi] pair of integers")
    if lo < minimum or hi < lo:
        raise ConfigError(path, f"need {minimum} <= lo <= hi, got [{lo}, {hi}]")
    return lo, hi


def _parse_world(d: Any) -> WorldSpec:
    if d is None:
        return WorldSpec()
    if not isinstance(d, dict):
        raise ConfigError("world", "expected an object")
    w = WorldSpec()
    for key in d:
        if key not in w.__dict__:
            raise ConfigError(f"world.{key}", "unknown field")
    w.num_worlds = _positive_int(d, "num_worlds", "world", w.num_worlds)
    w.dim = _positive_int(d, "dim", "world", w.dim)
    for key in RANGE_FIELDS:
        if key in d:
            setattr(w, key, _parse_range(d[key], f"world.{key}", RANGE_MIN[key]))
    if w.augs[0] < 1:
        raise ConfigError("world.augs", "need at least the identity")
    for key in ("aug_noise", "skew"):
        v = _get(d, key, "world", float, getattr(w, key))
        if v < 0:
            raise ConfigError(f"world.{key}", "must be >= 0")
        setattr(w, key, v)
    return w


TOP_LEVEL = {"kind", "generative", "augment", "sweeps", "seed", "per_class", "test_per_class", "m_a", "m_c", "K",
             "n_risk", "probe_epochs", "probe_lr", "fresh_data", "encoder", "train", "world", "delta", "embeddings"}


def parse_config(d: Any, kind: str | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a decoded JSON object.

    ``kind`` (from the command line) fills in or must match ``d["kind"]``.
    """
    if not isinstance(d, dict):
        raise ConfigError("", "config must be a JSON object")
    for key in d:
        if key not in TOP_LEVEL:
            raise ConfigError(key, "unknown field")
    k = d.get("kind", kind)
    if k is None:
        raise ConfigError("kind", "missing required field")
    if k not in KINDS:
        raise ConfigError("kind", f"must be one of {KINDS}, got {k!r}")
    if kind is not None and k != kind:
        raise ConfigError("kind", f"config is for {k!r} but the command is {kind!r}")
    seed = _get(d, "seed", "", int, 0)
    if seed < 0:
        raise ConfigError("seed", "must be >= 0")
    delta = _get(d, "delta", "", float, 0.05)
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta", f"must lie in (0, 1), got {delta}")
    m_c = _positive_int(d, "m_c", "", 16)
    if m_c < 2:
        raise ConfigError("m_c", "must be >= 2 (the max term needs two views)")
    per_class = _positive_int(d, "per_class", "", 32)
    embeddings = _get(d, "embeddings", "", (str, type(None)), None)
    return ExperimentConfig(
        kind=k,
        generative=_parse_generative(d.get("generative")),
        augment=_parse_augment(d.get("augment")),
        sweeps=_parse_sweeps(d.get("sweeps"), k),
        seed=seed,
        per_class=per_class,
        test_per_class=_positive_int(d, "test_per_class", "", 32),
        m_a=_positive_int(d, "m_a", "", 8),
        m_c=m_c,
        K=_positive_int(d, "K", "", 4),
        n_risk=_positive_int(d, "n_risk", "", 512),
        probe_epochs=_positive_int(d, "probe_epochs", "", 100, 0),
        probe_lr=_get(d, "probe_lr", "", float, 1.0),
        fresh_data=_get(d, "fresh_data", "", bool, True),
        encoder=_parse_encoder(d.get("encoder")),
        train=_parse_train(d.get("train")),
        world=_parse_world(d.get("world")),
        delta=delta,
        embeddings=embeddings,
        raw=copy.deepcopy(d),
    )


def load_config(path: str | Path, kind: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(d, kind)
