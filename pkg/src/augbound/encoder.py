"""Toy encoders with analytic InfoNCE gradients, SGD training and a linear probe.

Architectures:

* ``identity``: flatten the input;
* ``linear``: ``h = W x``;
* ``mlp1``: ``h = W2 tanh(W1 x + b1)``.

With ``normalize`` on the output is ``h / ||h||``; a zero ``h`` is replaced by
the first basis vector and counted in ``Encoder.degenerate``.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._seeding import STREAM_INIT, STREAM_PROBE, STREAM_TRAIN, derive_rng
from .augment import AugDistribution, apply_batch, sample_augmentations
from .risk import infonce_batch

log = logging.getLogger(__name__)

ARCHS = ("identity", "linear", "mlp1")
MAGIC = b"AENC1"


@dataclass
class Encoder:
    arch: str
    in_dim: int
    out_dim: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    hidden: int = 0
    normalize: bool = True
    degenerate: int = 0

    def __post_init__(self) -> None:
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.arch == "identity" and self.out_dim != self.in_dim:
            raise ValueError("identity encoder needs out_dim == in_dim")
        for name, shape in self.param_shapes().items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name!r}")
            self.params[name] = np.asarray(self.params[name], dtype=np.float64)
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name!r} has shape {self.params[name].shape}, expected {shape}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.arch == "linear":
            return {"W": (self.out_dim, self.in_dim)}
        if self.arch == "mlp1":
            return {"W1": (self.hidden, self.in_dim), "b1": (self.hidden,), "W2": (self.out_dim, self.hidden)}
        return {}

    # -- flat parameter view (for finite differences and checkpoints) --

    def get_flat(self) -> np.ndarray:
        names = list(self.param_shapes())
        if not names:
            return np.zeros(0)
        return np.concatenate([self.params[n].ravel() for n in names])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        pos = 0
        for name, shape in self.param_shapes().items():
            size = int(np.prod(shape))
            self.params[name] = theta[pos:pos + size].reshape(shape).copy()
            pos += size
        if pos != theta.size:
            raise ValueError(f"expected {pos} parameters, got {theta.size}")

    def copy(self) -> "Encoder":
        return Encoder(self.arch, self.in_dim, self.out_dim, {k: v.copy() for k, v in self.params.items()},
                       self.hidden, self.normalize)

    # -- forward --

    def _flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_dim:
            raise ValueError(f"input dimension {flat.shape[1]} does not match encoder input {self.in_dim}")
        return flat

    def _pre(self, X: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        if self.arch == "identity":
            return X.copy(), {}
        if self.arch == "linear":
            return X @ self.params["W"].T, {}
        a = np.tanh(X @ self.params["W1"].T + self.params["b1"])
        return a @ self.params["W2"].T, {"a": a}

    def _normalize(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        norms = np.linalg.norm(h, axis=1)
        zero = norms == 0
        if np.any(zero):
            self.degenerate += int(zero.sum())
            log.debug("%d zero pre-normalisation outputs replaced by e_0", int(zero.sum()))
        z = np.divide(h, norms[:, None], out=np.zeros_like(h), where=~zero[:, None])
        z[zero, 0] = 1.0
        return z, norms

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h, _ = self._pre(self._flatten(x))
        return self._normalize(h)[0] if self.normalize else h

    def forward(self, img: np.ndarray) -> np.ndarray:
        """Features of a single input."""
        return self(np.asarray(img)[None])[0]


def init_encoder(arch: str, in_dim: int, out_dim: int, hidden: int = 32, normalize: bool = True,
                 seed: int = 0) -> Encoder:
    """Gaussian initialisation with variance ``1 / fan_in``."""
    rng = derive_rng(seed, STREAM_INIT)
    if arch == "identity":
        return Encoder("identity", in_dim, in_dim, {}, 0, normalize)
    if arch == "linear":
        return Encoder("linear", in_dim, out_dim, {"W": rng.normal(size=(out_dim, in_dim)) / np.sqrt(in_dim)},
                       0, normalize)
    if arch == "mlp1":
        params = {"W1": rng.normal(size=(hidden, in_dim)) / np.sqrt(in_dim), "b1": np.zeros(hidden),
                  "W2": rng.normal(size=(out_dim, hidden)) / np.sqrt(hidden)}
        return Encoder("mlp1", in_dim, out_dim, params, hidden, normalize)
    raise ValueError(f"arch must be one of {ARCHS}, got {arch!r}")


# -- loss and gradient ----------------------------------------------------------

def _stack_tuples(anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray) -> np.ndarray:
    n = anchors.shape[0]
    return np.concatenate([anchors.reshape(n, -1), positives.reshape(n, -1), negatives.reshape(n * negatives.shape[1], -1)])


def infonce_loss(enc: Encoder, anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray) -> float:
    """Mean logistic InfoNCE; ``negatives`` is ``(n, K, ...)``."""
    n, K = negatives.shape[:2]
    Z = enc(_stack_tuples(anchors, positives, negatives))
    return float(infonce_batch(Z[:n], Z[n:2 * n], Z[2 * n:].reshape(n, K, -1)).mean())


def infonce_gradient(enc: Encoder, anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray
                     ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean logistic InfoNCE and its exact gradient w.r.t. the parameters,
    including the Jacobian of the output normalisation."""
    n, K = negatives.shape[:2]
    X = enc._flatten(_stack_tuples(anchors, positives, negatives))
    h, cache = enc._pre(X)
    if enc.normalize:
        Z, norms = enc._normalize(h)
    else:
        Z, norms = h, None
    z, zp, zn = Z[:n], Z[n:2 * n], Z[2 * n:].reshape(n, K, -1)
    losses = infonce_batch(z, zp, zn)
    gaps = np.einsum("nk,njk->nj", z, zn) - np.einsum("nk,nk->n", z, zp)[:, None]
    # softmax weights of the negatives against the implicit zero logit
    top = np.maximum(gaps.max(axis=1), 0.0)
    e = np.exp(gaps - top[:, None])
    w = e / (np.exp(-top) + e.sum(axis=1))[:, None]
    g_z = np.einsum("nj,njk->nk", w, zn) - w.sum(axis=1)[:, None] * zp
    g_zp = -w.sum(axis=1)[:, None] * z
    g_zn = w[:, :, None] * z[:, None, :]
    G = np.concatenate([g_z, g_zp, g_zn.reshape(n * K, -1)]) / n
    if enc.normalize:
        # d(h/|h|) = (I - z z^T) dh / |h|; degenerate rows get no gradient
        safe = np.where(norms > 0, norms, np.inf)
        G = (G - np.einsum("ik,ik->i", G, Z)[:, None] * Z) / safe[:, None]
    grads: dict[str, np.ndarray] = {}
    if enc.arch == "linear":
        grads["W"] = G.T @ X
    elif enc.arch == "mlp1":
        a = cache["a"]
        grads["W2"] = G.T @ a
        da = (G @ enc.params["W2"]) * (1.0 - a**2)
        grads["W1"] = da.T @ X
        grads["b1"] = da.sum(axis=0)
    return float(losses.mean()), grads


def flat_gradient(enc: Encoder, grads: dict[str, np.ndarray]) -> np.ndarray:
    names = list(enc.param_shapes())
    return np.concatenate([grads[n].ravel() for n in names]) if names else np.zeros(0)


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 0.5
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 0.1
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    K: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        self.validate()

    def validate(self) -> None:
        if self.lr < 0 or self.weight_decay < 0 or not 0 < self.decay_factor <= 1:
            raise ValueError("lr and weight_decay must be >= 0 and decay_factor in (0, 1]")
        if self.batch_size < 1 or self.K < 1 or self.epochs < 0 or self.seed < 0:
            raise ValueError("batch_size and K must be >= 1, epochs and seed >= 0")
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ValueError("decay_epochs must be sorted")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_factor ** sum(1 for e in self.decay_epochs if epoch >= e)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


def draw_batch(images: np.ndarray, labels: np.ndarray, prior: np.ndarray, anchor_idx: np.ndarray, K: int,
               dist: AugDistribution, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Views for a batch: anchor and positive from each anchor image, ``K``
    negatives whose classes are drawn from ``prior`` and images uniformly
    within the class."""
    n = anchor_idx.size
    by_class = [np.flatnonzero(labels == c) for c in range(prior.size)]
    neg_classes = rng.choice(prior.size, size=(n, K), p=prior)
    neg_idx = np.empty((n, K), dtype=np.int64)
    for j in range(n):
        for k in range(K):
            pool = by_class[neg_classes[j, k]]
            neg_idx[j, k] = pool[rng.integers(pool.size)]
    src = np.concatenate([images[anchor_idx], images[anchor_idx], images[neg_idx.ravel()]])
    views = apply_batch(src, sample_augmentations(dist, rng, src.shape[0]))
    return views[:n], views[n:2 * n], views[2 * n:].reshape(n, K, *images.shape[1:])


def _as_arrays(dataset: Sequence[tuple[np.ndarray, int]]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([np.asarray(x, dtype=np.float64) for x, _ in dataset])
    labels = np.array([int(c) for _, c in dataset])
    return images, labels


def train(enc: Encoder, dataset, dist: AugDistribution, cfg: TrainConfig,
          prior: np.ndarray | None = None) -> tuple[Encoder, list[float]]:
    """SGD on the empirical InfoNCE.

    ``dataset`` is either a fixed list of ``(image, class)`` pairs or a callable
    ``epoch -> list`` that supplies the images of each epoch (fresh draws from
    a generative model). Each epoch visits every image once as an anchor in a
    seeded random order; the trace holds the mean loss of each epoch. Returns a
    trained copy and the trace.
    """
    enc = enc.copy()
    fixed = None if callable(dataset) else _as_arrays(dataset)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        images, labels = fixed if fixed is not None else _as_arrays(dataset(epoch))
        C = int(labels.max()) + 1
        pi = np.bincount(labels, minlength=C) / labels.size if prior is None else np.asarray(prior, float)
        rng = derive_rng(cfg.seed, STREAM_TRAIN, epoch)
        order = rng.permutation(images.shape[0])
        lr = cfg.lr_at(epoch)
        losses = []
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            a, p, ng = draw_batch(images, labels, pi, idx, cfg.K, dist, rng)
            loss, grads = infonce_gradient(enc, a, p, ng)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", trace + [loss])
            for name in grads:
                enc.params[name] = enc.params[name] - lr * (grads[name] + cfg.weight_decay * enc.params[name])
            losses.append(loss * idx.size)
        trace.append(float(np.sum(losses) / order.size))
    return enc, trace


# -- linear probe -----------------------------------------------------------------

@dataclass
class LinearProbe:
    W: np.ndarray
    b: np.ndarray

    def predict(self, feats: np.ndarray) -> np.ndarray:
        # argmax keeps the first maximum, so ties go to the lowest class id
        return np.argmax(feats @ self.W.T + self.b, axis=1)


def fit_linear_probe(feats: np.ndarray, labels: np.ndarray, num_classes: int, epochs: int = 100,
                     lr: float = 1.0) -> LinearProbe:
    """Full-batch gradient descent on multinomial cross entropy from zero."""
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("linear probe needs at least two classes in the training set")
    X = np.asarray(feats, dtype=np.float64)
    n = X.shape[0]
    W = np.zeros((num_classes, X.shape[1]))
    b = np.zeros(num_classes)
    Y = np.eye(num_classes)[labels]
    for _ in range(epochs):
        logits = X @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        W -= lr * G.T @ X
        b -= lr * G.sum(axis=0)
    return LinearProbe(W, b)


def linear_probe(enc: Encoder, train_set: Sequence[tuple[np.ndarray, int]], test_set: Sequence[tuple[np.ndarray, int]],
                 epochs: int = 100, lr: float = 1.0, num_classes: int | None = None) -> float:
    """Test accuracy of a linear classifier trained on frozen features."""
    Xtr = enc(np.stack([x for x, _ in train_set]))
    ytr = np.array([c for _, c in train_set])
    Xte = enc(np.stack([x for x, _ in test_set]))
    yte = np.array([c for _, c in test_set])
    C = int(max(ytr.max(), yte.max())) + 1 if num_classes is None else num_classes
    probe = fit_linear_probe(Xtr, ytr, C, epochs, lr)
    return float(np.mean(probe.predict(Xte) == yte))


# -- persistence ---------------------------------------------------------------------

_ARCH_CODE = {name: i for i, name in enumerate(ARCHS)}


def save_checkpoint(enc: Encoder, path: str | Path) -> None:
    """``AENC1`` | arch u8 | normalize u8 | in, hidden, out u32 | f64 LE params."""
    head = MAGIC + struct.pack("<BBIII", _ARCH_CODE[enc.arch], int(enc.normalize), enc.in_dim, enc.hidden, enc.out_dim)
    Path(path).write_bytes(head + enc.get_flat().astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> Encoder:
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise ValueError(f"{path}: not an encoder checkpoint (bad magic)")
    code, norm, in_dim, hidden, out_dim = struct.unpack_from("<BBIII", buf, 5)
    if code >= len(ARCHS):
        raise ValueError(f"{path}: unknown architecture code {code}")
    arch = ARCHS[code]
    enc = Encoder(arch, in_dim, out_dim, {}, hidden, bool(norm)) if arch == "identity" else None
    shapes = {"linear": {"W": (out_dim, in_dim)},
              "mlp1": {"W1": (hidden, in_dim), "b1": (hidden,), "W2": (out_dim, hidden)}}.get(arch, {})
    theta = np.frombuffer(buf, dtype="<f8", offset=5 + struct.calcsize("<BBIII")).astype(np.float64)
    if enc is None:
        enc = Encoder(arch, in_dim, out_dim, {n: np.zeros(s) for n, s in shapes.items()}, hidden, bool(norm))
    enc.set_flat(theta)
    return enc


def write_trace_csv(trace: Sequence[float], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "risk"])
        for i, r in enumerate(trace):
            w.writerow([i, repr(float(r))])


def probe_rng(seed: int) -> np.random.Generator:
    return derive_rng(seed, STREAM_PROBE)
