"""Embedding tables and plot-ready CSV output.

Binary embedding layout (little-endian): magic ``AEMB1``, u32 n, u32 d, u32 C,
n u32 labels, then n*d f32 values row by row. Files ending in ``.csv`` hold
one row per embedding: ``label, v1, ..., vd`` with no header.
"""

from __future__ import annotations

import csv
import io
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

EMB_MAGIC = b"AEMB1"
_HEADER = struct.Struct("<III")


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    labels: np.ndarray
    vectors: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.labels.size:
            raise EmbeddingFormatError(f"expected {self.labels.size} vectors, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            row = int(np.argwhere(~np.isfinite(self.vectors))[0, 0])
            raise EmbeddingFormatError(f"non-finite value in row {row}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise EmbeddingFormatError(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            for c, v in zip(table.labels, table.vectors):
                w.writerow([int(c)] + [repr(float(x)) for x in v])
        return
    buf = EMB_MAGIC + _HEADER.pack(table.n, table.d, table.num_classes)
    buf += table.labels.astype("<u4").tobytes() + table.vectors.astype("<f4").tobytes()
    path.write_bytes(buf)


def _load_csv(path: Path) -> EmbeddingTable:
    labels, rows = [], []
    with path.open(newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            try:
                labels.append(int(rec[0]))
                rows.append([float(x) for x in rec[1:]])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: cannot parse row") from None
            if len(rows[-1]) != len(rows[0]):
                raise EmbeddingFormatError(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(rows[-1])}")
    if not rows:
        warnings.warn(f"{path} holds no embeddings", stacklevel=3)
        return EmbeddingTable(np.zeros(0, np.int64), np.zeros((0, 0), np.float32), 0)
    labels_arr = np.array(labels)
    return EmbeddingTable(labels_arr, np.array(rows), int(labels_arr.max()) + 1)


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    buf = path.read_bytes()
    head = len(EMB_MAGIC) + _HEADER.size
    if buf[:len(EMB_MAGIC)] != EMB_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {buf[:len(EMB_MAGIC)]!r}")
    if len(buf) < head:
        raise EmbeddingFormatError(f"{path}: truncated header")
    n, d, C = _HEADER.unpack_from(buf, len(EMB_MAGIC))
    want = head + 4 * n + 4 * n * d
    if len(buf) < want:
        raise EmbeddingFormatError(f"{path}: truncated, expected {want} bytes, got {len(buf)}")
    if len(buf) > want:
        raise EmbeddingFormatError(f"{path}: {len(buf) - want} trailing bytes")
    labels = np.frombuffer(buf, "<u4", n, head).astype(np.int64)
    vectors = np.frombuffer(buf, "<f4", n * d, head + 4 * n).reshape(n, d)
    if n == 0:
        warnings.warn(f"{path} holds no embeddings", stacklevel=2)
    return EmbeddingTable(labels, vectors, C)


def _cell(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def emit_plot_data(rows: Sequence[dict[str, Any]], header: Sequence[str] | None = None) -> str:
    """Render homogeneous dict rows as CSV text. Floats are written with
    ``repr`` so that reading them back gives the same doubles."""
    if header is None:
        if not rows:
            raise ValueError("need a header for an empty table")
        header = list(rows[0])
    for i, r in enumerate(rows):
        if list(r) != list(header):
            raise ValueError(f"row {i} has fields {list(r)}, expected {list(header)}")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r[k]) for k in header])
    return out.getvalue()


def read_plot_data(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))
