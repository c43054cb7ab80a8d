"""Embedding datasets and cluster-assignment records, with portable I/O.

Two on-disk formats are supported for embeddings:

* CSV (UTF-8, LF): header ``id[,label],f0,f1,...,f{d-1}``. The label column
  is optional and ids must not contain commas. Floats are written with 9
  significant digits, which round-trips 32-bit floats exactly.
* binary: magic ``CKEM``, then little-endian uint32 version (=1), N, d;
  N length-prefixed UTF-8 ids (uint32 lengths); a 1-byte label flag followed,
  when set, by N length-prefixed labels; then N*d little-endian float32
  values, row-major.

Assignments are CSV with header ``id,cluster_index,pseudo_label,source``.

Loading validates; it never repairs. Every rejection names the offending
row or byte region.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CKEM"
BINARY_VERSION = 1

ASSIGNMENT_HEADER = "id,cluster_index,pseudo_label,source"

SOURCE_NORMAL = "normal"
SOURCE_ASSIGNED = "assigned"


class DataFormatError(ValueError):
    """A file violated the embedding or assignment format."""


class EmbeddingSet:
    """N identified d-dimensional feature vectors, optionally labeled.

    Vectors are stored float32 (matching the binary format); ids are opaque
    unique strings; labels, when present, are ground truth used only by the
    evaluation metrics. Instances are treated as immutable.
    """

    __slots__ = ("ids", "vectors", "labels")

    def __init__(self, ids, vectors, labels=None):
        ids = list(ids)
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        n, d = vectors.shape
        if n < 1 or d < 1:
            raise ValueError(f"need N >= 1 and d >= 1, got N={n}, d={d}")
        if len(ids) != n:
            raise ValueError(f"{len(ids)} ids for {n} vectors")
        if len(set(ids)) != n:
            raise ValueError("ids are not unique")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors contain non-finite values")
        if labels is not None:
            labels = list(labels)
            if len(labels) != n:
                raise ValueError(f"{len(labels)} labels for {n} vectors")
        self.ids = ids
        self.vectors = vectors
        self.labels = labels

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.labels == other.labels
            and self.vectors.shape == other.vectors.shape
            and bool(np.all(self.vectors == other.vectors))
        )

    def __repr__(self) -> str:
        tag = "labeled" if self.labels is not None else "unlabeled"
        return f"EmbeddingSet(N={self.n}, d={self.d}, {tag})"

    def subset(self, indices, labels=None) -> "EmbeddingSet":
        """New set from `indices` (original order of appearance kept)."""
        idx = np.asarray(indices, dtype=np.int64)
        sub_labels = labels
        if sub_labels is None and self.labels is not None:
            sub_labels = [self.labels[i] for i in idx]
        return EmbeddingSet([self.ids[i] for i in idx], self.vectors[idx], sub_labels)


@dataclass(frozen=True)
class AssignmentRecord:
    """Final cluster membership of one sample.

    `source` is "normal" when membership came from the merged under-clusters
    directly and "assigned" when the sample was routed out of the abnormal
    cluster by the classification stage.
    """

    id: str
    cluster_index: int
    pseudo_label: str
    source: str

    def __post_init__(self):
        if self.cluster_index < 0:
            raise ValueError(f"cluster_index must be >= 0, got {self.cluster_index}")
        if self.source not in (SOURCE_NORMAL, SOURCE_ASSIGNED):
            raise ValueError(f"source must be 'normal' or 'assigned', got {self.source!r}")


# ---------------------------------------------------------------------------
# embedding I/O
# ---------------------------------------------------------------------------


def load_embeddings(path, format: str = "csv") -> EmbeddingSet:
    """Load an embedding file in the named format ("csv" or "binary")."""
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {format!r} (expected 'csv' or 'binary')")


def save_embeddings(e: EmbeddingSet, path, format: str = "csv") -> None:
    if format == "csv":
        _save_csv(e, path)
    elif format == "binary":
        _save_binary(e, path)
    else:
        raise ValueError(f"unknown format {format!r} (expected 'csv' or 'binary')")


def _load_csv(path) -> EmbeddingSet:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataFormatError(f"{path}: empty file")

    header = lines[0].split(",")
    if not header or header[0] != "id":
        raise DataFormatError(f"{path}: line 1: header must start with 'id'")
    has_label = len(header) > 1 and header[1] == "label"
    off = 2 if has_label else 1
    feat_names = header[off:]
    if not feat_names:
        raise DataFormatError(f"{path}: line 1: no feature columns")
    for i, name in enumerate(feat_names):
        if name != f"f{i}":
            raise DataFormatError(f"{path}: line 1: expected column 'f{i}', got {name!r}")
    d = len(feat_names)

    ids: list[str] = []
    labels: list[str] = [] if has_label else None
    seen: set[str] = set()
    rows = np.empty((len(lines) - 1, d), dtype=np.float32)
    for r, line in enumerate(lines[1:]):
        lineno = r + 2
        parts = line.split(",")
        if len(parts) != off + d:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {off + d} fields, got {len(parts)}"
            )
        sid = parts[0]
        if sid in seen:
            raise DataFormatError(f"{path}: line {lineno}: duplicate id {sid!r}")
        seen.add(sid)
        ids.append(sid)
        if has_label:
            labels.append(parts[1])
        try:
            vals = [float(tok) for tok in parts[off:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: malformed value ({exc})") from None
        row = np.asarray(vals, dtype=np.float32)
        if not np.all(np.isfinite(row)):
            raise DataFormatError(f"{path}: line {lineno}: non-finite value")
        rows[r] = row
    if not ids:
        raise DataFormatError(f"{path}: no data rows")
    return EmbeddingSet(ids, rows, labels)


def _save_csv(e: EmbeddingSet, path) -> None:
    for sid in e.ids:
        if "," in sid:
            raise ValueError(f"id {sid!r} contains a comma; use the binary format")
    if e.labels is not None:
        for lab in e.labels:
            if "," in lab:
                raise ValueError(f"label {lab!r} contains a comma; use the binary format")
    cols = ["id"] + (["label"] if e.labels is not None else []) + [f"f{i}" for i in range(e.d)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(e.n):
            parts = [e.ids[i]]
            if e.labels is not None:
                parts.append(e.labels[i])
            parts.extend(f"{v:.9g}" for v in e.vectors[i])
            fh.write(",".join(parts) + "\n")


def _load_binary(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(nbytes: int, what: str) -> memoryview:
        nonlocal pos
        if pos + nbytes > len(blob):
            raise DataFormatError(f"{path}: truncated while reading {what} at byte {pos}")
        chunk = view[pos : pos + nbytes]
        pos += nbytes
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes (not an embedding file)")
    version, n, d = struct.unpack("<III", take(12, "header"))
    if version != BINARY_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if n < 1 or d < 1:
        raise DataFormatError(f"{path}: invalid header N={n}, d={d}")

    def take_str(row: int, what: str) -> str:
        (length,) = struct.unpack("<I", take(4, f"{what} length (row {row})"))
        raw = take(length, f"{what} (row {row})")
        try:
            return str(raw, "utf-8")
        except UnicodeDecodeError:
            raise DataFormatError(f"{path}: row {row}: {what} is not valid UTF-8") from None

    ids = [take_str(i, "id") for i in range(n)]
    if len(set(ids)) != n:
        raise DataFormatError(f"{path}: duplicate ids")
    (flag,) = struct.unpack("<B", take(1, "label flag"))
    if flag not in (0, 1):
        raise DataFormatError(f"{path}: label flag must be 0 or 1, got {flag}")
    labels = [take_str(i, "label") for i in range(n)] if flag else None
    vec_bytes = take(4 * n * d, "vectors")
    if pos != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - pos} trailing bytes")
    vectors = np.frombuffer(vec_bytes, dtype="<f4").reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(vectors).all(axis=1))
    if bad.size:
        raise DataFormatError(f"{path}: row {bad[0]}: non-finite value")
    return EmbeddingSet(ids, vectors, labels)


def _save_binary(e: EmbeddingSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", BINARY_VERSION, e.n, e.d))
        for sid in e.ids:
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<B", 1 if e.labels is not None else 0))
        if e.labels is not None:
            for lab in e.labels:
                raw = lab.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
        fh.write(np.ascontiguousarray(e.vectors, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# assignment I/O
# ---------------------------------------------------------------------------


def save_assignments(records, path) -> None:
    records = list(records)
    if not records:
        raise ValueError("no assignment records to save")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ASSIGNMENT_HEADER + "\n")
        for r in records:
            if "," in r.id or "," in r.pseudo_label:
                raise ValueError(f"record {r.id!r} contains a comma")
            fh.write(f"{r.id},{r.cluster_index},{r.pseudo_label},{r.source}\n")


def load_assignments(path) -> list[AssignmentRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != ASSIGNMENT_HEADER:
        raise DataFormatError(f"{path}: line 1: expected header {ASSIGNMENT_HEADER!r}")
    records = []
    for r, line in enumerate(lines[1:]):
        lineno = r + 2
        parts = line.split(",")
        if len(parts) != 4:
            raise DataFormatError(f"{path}: line {lineno}: expected 4 fields, got {len(parts)}")
        sid, idx_str, pseudo, source = parts
        try:
            idx = int(idx_str)
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: bad cluster_index {idx_str!r}") from None
        try:
            records.append(AssignmentRecord(sid, idx, pseudo, source))
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not records:
        raise DataFormatError(f"{path}: no data rows")
    return records
