"""Directory scanning, batch inference and embedding-file output.

Output files follow the embedding contract the clustering toolkit loads:

* CSV: header ``id[,label],f0,...,f{d-1}``, floats printed with 9 significant
  digits.
* binary: magic ``CKEM``, little-endian uint32 version/N/d, length-prefixed
  UTF-8 ids, a label block behind a 1-byte flag, then float32 vectors.

Rows are ordered by the lexicographic sort of POSIX-style relative paths,
which doubles as the sample id. Images that fail to decode are skipped and
listed in a sidecar report, never silently dropped.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbones import load_backbone

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

# standard ImageNet preprocessing statistics
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

MAGIC = b"CKEM"
BINARY_VERSION = 1


@dataclass
class ExtractionManifest:
    root: Path
    paths: list            # relative POSIX paths, lexicographically sorted
    labels: list | None    # parent-directory names when requested
    backbone: str


@dataclass
class ExtractionReport:
    extracted: int = 0
    dimension: int = 0
    failures: list = field(default_factory=list)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "extracted": self.extracted,
                    "dimension": self.dimension,
                    "failures": self.failures,
                },
                fh,
                indent=2,
            )
            fh.write("\n")


def build_manifest(image_root, backbone: str, labels_from_dirs: bool) -> ExtractionManifest:
    root = Path(image_root)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    rels = sorted(
        p.relative_to(root).as_posix()
        for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not rels:
        raise ValueError(f"no decodable image files under {root}")
    labels = None
    if labels_from_dirs:
        labels = [Path(rel).parent.name or "_root" for rel in rels]
    return ExtractionManifest(root, rels, labels, backbone)


def _load_image(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB").resize((size, size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return (arr - _MEAN) / _STD


def extract(
    image_root,
    backbone: str = "resnet50",
    output: str | Path = "embeddings.csv",
    format: str = "csv",
    labels_from_dirs: bool = False,
    weights: str = "auto",
    batch_size: int = 16,
) -> ExtractionReport:
    """Embed every image under `image_root` and write the embedding file.

    Returns the report (also written next to the output as `<output>.report.json`).
    """
    if format not in ("csv", "binary"):
        raise ValueError(f"format must be csv or binary, got {format!r}")
    manifest = build_manifest(image_root, backbone, labels_from_dirs)
    model, input_size = load_backbone(backbone, weights)

    report = ExtractionReport()
    kept_ids: list[str] = []
    kept_labels: list[str] = [] if manifest.labels is not None else None
    batches: list[np.ndarray] = []
    pending: list[np.ndarray] = []
    vectors: list[np.ndarray] = []

    def flush() -> None:
        if not pending:
            return
        stack = torch.from_numpy(np.stack(pending)).permute(0, 3, 1, 2)
        with torch.no_grad():
            out = model(stack)
        vectors.append(out.numpy().astype(np.float32))
        pending.clear()

    for idx, rel in enumerate(manifest.paths):
        try:
            arr = _load_image(manifest.root / rel, input_size)
        except Exception as exc:
            report.failures.append({"path": rel, "error": str(exc)})
            continue
        kept_ids.append(rel)
        if kept_labels is not None:
            kept_labels.append(manifest.labels[idx])
        pending.append(arr)
        if len(pending) >= batch_size:
            flush()
    flush()

    if not kept_ids:
        raise ValueError(f"no image under {manifest.root} could be decoded")
    matrix = np.vstack(vectors)
    report.extracted = len(kept_ids)
    report.dimension = int(matrix.shape[1])

    output = Path(output)
    if format == "csv":
        _write_csv(output, kept_ids, kept_labels, matrix)
    else:
        _write_binary(output, kept_ids, kept_labels, matrix)
    report.write(output.with_name(output.name + ".report.json"))
    return report


def _write_csv(path: Path, ids, labels, matrix: np.ndarray) -> None:
    for sid in ids:
        if "," in sid:
            raise ValueError(f"id {sid!r} contains a comma; use the binary format")
    cols = ["id"] + (["label"] if labels is not None else []) + [f"f{i}" for i in range(matrix.shape[1])]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r, sid in enumerate(ids):
            parts = [sid]
            if labels is not None:
                parts.append(labels[r])
            parts.extend(f"{v:.9g}" for v in matrix[r])
            fh.write(",".join(parts) + "\n")


def _write_binary(path: Path, ids, labels, matrix: np.ndarray) -> None:
    n, d = matrix.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", BINARY_VERSION, n, d))
        for sid in ids:
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<B", 1 if labels is not None else 0))
        if labels is not None:
            for lab in labels:
                raw = lab.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
