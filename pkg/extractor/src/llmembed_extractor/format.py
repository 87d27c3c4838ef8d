"""Writer for the llmembed wire formats.

Kept independent of the llmembed package on purpose: the byte layout below is
the interface contract between the two, and the round trip through the other
side's reader is what the tests check.

Embedding file, little-endian: magic "LLME", version u32 = 1, source-name
u16 length + UTF-8, n_rows u64, n_depths u32, dim u32, dtype u8 (0 = f32),
then the row-major [row][depth][dim] float32 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LLME"
VERSION = 1
DTYPE_F32 = 0


def write_embedding_file(path: str | Path, source_name: str, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"need (rows, depths, dim) data, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError(f"source '{source_name}': non-finite values in embeddings")
    n, h, k = data.shape
    name = source_name.encode("utf-8")
    header = (
        struct.pack("<4sIH", MAGIC, VERSION, len(name))
        + name
        + struct.pack("<QIIB", n, h, k, DTYPE_F32)
    )
    Path(path).write_bytes(header + data.tobytes())


def write_labels_file(path: str | Path, labels: list[int]) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def write_manifest(
    path: str | Path,
    sources: list[dict],
    labels_path: str,
    class_names: list[str],
    split: str,
    extraction: dict | None = None,
) -> None:
    doc = {
        "sources": sources,
        "labels_path": labels_path,
        "class_names": class_names,
        "split": split,
        "normalize": False,
    }
    if extraction:
        doc["extraction"] = extraction
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
