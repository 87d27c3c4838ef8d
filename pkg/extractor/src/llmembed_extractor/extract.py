"""JSONL corpus -> embedding files + labels + manifest, in input row order."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbones import Backbone
from .format import write_embedding_file, write_labels_file, write_manifest

log = logging.getLogger("llmembed_extractor")


@dataclass(frozen=True)
class Corpus:
    texts: list[str]
    labels: list[int]
    class_names: list[str]


def read_corpus(path: str | Path, class_names: list[str] | None = None) -> Corpus:
    """Parse JSONL rows of {"text": ..., "label": int}; order is preserved."""
    texts: list[str] = []
    labels: list[int] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        if "text" not in row or "label" not in row:
            raise ValueError(f"{path}:{lineno}: rows need 'text' and 'label'")
        label = int(row["label"])
        if label < 0:
            raise ValueError(f"{path}:{lineno}: label must be >= 0")
        texts.append(str(row["text"]))
        labels.append(label)
    if not texts:
        raise ValueError(f"{path}: empty corpus")
    n_classes = max(labels) + 1
    if class_names is None:
        class_names = [f"class_{c}" for c in range(n_classes)]
    elif len(class_names) < n_classes:
        raise ValueError(
            f"{len(class_names)} class names but labels go up to {n_classes - 1}"
        )
    return Corpus(texts=texts, labels=labels, class_names=list(class_names))


def extract(
    corpus: Corpus,
    backbones: dict[str, Backbone],
    out_dir: str | Path,
    split: str = "train",
    batch_size: int = 16,
    extraction_info: dict | None = None,
) -> Path:
    """Run every backbone over the corpus and write one bundle; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    truncation: dict[str, int] = {}
    for name, backbone in backbones.items():
        chunks = []
        truncated = 0
        for start in range(0, len(corpus.texts), batch_size):
            block, n_trunc = backbone.embed_batch(
                corpus.texts[start : start + batch_size]
            )
            chunks.append(np.asarray(block, dtype=np.float32))
            truncated += n_trunc
        data = np.concatenate(chunks, axis=0)
        if data.shape[0] != len(corpus.texts):
            raise ValueError(
                f"backbone '{name}' returned {data.shape[0]} rows for "
                f"{len(corpus.texts)} texts"
            )
        fname = f"{name}.{split}.llme"
        write_embedding_file(out / fname, name, data)
        entries.append(
            {"name": name, "path": fname, "depths": data.shape[1], "dim": data.shape[2]}
        )
        truncation[name] = truncated
        if truncated:
            log.warning("source %s: %d over-length texts truncated", name, truncated)

    labels_name = f"{split}.labels.txt"
    write_labels_file(out / labels_name, corpus.labels)
    info = dict(extraction_info or {})
    info["truncated_rows"] = truncation
    manifest_path = out / f"{split}.manifest.json"
    write_manifest(
        manifest_path,
        sources=entries,
        labels_path=labels_name,
        class_names=corpus.class_names,
        split=split,
        extraction=info,
    )
    return manifest_path
