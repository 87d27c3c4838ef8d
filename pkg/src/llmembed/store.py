"""Embedding files, dataset bundles, and synthetic desk-scale data.

One ``.llme`` file holds all embeddings of a single backbone for one dataset
split, laid out little-endian:

    magic     4 bytes   b"LLME"
    version   u32       1
    name      u16 byte length + UTF-8 source name
    n_rows    u64
    n_depths  u32
    dim       u32
    dtype     u8        0 = float32
    payload   n_rows * n_depths * dim float32, [row][depth][dim]

A JSON manifest ties several such files to a labels file (newline-delimited
integers) and class names:

    {"sources": [{"name": ..., "path": ..., "depths": ..., "dim": ...}, ...],
     "labels_path": ..., "class_names": [...], "split": "train"|"test",
     "normalize": false}

Relative paths are resolved against the manifest's directory.  Payloads are
single precision on disk; downstream math promotes to double.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, CorruptionError, FormatError, ValidationError

MAGIC = b"LLME"
FORMAT_VERSION = 1
DTYPE_F32 = 0

# magic + version + name length (name bytes follow, then the fixed tail)
_PREFIX = struct.Struct("<4sIH")
_TAIL = struct.Struct("<QIIB")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Embeddings of one backbone: n_rows x n_depths x dim, float32.

    Immutable after construction; depth index d (0-based) is the d+1-th block
    counted from the model's end.
    """

    source_name: str
    data: np.ndarray

    def __post_init__(self):
        if not self.source_name:
            raise ValidationError("source_name must be non-empty")
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValidationError(
                f"embedding data must be 3-d (rows, depths, dim), got shape {data.shape}"
            )
        n, h, k = data.shape
        if h < 1 or k < 1:
            raise ValidationError(f"n_depths and dim must be >= 1, got {h} and {k}")
        data = data.astype(np.float32, copy=False)
        if not np.isfinite(data).all():
            bad = int(np.size(data) - np.isfinite(data).sum())
            raise ValidationError(
                f"source '{self.source_name}' contains {bad} non-finite values"
            )
        object.__setattr__(self, "data", _freeze(data))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_depths(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.source_name == other.source_name
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write one matrix to ``path``; byte-identical output for equal inputs."""
    name = matrix.source_name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValidationError("source_name longer than 65535 bytes")
    header = (
        _PREFIX.pack(MAGIC, FORMAT_VERSION, len(name))
        + name
        + _TAIL.pack(matrix.n_rows, matrix.n_depths, matrix.dim, DTYPE_F32)
    )
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read and validate one matrix, cross-checking header against payload size."""
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CorruptionError(f"{path}: file shorter than the fixed header")
    magic, version, name_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {FORMAT_VERSION}")
    offset = _PREFIX.size
    if len(blob) < offset + name_len + _TAIL.size:
        raise CorruptionError(f"{path}: header truncated")
    try:
        name = blob[offset : offset + name_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptionError(f"{path}: source name is not valid UTF-8") from exc
    offset += name_len
    n_rows, n_depths, dim, dtype = _TAIL.unpack_from(blob, offset)
    offset += _TAIL.size
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unknown dtype code {dtype}")
    if n_depths < 1 or dim < 1:
        raise ValidationError(f"{path}: n_depths and dim must be >= 1, got {n_depths} and {dim}")
    expected = n_rows * n_depths * dim * 4
    actual = len(blob) - offset
    if actual != expected:
        raise CorruptionError(
            f"{path}: payload is {actual} bytes, header promises {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=n_rows * n_depths * dim, offset=offset)
    data = data.reshape(n_rows, n_depths, dim)
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.isfinite(data).sum())
        raise ValidationError(f"{path}: payload contains {bad} non-finite values")
    return EmbeddingMatrix(source_name=name, data=data.copy())


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """Row-aligned embeddings from several backbones plus integer labels."""

    sources: tuple[EmbeddingMatrix, ...]
    labels: np.ndarray
    class_names: tuple[str, ...]
    split_tag: str

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.split_tag not in ("train", "test"):
            raise ValidationError(f"split_tag must be 'train' or 'test', got {self.split_tag!r}")
        if not self.sources:
            raise ValidationError("bundle needs at least one source")
        if len(self.class_names) < 2:
            raise ValidationError("need at least 2 class names")
        seen: set[str] = set()
        for src in self.sources:
            if src.source_name in seen:
                raise ValidationError(f"duplicate source name '{src.source_name}'")
            seen.add(src.source_name)
        n = self.sources[0].n_rows
        for src in self.sources[1:]:
            if src.n_rows != n:
                raise AlignmentError(
                    f"source '{src.source_name}' has {src.n_rows} rows, "
                    f"expected {n} (from '{self.sources[0].source_name}')"
                )
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != n:
            raise AlignmentError(
                f"labels length {labels.shape[0] if labels.ndim == 1 else labels.shape} "
                f"does not match {n} rows"
            )
        if n == 0:
            raise ValidationError("bundle has zero rows")
        c = len(self.class_names)
        if labels.min() < 0 or labels.max() >= c:
            bad = int(labels[(labels < 0) | (labels >= c)][0])
            raise ValidationError(f"label {bad} outside [0, {c})")
        if self.split_tag == "train":
            present = np.unique(labels)
            missing = sorted(set(range(c)) - set(present.tolist()))
            if missing:
                raise ValidationError(f"train bundle missing classes {missing}")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n_rows(self) -> int:
        return self.sources[0].n_rows

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def source_dims(self) -> dict[str, tuple[int, int]]:
        return {s.source_name: (s.n_depths, s.dim) for s in self.sources}

    def stacks(self, rows: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Per-source (B, H, K) views, optionally restricted to ``rows``."""
        if rows is None:
            return {s.source_name: s.data for s in self.sources}
        return {s.source_name: s.data[rows] for s in self.sources}


def _l2_normalize_depthwise(data: np.ndarray) -> np.ndarray:
    vecs = data.astype(np.float64)
    norms = np.linalg.norm(vecs, axis=-1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (vecs / norms).astype(np.float32)


def load_bundle(manifest_path: str | Path) -> DatasetBundle:
    """Load a manifest's sources, labels and class names into one bundle."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON: {exc}") from exc
    for key in ("sources", "labels_path", "class_names", "split"):
        if key not in doc:
            raise ValidationError(f"{manifest_path}: manifest missing key '{key}'")
    base = manifest_path.parent
    normalize = bool(doc.get("normalize", False))

    matrices = []
    for entry in doc["sources"]:
        for key in ("name", "path", "depths", "dim"):
            if key not in entry:
                raise ValidationError(f"{manifest_path}: source entry missing '{key}'")
        m = read_embeddings(base / entry["path"])
        if m.source_name != entry["name"]:
            raise AlignmentError(
                f"{entry['path']}: file declares source '{m.source_name}', "
                f"manifest expects '{entry['name']}'"
            )
        if m.n_depths != entry["depths"] or m.dim != entry["dim"]:
            raise AlignmentError(
                f"{entry['path']}: file is {m.n_depths} x {m.dim} per row, "
                f"manifest expects {entry['depths']} x {entry['dim']}"
            )
        if normalize:
            m = EmbeddingMatrix(m.source_name, _l2_normalize_depthwise(m.data))
        matrices.append(m)

    labels_file = base / doc["labels_path"]
    lines = [ln for ln in labels_file.read_text().splitlines() if ln.strip()]
    try:
        labels = np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise ValidationError(f"{labels_file}: labels must be integers: {exc}") from exc

    return DatasetBundle(
        sources=tuple(matrices),
        labels=labels,
        class_names=tuple(doc["class_names"]),
        split_tag=doc["split"],
    )


def write_bundle_files(bundle: DatasetBundle, out_dir: str | Path) -> Path:
    """Write a bundle's embedding files, labels and manifest; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for src in bundle.sources:
        fname = f"{src.source_name}.{bundle.split_tag}.llme"
        write_embeddings(src, out / fname)
        entries.append(
            {"name": src.source_name, "path": fname, "depths": src.n_depths, "dim": src.dim}
        )
    labels_name = f"{bundle.split_tag}.labels.txt"
    (out / labels_name).write_text("".join(f"{v}\n" for v in bundle.labels.tolist()))
    manifest = {
        "sources": entries,
        "labels_path": labels_name,
        "class_names": list(bundle.class_names),
        "split": bundle.split_tag,
        "normalize": False,
    }
    manifest_path = out / f"{bundle.split_tag}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


@dataclass(frozen=True)
class SourceSpec:
    name: str
    n_depths: int
    dim: int

    def __post_init__(self):
        if self.n_depths < 1 or self.dim < 1:
            raise ValidationError(f"source '{self.name}': depths and dim must be >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for separable Gaussian-blob embeddings standing in for real backbones."""

    n_rows: int
    n_classes: int
    sources: tuple[SourceSpec, ...] = (
        SourceSpec("llama2", 5, 64),
        SourceSpec("bert", 1, 32),
        SourceSpec("roberta", 1, 32),
    )
    separation: float = 10.0
    noise: float = 0.1
    seed: int = 0
    n_test_rows: int | None = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_rows < self.n_classes:
            raise ValidationError("n_rows must cover every class at least once")
        if not self.sources:
            raise ValidationError("need at least one source spec")
        if self.separation <= 0:
            raise ValidationError("separation must be > 0")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")
        if self.n_test_rows is not None and self.n_test_rows < 1:
            raise ValidationError("n_test_rows must be >= 1")

    @property
    def test_rows(self) -> int:
        if self.n_test_rows is not None:
            return self.n_test_rows
        return max(self.n_rows // 4, self.n_classes)


def class_means(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """(C, dim) means at scaled one-hot directions, pairwise >= separation apart.

    Class c sits at separation * (1 + c // dim) along axis c % dim: same-axis
    pairs differ by at least one full separation step, cross-axis pairs are a
    hypotenuse of two legs each >= separation.
    """
    means = np.zeros((n_classes, dim))
    for c in range(n_classes):
        means[c, c % dim] = separation * (1 + c // dim)
    return means


def _cyclic_labels(n_rows: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.resize(np.arange(n_classes, dtype=np.int64), n_rows)
    return labels[rng.permutation(n_rows)]


def generate_synthetic(spec: SyntheticSpec) -> tuple[DatasetBundle, DatasetBundle]:
    """Deterministic (train, test) bundles drawn from identical class blobs."""
    rng = np.random.default_rng(spec.seed)
    train_labels = _cyclic_labels(spec.n_rows, spec.n_classes, rng)
    test_labels = _cyclic_labels(spec.test_rows, spec.n_classes, rng)

    def draw(labels: np.ndarray) -> list[EmbeddingMatrix]:
        matrices = []
        for src in spec.sources:
            means = class_means(spec.n_classes, src.dim, spec.separation)
            data = means[labels][:, None, :] + spec.noise * rng.standard_normal(
                (labels.shape[0], src.n_depths, src.dim)
            )
            matrices.append(EmbeddingMatrix(src.name, data.astype(np.float32)))
        return matrices

    names = tuple(f"class_{c}" for c in range(spec.n_classes))
    train = DatasetBundle(tuple(draw(train_labels)), train_labels, names, "train")
    test = DatasetBundle(tuple(draw(test_labels)), test_labels, names, "test")
    return train, test
