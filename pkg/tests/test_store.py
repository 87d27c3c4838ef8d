import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmembed.errors import (
    AlignmentError,
    CorruptionError,
    FormatError,
    ValidationError,
)
from llmembed.store import (
    DatasetBundle,
    EmbeddingMatrix,
    SourceSpec,
    SyntheticSpec,
    generate_synthetic,
    load_bundle,
    read_embeddings,
    write_bundle_files,
    write_embeddings,
)


def small_matrix(seed=0, name="llama2", n=3, h=2, k=4):
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(name, rng.standard_normal((n, h, k)).astype(np.float32))


# --- matrix construction invariants ---------------------------------------


def test_rejects_flat_data():
    with pytest.raises(ValidationError):
        EmbeddingMatrix("llama2", np.zeros(24, dtype=np.float32))


def test_rejects_non_finite():
    data = np.zeros((2, 1, 3), dtype=np.float32)
    data[1, 0, 1] = np.nan
    with pytest.raises(ValidationError):
        EmbeddingMatrix("llama2", data)
    data[1, 0, 1] = np.inf
    with pytest.raises(ValidationError):
        EmbeddingMatrix("llama2", data)


def test_data_is_immutable():
    m = small_matrix()
    with pytest.raises(ValueError):
        m.data[0, 0, 0] = 1.0


# --- file round trips -------------------------------------------------------


def test_round_trip_identity(tmp_path):
    m = small_matrix()
    path = tmp_path / "m.llme"
    write_embeddings(m, path)
    back = read_embeddings(path)
    assert back == m
    assert back.source_name == m.source_name
    assert (back.n_rows, back.n_depths, back.dim) == (3, 2, 4)


def test_writes_are_deterministic(tmp_path):
    m = small_matrix(seed=5)
    write_embeddings(m, tmp_path / "a.llme")
    write_embeddings(m, tmp_path / "b.llme")
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()  # noqa: E731
    assert digest(tmp_path / "a.llme") == digest(tmp_path / "b.llme")


def test_large_header_dims(tmp_path):
    m = EmbeddingMatrix("llama2", np.zeros((2, 5, 4096), dtype=np.float32))
    write_embeddings(m, tmp_path / "big.llme")
    back = read_embeddings(tmp_path / "big.llme")
    assert (back.n_rows, back.n_depths, back.dim) == (2, 5, 4096)


@settings(max_examples=60, deadline=None)
@given(
    name=st.text(min_size=1, max_size=8),
    n=st.integers(1, 5),
    h=st.integers(1, 4),
    k=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(tmp_path_factory, name, n, h, k, seed):
    rng = np.random.default_rng(seed)
    m = EmbeddingMatrix(name, rng.standard_normal((n, h, k)).astype(np.float32))
    path = tmp_path_factory.mktemp("rt") / "m.llme"
    write_embeddings(m, path)
    assert read_embeddings(path) == m


# --- corruption detection ---------------------------------------------------


def test_wrong_magic(tmp_path):
    m = small_matrix()
    path = tmp_path / "m.llme"
    write_embeddings(m, path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        read_embeddings(path)


def test_truncated_by_one_byte(tmp_path):
    m = small_matrix()
    path = tmp_path / "m.llme"
    write_embeddings(m, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-1])
    with pytest.raises(CorruptionError):
        read_embeddings(path)


def test_every_structural_header_byte_is_load_bearing(tmp_path):
    # magic(4) + version(4) + name_len(2) precede the name; the fixed tail
    # (rows/depths/dim/dtype) follows it.  Flipping any of those bytes must
    # never load cleanly as the original matrix.
    m = small_matrix(name="llama2")
    path = tmp_path / "m.llme"
    write_embeddings(m, path)
    blob = path.read_bytes()
    name_len = len(b"llama2")
    structural = list(range(0, 10)) + list(range(10 + name_len, 10 + name_len + 17))
    for offset in structural:
        corrupted = bytearray(blob)
        corrupted[offset] ^= 0x01
        bad = tmp_path / "bad.llme"
        bad.write_bytes(bytes(corrupted))
        with pytest.raises((FormatError, CorruptionError, ValidationError)):
            read_embeddings(bad)


def test_name_corruption_is_caught_by_manifest(tmp_path):
    # A flipped byte inside the name string still parses; the bundle-level
    # cross-check against the manifest is what rejects it.
    spec = SyntheticSpec(n_rows=8, n_classes=2, sources=(SourceSpec("llama2", 2, 3),), seed=0)
    train, _ = generate_synthetic(spec)
    manifest = write_bundle_files(train, tmp_path)
    emb_path = tmp_path / "llama2.train.llme"
    blob = bytearray(emb_path.read_bytes())
    blob[10] ^= 0x01  # first byte of the stored name
    emb_path.write_bytes(bytes(blob))
    with pytest.raises(AlignmentError, match="declares source"):
        load_bundle(manifest)


def test_trailing_garbage_rejected(tmp_path):
    m = small_matrix()
    path = tmp_path / "m.llme"
    write_embeddings(m, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CorruptionError):
        read_embeddings(path)


# --- bundles and manifests ---------------------------------------------------


def synth_pair(tmp_path, **overrides):
    spec = SyntheticSpec(n_rows=20, n_classes=3, seed=2, **overrides)
    train, test = generate_synthetic(spec)
    return write_bundle_files(train, tmp_path), write_bundle_files(test, tmp_path)


def test_manifest_round_trip(tmp_path):
    train_manifest, test_manifest = synth_pair(tmp_path)
    train = load_bundle(train_manifest)
    test = load_bundle(test_manifest)
    assert train.split_tag == "train" and test.split_tag == "test"
    assert [s.source_name for s in train.sources] == ["llama2", "bert", "roberta"]
    assert train.n_rows == 20 and test.n_rows == 5


def test_row_count_mismatch_names_both_counts(tmp_path):
    a = EmbeddingMatrix("llama2", np.zeros((100, 1, 2), dtype=np.float32))
    b = EmbeddingMatrix("bert", np.zeros((99, 1, 2), dtype=np.float32))
    with pytest.raises(AlignmentError, match=r"99.*100|100.*99"):
        DatasetBundle((a, b), np.zeros(100, dtype=np.int64), ("a", "b"), "test")


def test_label_out_of_range(tmp_path):
    train_manifest, _ = synth_pair(tmp_path)
    labels_path = tmp_path / "train.labels.txt"
    lines = labels_path.read_text().splitlines()
    lines[0] = "3"  # == n_classes
    labels_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match=r"3.*\[0, 3\)"):
        load_bundle(train_manifest)


def test_missing_file(tmp_path):
    train_manifest, _ = synth_pair(tmp_path)
    (tmp_path / "bert.train.llme").unlink()
    with pytest.raises(FileNotFoundError):
        load_bundle(train_manifest)


def test_manifest_order_is_preserved(tmp_path):
    train_manifest, _ = synth_pair(tmp_path)
    doc = json.loads(train_manifest.read_text())
    doc["sources"] = list(reversed(doc["sources"]))
    train_manifest.write_text(json.dumps(doc))
    bundle = load_bundle(train_manifest)
    assert [s.source_name for s in bundle.sources] == ["roberta", "bert", "llama2"]


def test_train_bundle_requires_every_class(tmp_path):
    data = np.zeros((4, 1, 2), dtype=np.float32)
    m = EmbeddingMatrix("llama2", data)
    with pytest.raises(ValidationError, match="missing classes"):
        DatasetBundle((m,), np.zeros(4, dtype=np.int64), ("a", "b"), "train")
    # the same labels are fine for a test split
    DatasetBundle((m,), np.zeros(4, dtype=np.int64), ("a", "b"), "test")


def test_normalize_flag(tmp_path):
    train_manifest, _ = synth_pair(tmp_path)
    doc = json.loads(train_manifest.read_text())
    doc["normalize"] = True
    train_manifest.write_text(json.dumps(doc))
    bundle = load_bundle(train_manifest)
    norms = np.linalg.norm(bundle.sources[0].data, axis=-1)
    assert np.allclose(norms, 1.0, atol=1e-5)


# --- synthetic generator ------------------------------------------------------


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(n_rows=30, n_classes=4, seed=9)
    a_train, a_test = generate_synthetic(spec)
    b_train, b_test = generate_synthetic(spec)
    for a, b in ((a_train, b_train), (a_test, b_test)):
        assert np.array_equal(a.labels, b.labels)
        for sa, sb in zip(a.sources, b.sources):
            assert sa == sb


def test_zero_noise_collapses_to_class_means():
    spec = SyntheticSpec(
        n_rows=12,
        n_classes=3,
        sources=(SourceSpec("llama2", 2, 5),),
        noise=0.0,
        seed=4,
    )
    train, _ = generate_synthetic(spec)
    src = train.sources[0]
    for c in range(3):
        rows = src.data[train.labels == c]
        assert np.all(rows == rows[0])


def test_means_pairwise_separated_even_when_classes_exceed_dim():
    from llmembed.store import class_means

    means = class_means(n_classes=7, dim=2, separation=3.0)
    for i in range(7):
        for j in range(i + 1, 7):
            assert np.linalg.norm(means[i] - means[j]) >= 3.0 - 1e-12


def test_rejects_single_class():
    with pytest.raises(ValidationError):
        SyntheticSpec(n_rows=10, n_classes=1)
