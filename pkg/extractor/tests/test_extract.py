import json
import subprocess
import sys

import numpy as np
import pytest

import llmembed
from llmembed_extractor.backbones import StubBackbone
from llmembed_extractor.extract import extract, read_corpus

WORDS = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"]


def toy_corpus_file(path, n_rows=50, n_classes=3):
    lines = []
    for i in range(n_rows):
        label = i % n_classes
        text = f"{WORDS[label]} token{i % 5} row{i}"
        lines.append(json.dumps({"text": text, "label": label}))
    path.write_text("\n".join(lines) + "\n")
    return path


def canonical_backbones(seed=0):
    return {
        "llama2": StubBackbone(n_depths=5, dim=4096, seed=seed),
        "bert": StubBackbone(n_depths=1, dim=1024, seed=seed + 1),
        "roberta": StubBackbone(n_depths=1, dim=1024, seed=seed + 2),
    }


# --- acceptance: toy corpus through the primary reader -------------------------


def test_toy_corpus_passes_primary_validation(tmp_path):
    corpus = read_corpus(toy_corpus_file(tmp_path / "corpus.jsonl"))
    manifest = extract(corpus, canonical_backbones(), tmp_path / "out", split="train")
    bundle = llmembed.load_bundle(manifest)
    assert bundle.n_rows == 50
    assert bundle.source_dims() == {
        "llama2": (5, 4096),
        "bert": (1, 1024),
        "roberta": (1, 1024),
    }
    assert [s.source_name for s in bundle.sources] == ["llama2", "bert", "roberta"]
    assert bundle.labels.tolist() == [i % 3 for i in range(50)]
    print("\nPASS: 50-row toy corpus validates in the primary reader at (5x4096)/(1x1024)/(1x1024)")


def test_row_order_preserved(tmp_path):
    corpus = read_corpus(toy_corpus_file(tmp_path / "corpus.jsonl"))
    backbones = canonical_backbones()
    manifest = extract(corpus, backbones, tmp_path / "out", split="test")
    bundle = llmembed.load_bundle(manifest)
    # re-embedding single rows must reproduce the bundle rows at their index
    for i in (0, 7, 23, 49):
        single, _ = backbones["llama2"].embed_batch([corpus.texts[i]])
        assert np.array_equal(bundle.sources[0].data[i], single[0])


def test_single_token_rows_equal_block_outputs(tmp_path):
    path = tmp_path / "single.jsonl"
    path.write_text(
        json.dumps({"text": "alpha", "label": 0})
        + "\n"
        + json.dumps({"text": "bravo", "label": 1})
        + "\n"
    )
    corpus = read_corpus(path)
    backbones = {"llama2": StubBackbone(n_depths=5, dim=64, seed=3)}
    manifest = extract(corpus, backbones, tmp_path / "out", split="test")
    bundle = llmembed.load_bundle(manifest)
    for row, token in ((0, "alpha"), (1, "bravo")):
        for d in range(5):
            expected = backbones["llama2"].token_embedding(token, d)
            assert np.array_equal(bundle.sources[0].data[row, d], expected)


# --- corpus parsing -------------------------------------------------------------


def test_read_corpus_validates(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "x"}\n')
    with pytest.raises(ValueError, match="label"):
        read_corpus(bad)
    bad.write_text('{"text": "x", "label": -1}\n')
    with pytest.raises(ValueError, match=">= 0"):
        read_corpus(bad)
    bad.write_text("not json\n")
    with pytest.raises(ValueError, match="JSON"):
        read_corpus(bad)
    bad.write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_corpus(bad)


def test_class_names_default_and_explicit(tmp_path):
    corpus = read_corpus(toy_corpus_file(tmp_path / "c.jsonl"))
    assert corpus.class_names == ["class_0", "class_1", "class_2"]
    named = read_corpus(tmp_path / "c.jsonl", class_names=["neg", "neu", "pos"])
    assert named.class_names == ["neg", "neu", "pos"]
    with pytest.raises(ValueError, match="class names"):
        read_corpus(tmp_path / "c.jsonl", class_names=["only_one"])


def test_truncation_recorded_in_manifest(tmp_path):
    corpus = read_corpus(toy_corpus_file(tmp_path / "c.jsonl"))
    backbones = {"llama2": StubBackbone(n_depths=5, dim=16, seed=0, max_length=2)}
    manifest = extract(corpus, backbones, tmp_path / "out")
    doc = json.loads(manifest.read_text())
    assert doc["extraction"]["truncated_rows"]["llama2"] == 50  # every row has 3 tokens


# --- end-to-end into the primary training loop ------------------------------------


def test_extracted_bundles_train_in_primary(tmp_path):
    # class word dominates each text, so stub embeddings cluster by label
    backbones = {
        "llama2": StubBackbone(n_depths=5, dim=32, seed=0),
        "bert": StubBackbone(n_depths=1, dim=16, seed=1),
        "roberta": StubBackbone(n_depths=1, dim=16, seed=2),
    }
    train_corpus = read_corpus(toy_corpus_file(tmp_path / "train.jsonl", n_rows=60))
    test_corpus = read_corpus(toy_corpus_file(tmp_path / "test.jsonl", n_rows=30))
    train_manifest = extract(train_corpus, backbones, tmp_path / "out", split="train")
    test_manifest = extract(test_corpus, backbones, tmp_path / "out", split="test")

    train_b = llmembed.load_bundle(train_manifest)
    test_b = llmembed.load_bundle(test_manifest)
    config = llmembed.TrainConfig(
        batch_size=16, epochs=60, learning_rate=1e-3, seed=0, eval_every=60
    )
    strategy = llmembed.FusionStrategy(11)
    clf, projections, report = llmembed.train(train_b, test_b, strategy, config)
    assert llmembed.evaluate(clf, projections, train_b, strategy) >= 0.95
    assert report.final_test_accuracy >= 0.95


# --- CLI ---------------------------------------------------------------------------


def test_cli_stub_extraction(tmp_path):
    corpus_path = toy_corpus_file(tmp_path / "corpus.jsonl", n_rows=12)
    proc = subprocess.run(
        [
            sys.executable, "-m", "llmembed_extractor",
            "--input", str(corpus_path),
            "--out", str(tmp_path / "out"),
            "--split", "train",
            "--stub", "llama2:5:64",
            "--stub", "bert:1:32",
            "--stub", "roberta:1:32",
            "--class-names", "a,b,c",
        ],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    manifest = proc.stdout.strip().splitlines()[-1]
    bundle = llmembed.load_bundle(manifest)
    assert bundle.n_rows == 12
    assert bundle.class_names == ("a", "b", "c")


def test_cli_rejects_missing_backbones(tmp_path):
    corpus_path = toy_corpus_file(tmp_path / "corpus.jsonl", n_rows=3)
    proc = subprocess.run(
        [
            sys.executable, "-m", "llmembed_extractor",
            "--input", str(corpus_path),
            "--out", str(tmp_path / "out"),
        ],
        capture_output=True, text=True,
    )
    assert proc.returncode != 0
    assert "backbone" in proc.stderr
