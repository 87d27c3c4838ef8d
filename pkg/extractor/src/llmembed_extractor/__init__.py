"""Frozen-backbone embedding extraction into the llmembed binary format."""

from .backbones import (
    CausalBackbone,
    EncoderBackbone,
    StubBackbone,
    load_pretrained_causal,
    load_pretrained_encoder,
)
from .extract import Corpus, extract, read_corpus
from .format import write_embedding_file, write_labels_file, write_manifest

__version__ = "0.1.0"
