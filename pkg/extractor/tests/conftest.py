import hashlib

import pytest
import torch


class WhitespaceTokenizer:
    """Minimal HF-shaped tokenizer: stable hash of whitespace tokens."""

    def __init__(self, vocab_size=50, pad_id=0):
        self.vocab_size = vocab_size
        self.pad_id = pad_id

    def _ids(self, text):
        out = []
        for tok in text.split():
            digest = hashlib.sha256(tok.encode()).digest()
            out.append(2 + int.from_bytes(digest[:4], "little") % (self.vocab_size - 2))
        return out or [1]

    def __call__(self, texts, return_tensors=None, padding=False, truncation=False,
                 max_length=None):
        single = isinstance(texts, str)
        batch = [texts] if single else list(texts)
        ids = [self._ids(t) for t in batch]
        if truncation and max_length is not None:
            ids = [seq[:max_length] for seq in ids]
        if single and return_tensors is None:
            return {"input_ids": ids[0]}
        width = max(len(seq) for seq in ids)
        mask = [[1] * len(seq) + [0] * (width - len(seq)) for seq in ids]
        ids = [seq + [self.pad_id] * (width - len(seq)) for seq in ids]
        if return_tensors == "pt":
            return {
                "input_ids": torch.tensor(ids),
                "attention_mask": torch.tensor(mask),
            }
        return {"input_ids": ids, "attention_mask": mask}


@pytest.fixture(scope="session")
def tokenizer():
    return WhitespaceTokenizer()


@pytest.fixture(scope="session")
def tiny_bert():
    from transformers import BertConfig, BertModel

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=50,
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    return BertModel(config)


@pytest.fixture(scope="session")
def tiny_llama():
    from transformers import LlamaConfig, LlamaModel

    torch.manual_seed(1)
    config = LlamaConfig(
        vocab_size=50,
        hidden_size=16,
        num_hidden_layers=6,
        num_attention_heads=2,
        num_key_value_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    return LlamaModel(config)
