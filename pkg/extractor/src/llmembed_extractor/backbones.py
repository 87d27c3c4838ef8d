"""Embedding backbones: frozen transformers models plus a deterministic stub.

Every backbone turns a batch of texts into a float32 (batch, n_depths, dim)
array whose depth axis is ordered from the model's last block backwards
(index 0 = last block).  Generative models are sampled at their last
``n_depths`` blocks with a padding-masked mean over token embeddings;
encoder models contribute one row, either the classification-token state or
the masked token mean.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np


class Backbone(Protocol):
    n_depths: int
    dim: int

    def embed_batch(self, texts: list[str]) -> tuple[np.ndarray, int]:
        """(batch, n_depths, dim) float32 embeddings and the truncation count."""
        ...


def _masked_mean(hidden, mask):
    # hidden: (B, T, K) tensor; mask: (B, T) of 0/1; padding excluded
    weights = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1)


@dataclass
class CausalBackbone:
    """Generative model sampled at decoder blocks counted from the end.

    ``depths`` lists block positions (1 = last block); the output depth axis
    follows the list order.
    """

    model: object
    tokenizer: object
    depths: tuple[int, ...] = (1, 2, 3, 4, 5)
    max_length: int = 4096

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.dim = int(self.model.config.hidden_size)
        n_blocks = int(self.model.config.num_hidden_layers)
        if not self.depths:
            raise ValueError("need at least one depth")
        if any(d < 1 or d > n_blocks for d in self.depths):
            raise ValueError(
                f"depths {list(self.depths)} out of range for a model with "
                f"{n_blocks} blocks"
            )
        self.model.eval()

    @property
    def n_depths(self) -> int:
        return len(self.depths)

    def embed_batch(self, texts):
        import torch

        truncated = sum(
            1 for t in texts if len(self.tokenizer(t)["input_ids"]) > self.max_length
        )
        enc = self.tokenizer(
            texts,
            return_tensors="pt",
            padding=True,
            truncation=True,
            max_length=self.max_length,
        )
        with torch.no_grad():
            out = self.model(
                input_ids=enc["input_ids"],
                attention_mask=enc["attention_mask"],
                output_hidden_states=True,
            )
        # hidden_states[0] is the embedding layer; [-d] is the last d-th block
        rows = [
            _masked_mean(out.hidden_states[-d], enc["attention_mask"])
            for d in self.depths
        ]
        stacked = torch.stack(rows, dim=1)
        return stacked.to(torch.float32).cpu().numpy(), truncated


@dataclass
class EncoderBackbone:
    """Encoder model contributing one final sentence vector per text."""

    model: object
    tokenizer: object
    mode: str = "cls"  # classification-token state, or "mean" over tokens
    max_length: int = 512

    def __post_init__(self):
        if self.mode not in ("cls", "mean"):
            raise ValueError(f"mode must be 'cls' or 'mean', got {self.mode!r}")
        self.dim = int(self.model.config.hidden_size)
        self.n_depths = 1
        self.model.eval()

    def embed_batch(self, texts):
        import torch

        truncated = sum(
            1 for t in texts if len(self.tokenizer(t)["input_ids"]) > self.max_length
        )
        enc = self.tokenizer(
            texts,
            return_tensors="pt",
            padding=True,
            truncation=True,
            max_length=self.max_length,
        )
        with torch.no_grad():
            out = self.model(
                input_ids=enc["input_ids"], attention_mask=enc["attention_mask"]
            )
        hidden = out.last_hidden_state
        if self.mode == "cls":
            sentence = hidden[:, 0, :]
        else:
            sentence = _masked_mean(hidden, enc["attention_mask"])
        return sentence[:, None, :].to(torch.float32).cpu().numpy(), truncated


@dataclass
class StubBackbone:
    """Deterministic whitespace-token backbone for tests and dry runs.

    Each (token, block) pair hashes to a fixed Gaussian vector, so block
    embeddings are exact token-mean oracles and identical across platforms.
    """

    n_depths: int
    dim: int
    seed: int = 0
    max_length: int = 64

    def token_embedding(self, token: str, depth: int) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{depth}:{token}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim).astype(np.float32)

    def embed_batch(self, texts):
        out = np.zeros((len(texts), self.n_depths, self.dim), dtype=np.float32)
        truncated = 0
        for i, text in enumerate(texts):
            tokens = text.split()
            if not tokens:
                raise ValueError(f"row {i}: empty text")
            if len(tokens) > self.max_length:
                tokens = tokens[: self.max_length]
                truncated += 1
            for d in range(self.n_depths):
                vecs = [self.token_embedding(tok, d) for tok in tokens]
                out[i, d] = np.mean(vecs, axis=0, dtype=np.float64).astype(np.float32)
        return out, truncated


def load_pretrained_causal(
    model_path: str, depths: tuple[int, ...] = (1, 2, 3, 4, 5), max_length: int = 4096
):
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_path)
    if tokenizer.pad_token is None:
        tokenizer.pad_token = tokenizer.eos_token
    model = AutoModel.from_pretrained(model_path)
    return CausalBackbone(model, tokenizer, depths=depths, max_length=max_length)


def load_pretrained_encoder(model_path: str, mode: str = "cls", max_length: int = 512):
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_path)
    model = AutoModel.from_pretrained(model_path)
    return EncoderBackbone(model, tokenizer, mode=mode, max_length=max_length)
