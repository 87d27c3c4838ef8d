"""Fusion of per-source embedding stacks into one vector per row.

Fifteen numbered strategies combine a 5-depth generative-LLM stack with
single-vector encoder embeddings through average pooling, max pooling,
concatenation, and co-occurrence pooling (Gram matrix of the depth-aligned
stack, squashed by the power normalization tanh(2*sigma*x)).  Strategies 14
and 15 carry learnable alignment projections with analytic gradients so they
can be trained jointly with the classifier head; everything else is
parameter-free.

All math here is double precision regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import SourceError, StrategyError, ValidationError

LLAMA2 = "llama2"
BERT = "bert"
ROBERTA = "roberta"

LLAMA2_DEPTHS = 5
# projected llama2 depths + bert + roberta rows in the co-occurrence stack
COOC_STACK_ROWS = LLAMA2_DEPTHS + 2

SIGMA_DEFAULT = 0.3  # midpoint of the recommended [0.1, 0.5] band
PROJECTION_DIM_DEFAULT = 1024

# Unqualified operator aliases resolve to the all-source rows; the
# source-qualified forms cover the two- and one-source variants.
STRATEGY_ALIASES = {
    "raw": 1,
    "avg": 2,
    "max": 3,
    "cat:llama2": 4,
    "avg+cat:bert": 5,
    "max+cat:bert": 6,
    "cat:bert": 7,
    "avg+cat:roberta": 8,
    "max+cat:roberta": 9,
    "cat:roberta": 10,
    "avg+cat": 11,
    "max+cat": 12,
    "cat": 13,
    "cat+co": 14,
    "cat+co+avg+cat": 15,
}

_REQUIRED_SOURCES = {
    **{i: (LLAMA2,) for i in (1, 2, 3, 4)},
    **{i: (LLAMA2, BERT) for i in (5, 6, 7)},
    **{i: (LLAMA2, ROBERTA) for i in (8, 9, 10)},
    **{i: (LLAMA2, BERT, ROBERTA) for i in (11, 12, 13, 14, 15)},
}


@dataclass(frozen=True)
class FusionStrategy:
    """One numbered fusion recipe plus its hyperparameters."""

    index: int
    sigma: float = SIGMA_DEFAULT
    projection_dim: int = PROJECTION_DIM_DEFAULT

    def __post_init__(self):
        if self.index not in _REQUIRED_SOURCES:
            raise StrategyError(f"unknown strategy index {self.index} (valid: 1..15)")
        if not (self.sigma > 0):
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if self.projection_dim < 1:
            raise ValidationError(f"projection_dim must be >= 1, got {self.projection_dim}")

    @property
    def required_sources(self) -> tuple[str, ...]:
        return _REQUIRED_SOURCES[self.index]

    @property
    def learnable(self) -> bool:
        return self.index in (14, 15)


def resolve_strategy(
    selector: int | str,
    sigma: float = SIGMA_DEFAULT,
    projection_dim: int = PROJECTION_DIM_DEFAULT,
) -> FusionStrategy:
    """Build a strategy from an integer index or a named alias."""
    if isinstance(selector, str):
        key = selector.strip().lower()
        if key in STRATEGY_ALIASES:
            index = STRATEGY_ALIASES[key]
        else:
            try:
                index = int(key)
            except ValueError:
                known = ", ".join(sorted(STRATEGY_ALIASES))
                raise StrategyError(
                    f"unknown strategy {selector!r} (valid: 1..15 or one of: {known})"
                ) from None
    else:
        index = selector
    return FusionStrategy(index=index, sigma=sigma, projection_dim=projection_dim)


def avg_pool(stack: np.ndarray) -> np.ndarray:
    """Elementwise mean over the depth axis: (..., H, K) -> (..., K)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[-2] < 1:
        raise ValidationError("avg_pool needs at least one depth row")
    return stack.mean(axis=-2)


def max_pool(stack: np.ndarray) -> np.ndarray:
    """Elementwise maximum over the depth axis: (..., H, K) -> (..., K)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[-2] < 1:
        raise ValidationError("max_pool needs at least one depth row")
    return stack.max(axis=-2)


def concat(parts: list[np.ndarray] | tuple[np.ndarray, ...]) -> np.ndarray:
    """Concatenate vectors (or batches of vectors) along the last axis."""
    if len(parts) < 1:
        raise ValidationError("concat needs at least one part")
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=-1)


def power_normalize(x: np.ndarray | float, sigma: float) -> np.ndarray:
    """Odd, strictly increasing squashing into (-1, 1): tanh(2*sigma*x)."""
    if not (sigma > 0):
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    return np.tanh(2.0 * sigma * np.asarray(x, dtype=np.float64))


def cooccurrence(x: np.ndarray, sigma: float) -> np.ndarray:
    """Row-concatenated Gram matrix of (..., H, K), power-normalized.

    Output length H*H; entry i*H+j is PN(<row_i, row_j>).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ValidationError("cooccurrence needs an (..., H, K) stack with H >= 1")
    gram = x @ np.swapaxes(x, -1, -2)
    h = gram.shape[-1]
    flat = gram.reshape(*gram.shape[:-2], h * h)
    return power_normalize(flat, sigma)


@dataclass
class Projection:
    """Learnable affine resize of one source's depth vectors: (K_m,) -> (K*,)."""

    weight: np.ndarray  # (K_m, K*)
    bias: np.ndarray  # (K*,)


@dataclass
class ProjectionParams:
    projections: dict[str, Projection] = field(default_factory=dict)
    learnable: bool = True

    def check_shapes(self, dims: Mapping[str, tuple[int, int]], k_star: int) -> None:
        for name, proj in self.projections.items():
            if name not in dims:
                raise SourceError(f"projection for unknown source '{name}'")
            k_m = dims[name][1]
            if proj.weight.shape != (k_m, k_star) or proj.bias.shape != (k_star,):
                raise ValidationError(
                    f"projection '{name}' has weight {proj.weight.shape} / bias "
                    f"{proj.bias.shape}, expected {(k_m, k_star)} / {(k_star,)}"
                )


def init_projections(
    strategy: FusionStrategy,
    dims: Mapping[str, tuple[int, int]],
    seed: int = 0,
) -> ProjectionParams | None:
    """Uniform(-1/sqrt(K_m), 1/sqrt(K_m)) weights, zero bias; None if unused."""
    if not strategy.learnable:
        return None
    if LLAMA2 not in dims:
        raise SourceError(f"strategy {strategy.index} needs source '{LLAMA2}'")
    rng = np.random.default_rng(seed)
    k_m = dims[LLAMA2][1]
    scale = 1.0 / np.sqrt(k_m)
    weight = rng.uniform(-scale, scale, size=(k_m, strategy.projection_dim))
    bias = np.zeros(strategy.projection_dim)
    return ProjectionParams({LLAMA2: Projection(weight, bias)})


def _check_sources(strategy: FusionStrategy, dims: Mapping[str, tuple[int, int]]) -> None:
    missing = [s for s in strategy.required_sources if s not in dims]
    if missing:
        raise SourceError(
            f"strategy {strategy.index} needs sources {list(strategy.required_sources)}; "
            f"missing {missing}"
        )
    h_l = dims[LLAMA2][0]
    if strategy.index == 1:
        if h_l < 1:
            raise ValidationError(f"'{LLAMA2}' needs at least 1 depth")
    elif h_l != LLAMA2_DEPTHS:
        raise ValidationError(
            f"strategy {strategy.index} needs '{LLAMA2}' with {LLAMA2_DEPTHS} depths, got {h_l}"
        )
    for enc in (BERT, ROBERTA):
        if enc in strategy.required_sources and dims[enc][0] != 1:
            raise ValidationError(f"'{enc}' must have exactly 1 depth, got {dims[enc][0]}")
    if strategy.learnable:
        k_star = strategy.projection_dim
        if dims[BERT][1] != k_star or dims[ROBERTA][1] != k_star:
            raise ValidationError(
                f"strategy {strategy.index} stacks unprojected '{BERT}' ({dims[BERT][1]}-d) "
                f"and '{ROBERTA}' ({dims[ROBERTA][1]}-d) with projection_dim {k_star}; "
                "all three must agree"
            )


def fused_dim(strategy: FusionStrategy, dims: Mapping[str, tuple[int, int]]) -> int:
    """Exact output width of ``fuse`` for these source shapes."""
    _check_sources(strategy, dims)
    k_l = dims[LLAMA2][1]
    k_b = dims[BERT][1] if BERT in dims else 0
    k_r = dims[ROBERTA][1] if ROBERTA in dims else 0
    idx = strategy.index
    if idx in (1, 2, 3):
        return k_l
    if idx == 4:
        return LLAMA2_DEPTHS * k_l
    if idx in (5, 6):
        return k_l + k_b
    if idx == 7:
        return LLAMA2_DEPTHS * k_l + k_b
    if idx in (8, 9):
        return k_l + k_r
    if idx == 10:
        return LLAMA2_DEPTHS * k_l + k_r
    if idx in (11, 12):
        return k_l + k_b + k_r
    if idx == 13:
        return LLAMA2_DEPTHS * k_l + k_b + k_r
    if idx == 14:
        return COOC_STACK_ROWS * COOC_STACK_ROWS
    return COOC_STACK_ROWS * COOC_STACK_ROWS + k_l  # 15


@dataclass
class FuseCache:
    """Intermediates of strategies 14/15 kept for the analytic backward pass."""

    stack: np.ndarray  # X: (B, 7, K*) projected + encoder rows
    pn: np.ndarray  # tanh(2 sigma g): (B, 49)
    llama2: np.ndarray  # unprojected (B, 5, K_l), float64


@dataclass
class FusedBatch:
    vectors: np.ndarray  # (B, D_fused) float64
    strategy: FusionStrategy
    cache: FuseCache | None = None


def _flatten_depths(stack: np.ndarray) -> np.ndarray:
    b, h, k = stack.shape
    return stack.reshape(b, h * k)


def fuse(
    stacks: Mapping[str, np.ndarray],
    strategy: FusionStrategy,
    params: ProjectionParams | None = None,
) -> FusedBatch:
    """Apply one strategy to per-source (B, H, K) stacks.

    Strategies 14/15 require ``params`` with a projection for the generative
    stack and cache their intermediates for ``fuse_backward``.
    """
    dims = {name: (s.shape[-2], s.shape[-1]) for name, s in stacks.items()}
    _check_sources(strategy, dims)
    batch_sizes = {name: s.shape[0] for name, s in stacks.items()}
    if len(set(batch_sizes.values())) > 1:
        raise ValidationError(f"sources disagree on batch size: {batch_sizes}")

    l = np.asarray(stacks[LLAMA2], dtype=np.float64)
    bert = (
        np.asarray(stacks[BERT], dtype=np.float64)[:, 0, :]
        if BERT in strategy.required_sources
        else None
    )
    roberta = (
        np.asarray(stacks[ROBERTA], dtype=np.float64)[:, 0, :]
        if ROBERTA in strategy.required_sources
        else None
    )

    idx = strategy.index
    cache = None
    if idx == 1:
        out = l[:, 0, :].copy()
    elif idx == 2:
        out = avg_pool(l)
    elif idx == 3:
        out = max_pool(l)
    elif idx == 4:
        out = _flatten_depths(l)
    elif idx == 5:
        out = concat([avg_pool(l), bert])
    elif idx == 6:
        out = concat([max_pool(l), bert])
    elif idx == 7:
        out = concat([_flatten_depths(l), bert])
    elif idx == 8:
        out = concat([avg_pool(l), roberta])
    elif idx == 9:
        out = concat([max_pool(l), roberta])
    elif idx == 10:
        out = concat([_flatten_depths(l), roberta])
    elif idx == 11:
        out = concat([avg_pool(l), bert, roberta])
    elif idx == 12:
        out = concat([max_pool(l), bert, roberta])
    elif idx == 13:
        out = concat([_flatten_depths(l), bert, roberta])
    else:  # 14, 15: project, stack, Gram, PN
        if params is None or LLAMA2 not in params.projections:
            raise ValidationError(
                f"strategy {idx} needs projection parameters (see init_projections)"
            )
        params.check_shapes(dims, strategy.projection_dim)
        proj = params.projections[LLAMA2]
        projected = l @ proj.weight + proj.bias  # (B, 5, K*)
        x = np.concatenate([projected, bert[:, None, :], roberta[:, None, :]], axis=1)
        gram = x @ np.swapaxes(x, -1, -2)  # (B, 7, 7)
        pn = power_normalize(
            gram.reshape(-1, COOC_STACK_ROWS * COOC_STACK_ROWS), strategy.sigma
        )
        cache = FuseCache(stack=x, pn=pn, llama2=l)
        out = pn if idx == 14 else concat([pn, avg_pool(l)])

    return FusedBatch(vectors=out, strategy=strategy, cache=cache)


def fuse_backward(
    batch: FusedBatch, upstream: np.ndarray
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Gradients of sum(upstream * vectors) w.r.t. projection weights and biases.

    Strategies without learnable parts return an empty mapping.  The chain is
    PN' = 2 sigma (1 - pn^2), then dG -> dX = (U + U^T) X through the Gram
    bilinear form, then the affine projection.
    """
    if not batch.strategy.learnable:
        return {}
    if batch.cache is None:
        raise ValidationError(
            f"strategy {batch.strategy.index} batch is missing its forward cache"
        )
    cache = batch.cache
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != batch.vectors.shape:
        raise ValidationError(
            f"upstream gradient shape {upstream.shape} != fused shape {batch.vectors.shape}"
        )
    n_cooc = COOC_STACK_ROWS * COOC_STACK_ROWS
    u_pn = upstream[:, :n_cooc]  # strategy 15's avg tail holds no parameters
    sigma = batch.strategy.sigma
    u_gram = (u_pn * 2.0 * sigma * (1.0 - cache.pn**2)).reshape(
        -1, COOC_STACK_ROWS, COOC_STACK_ROWS
    )
    d_stack = (u_gram + np.swapaxes(u_gram, -1, -2)) @ cache.stack  # (B, 7, K*)
    d_proj = d_stack[:, :LLAMA2_DEPTHS, :]  # encoder rows are frozen inputs
    d_weight = np.einsum("bdi,bdo->io", cache.llama2, d_proj)
    d_bias = d_proj.sum(axis=(0, 1))
    return {LLAMA2: (d_weight, d_bias)}
