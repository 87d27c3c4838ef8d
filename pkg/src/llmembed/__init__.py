"""Frozen-backbone embedding fusion, classifier-head training, cost accounting."""

from .classifier import (
    ClassifierParams,
    TrainConfig,
    TrainReport,
    evaluate,
    forward_logits,
    load_checkpoint,
    predict,
    save_checkpoint,
    softmax_cross_entropy,
    train,
)
from .costs import (
    CostReport,
    PhaseTiming,
    PowerProfile,
    build_report,
    compare_report,
    electricity_bill,
    energy_kwh,
    token_budget,
)
from .errors import LLMEmbedError
from .fusion import (
    FusedBatch,
    FusionStrategy,
    ProjectionParams,
    avg_pool,
    concat,
    cooccurrence,
    fuse,
    fuse_backward,
    fused_dim,
    init_projections,
    max_pool,
    power_normalize,
    resolve_strategy,
)
from .store import (
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

__version__ = "0.1.0"
