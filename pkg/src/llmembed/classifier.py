"""Trainable head over fused embeddings: logits, cross-entropy, Adam, training.

The head is an affine map (optionally through one hidden layer) trained with
softmax cross-entropy and adaptive-moment gradient steps.  For strategies with
learnable alignment projections the projection gradients flow through
``fuse_backward`` and are updated jointly.  Everything runs in double
precision and is bitwise-reproducible for a fixed seed.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    CorruptionError,
    FormatError,
    MismatchError,
    TrainingDivergedError,
    ValidationError,
)
from .fusion import (
    FusionStrategy,
    ProjectionParams,
    Projection,
    fuse,
    fuse_backward,
    fused_dim,
    init_projections,
)
from .store import DatasetBundle

CHECKPOINT_MAGIC = b"LLMC"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "relu")
EVAL_CHUNK = 4096


@dataclass
class ClassifierParams:
    """Head weights; ``hidden_*`` are None for the plain affine head."""

    weight: np.ndarray  # (C, D) or (C, hidden)
    bias: np.ndarray  # (C,)
    hidden_weight: np.ndarray | None = None  # (hidden, D)
    hidden_bias: np.ndarray | None = None  # (hidden,)
    hidden_activation: str = "tanh"

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        if self.hidden_weight is not None:
            return self.hidden_weight.shape[1]
        return self.weight.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 100
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    deterministic: bool = False
    eval_every: int = 10
    hidden_width: int | None = None
    hidden_activation: str = "tanh"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("moment decay rates must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be > 0")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")
        if self.hidden_width is not None and self.hidden_width < 1:
            raise ValidationError("hidden_width must be >= 1")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValidationError(
                f"hidden_activation must be one of {_ACTIVATIONS}, got {self.hidden_activation!r}"
            )


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    eval_points: list[tuple[int, float]] = field(default_factory=list)
    phase_seconds: dict[str, float] = field(default_factory=dict)
    final_test_accuracy: float = 0.0
    optimizer: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "eval_points": [{"epoch": e, "accuracy": a} for e, a in self.eval_points],
            "phase_seconds": self.phase_seconds,
            "final_test_accuracy": self.final_test_accuracy,
            "optimizer": self.optimizer,
        }

    def loss_curve_text(self) -> str:
        return "".join(
            f"{epoch} {loss:.17g}\n" for epoch, loss in enumerate(self.epoch_losses, start=1)
        )


def init_classifier(
    n_classes: int,
    in_dim: int,
    hidden_width: int | None = None,
    hidden_activation: str = "tanh",
    seed: int = 0,
) -> ClassifierParams:
    """Zero-initialized affine head; hidden layer (if any) gets small uniform weights."""
    if hidden_width is None:
        return ClassifierParams(
            weight=np.zeros((n_classes, in_dim)), bias=np.zeros(n_classes)
        )
    rng = np.random.default_rng(seed)
    s_in = 1.0 / np.sqrt(in_dim)
    s_h = 1.0 / np.sqrt(hidden_width)
    return ClassifierParams(
        weight=rng.uniform(-s_h, s_h, size=(n_classes, hidden_width)),
        bias=np.zeros(n_classes),
        hidden_weight=rng.uniform(-s_in, s_in, size=(hidden_width, in_dim)),
        hidden_bias=np.zeros(hidden_width),
        hidden_activation=hidden_activation,
    )


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - h**2
    return (z > 0).astype(np.float64)


def _forward(params: ClassifierParams, x: np.ndarray):
    """Logits plus the intermediates the backward pass needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValidationError(
            f"input is {x.shape}, head expects (batch, {params.in_dim})"
        )
    if params.hidden_weight is None:
        return x @ params.weight.T + params.bias, (x, None, None)
    z = x @ params.hidden_weight.T + params.hidden_bias
    h = _activate(z, params.hidden_activation)
    return h @ params.weight.T + params.bias, (x, z, h)


def forward_logits(params: ClassifierParams, fused: np.ndarray) -> np.ndarray:
    logits, _ = _forward(params, fused)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValidationError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValidationError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), labels]))
    grad = softmax(logits)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def _head_backward(params: ClassifierParams, cache, grad_logits: np.ndarray):
    """Head parameter gradients and the gradient w.r.t. the fused input."""
    x, z, h = cache
    grads: dict[str, np.ndarray] = {}
    if params.hidden_weight is None:
        grads["head.weight"] = grad_logits.T @ x
        grads["head.bias"] = grad_logits.sum(axis=0)
        d_input = grad_logits @ params.weight
        return grads, d_input
    grads["head.weight"] = grad_logits.T @ h
    grads["head.bias"] = grad_logits.sum(axis=0)
    d_h = grad_logits @ params.weight
    d_z = d_h * _activate_grad(z, h, params.hidden_activation)
    grads["head.hidden_weight"] = d_z.T @ x
    grads["head.hidden_bias"] = d_z.sum(axis=0)
    d_input = d_z @ params.hidden_weight
    return grads, d_input


def _parameter_dict(
    clf: ClassifierParams, projections: ProjectionParams | None
) -> dict[str, np.ndarray]:
    params = {"head.weight": clf.weight, "head.bias": clf.bias}
    if clf.hidden_weight is not None:
        params["head.hidden_weight"] = clf.hidden_weight
        params["head.hidden_bias"] = clf.hidden_bias
    if projections is not None and projections.learnable:
        for name, proj in projections.projections.items():
            params[f"proj.{name}.weight"] = proj.weight
            params[f"proj.{name}.bias"] = proj.bias
    return params


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place adaptive-moment update with bias correction."""
    state.step += 1
    t = state.step
    for key, p in params.items():
        g = grads[key]
        state.m[key] = beta1 * state.m[key] + (1 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1 - beta2) * g * g
        m_hat = state.m[key] / (1 - beta1**t)
        v_hat = state.v[key] / (1 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _check_compatible(train: DatasetBundle, test: DatasetBundle) -> None:
    if train.class_names != test.class_names:
        raise MismatchError(
            f"train classes {list(train.class_names)} != test classes {list(test.class_names)}"
        )
    if train.source_dims() != test.source_dims():
        raise MismatchError(
            f"train sources {train.source_dims()} != test sources {test.source_dims()}"
        )


def train(
    train_bundle: DatasetBundle,
    test_bundle: DatasetBundle,
    strategy: FusionStrategy,
    config: TrainConfig = TrainConfig(),
) -> tuple[ClassifierParams, ProjectionParams | None, TrainReport]:
    """Mini-batch training: fuse -> logits -> cross-entropy -> Adam.

    Shuffles with a full permutation per epoch from the run seed; evaluates on
    the test bundle every ``eval_every`` epochs and once at the end.  Raises
    TrainingDivergedError (with epoch/batch/loss) if the loss goes non-finite.
    """
    _check_compatible(train_bundle, test_bundle)
    dims = train_bundle.source_dims()
    d_fused = fused_dim(strategy, dims)
    c = train_bundle.n_classes

    projections = init_projections(strategy, dims, seed=config.seed)
    clf = init_classifier(
        c, d_fused, config.hidden_width, config.hidden_activation, seed=config.seed
    )
    params = _parameter_dict(clf, projections)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    labels = train_bundle.labels
    n = train_bundle.n_rows

    report = TrainReport(
        optimizer={
            "name": "adam",
            "learning_rate": config.learning_rate,
            "beta1": config.beta1,
            "beta2": config.beta2,
            "epsilon": config.epsilon,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "seed": config.seed,
            "deterministic": config.deterministic,
        }
    )

    t_train = 0.0
    t_eval = 0.0
    for epoch in range(1, config.epochs + 1):
        tick = time.perf_counter()
        perm = rng.permutation(n)
        loss_sum = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            rows = perm[start : start + config.batch_size]
            batch = fuse(train_bundle.stacks(rows), strategy, projections)
            logits, cache = _forward(clf, batch.vectors)
            loss, grad_logits = softmax_cross_entropy(logits, labels[rows])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_index, loss)
            grads, d_fused_grad = _head_backward(clf, cache, grad_logits)
            if projections is not None:
                for name, (dw, db) in fuse_backward(batch, d_fused_grad).items():
                    grads[f"proj.{name}.weight"] = dw
                    grads[f"proj.{name}.bias"] = db
            adam_step(
                params,
                grads,
                state,
                lr=config.learning_rate,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.epsilon,
            )
            loss_sum += loss * len(rows)
        report.epoch_losses.append(loss_sum / n)
        t_train += time.perf_counter() - tick

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            tick = time.perf_counter()
            acc = evaluate(clf, projections, test_bundle, strategy)
            t_eval += time.perf_counter() - tick
            report.eval_points.append((epoch, acc))

    report.final_test_accuracy = report.eval_points[-1][1]
    report.phase_seconds = {"train": t_train, "eval": t_eval}
    return clf, projections, report


def evaluate(
    params: ClassifierParams,
    projections: ProjectionParams | None,
    bundle: DatasetBundle,
    strategy: FusionStrategy,
) -> float:
    """Fraction of rows whose argmax logit is the label (ties: lowest class)."""
    hits = 0
    for start in range(0, bundle.n_rows, EVAL_CHUNK):
        rows = np.arange(start, min(start + EVAL_CHUNK, bundle.n_rows))
        batch = fuse(bundle.stacks(rows), strategy, projections)
        logits = forward_logits(params, batch.vectors)
        hits += int((logits.argmax(axis=1) == bundle.labels[rows]).sum())
    return hits / bundle.n_rows


def predict(
    params: ClassifierParams,
    projections: ProjectionParams | None,
    stacks: Mapping[str, np.ndarray],
    strategy: FusionStrategy,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (argmax class index, softmax probabilities)."""
    batch = fuse(stacks, strategy, projections)
    logits = forward_logits(params, batch.vectors)
    probs = softmax(logits)
    return probs.argmax(axis=1), probs


# --- checkpoint format -----------------------------------------------------
# magic "LLMC", version u32, strategy u32, sigma f64, projection_dim u32,
# class names (u32 count, each u16 len + utf8), source dims (u8 count, each
# name + depths u32 + dim u32), hidden config (u8 flag, u32 width, u8 act),
# then float64 parameter blocks in a fixed order.

_STR = struct.Struct("<H")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _STR.pack(len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CorruptionError(f"{self.path}: checkpoint truncated")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(count * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_checkpoint(
    path: str | Path,
    clf: ClassifierParams,
    projections: ProjectionParams | None,
    strategy: FusionStrategy,
    class_names: tuple[str, ...],
    source_dims: Mapping[str, tuple[int, int]],
) -> None:
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IIdI", CHECKPOINT_VERSION, strategy.index, strategy.sigma,
                    strategy.projection_dim),
        struct.pack("<I", len(class_names)),
    ]
    parts += [_pack_str(name) for name in class_names]
    dims_items = sorted(source_dims.items())
    parts.append(struct.pack("<B", len(dims_items)))
    for name, (depths, dim) in dims_items:
        parts.append(_pack_str(name) + struct.pack("<II", depths, dim))
    if clf.hidden_weight is not None:
        act = _ACTIVATIONS.index(clf.hidden_activation)
        parts.append(struct.pack("<BIB", 1, clf.hidden_weight.shape[0], act))
        arrays = [clf.hidden_weight, clf.hidden_bias, clf.weight, clf.bias]
    else:
        parts.append(struct.pack("<BIB", 0, 0, 0))
        arrays = [clf.weight, clf.bias]
    proj_items = (
        sorted(projections.projections.items()) if projections is not None else []
    )
    parts.append(struct.pack("<B", len(proj_items)))
    for name, proj in proj_items:
        parts.append(_pack_str(name))
        arrays += [proj.weight, proj.bias]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path):
    """Returns (clf, projections, strategy, class_names, source_dims)."""
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, index, sigma, projection_dim = r.unpack("<IIdI")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    strategy = FusionStrategy(index=index, sigma=sigma, projection_dim=projection_dim)
    (n_classes,) = r.unpack("<I")
    class_names = tuple(r.string() for _ in range(n_classes))
    (n_sources,) = r.unpack("<B")
    source_dims: dict[str, tuple[int, int]] = {}
    for _ in range(n_sources):
        name = r.string()
        depths, dim = r.unpack("<II")
        source_dims[name] = (depths, dim)
    hidden_flag, hidden_width, act_code = r.unpack("<BIB")
    (n_proj,) = r.unpack("<B")
    proj_names = [r.string() for _ in range(n_proj)]
    d_fused = fused_dim(strategy, source_dims)
    if hidden_flag:
        activation = _ACTIVATIONS[act_code]
        hidden_weight = r.array((hidden_width, d_fused))
        hidden_bias = r.array((hidden_width,))
        weight = r.array((n_classes, hidden_width))
        bias = r.array((n_classes,))
        clf = ClassifierParams(weight, bias, hidden_weight, hidden_bias, activation)
    else:
        weight = r.array((n_classes, d_fused))
        bias = r.array((n_classes,))
        clf = ClassifierParams(weight, bias)
    projections = None
    if n_proj:
        projs = {}
        for name in proj_names:
            k_m = source_dims[name][1]
            projs[name] = Projection(
                weight=r.array((k_m, strategy.projection_dim)),
                bias=r.array((strategy.projection_dim,)),
            )
        projections = ProjectionParams(projs)
    if r.off != len(r.blob):
        raise CorruptionError(f"{path}: {len(r.blob) - r.off} trailing bytes")
    return clf, projections, strategy, class_names, source_dims
