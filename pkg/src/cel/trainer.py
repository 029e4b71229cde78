"""Dense ReLU classifier trained by mini-batch SGD with momentum and weight decay.

Everything is float64 numpy and driven by a single seeded ``numpy.random.Generator``
whose state travels inside each :class:`Checkpoint`, so a stage resumed from a
checkpoint continues the exact random stream of the run that produced it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from cel.dataset import LabeledDataset

CHECKPOINT_FORMAT = "cel-checkpoint"
CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Raised when a loss, activation or gradient stops being finite."""

    def __init__(self, message: str, stage: Optional[int] = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch


@dataclass
class DenseModel:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_dims = tuple(int(n) for n in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs at least input and output sizes")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if W.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {i}: expected W{shape} and b({shape[1]},)")

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "DenseModel":
        dims = tuple(layer_dims)
        return cls(dims, [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])], [np.zeros(b) for b in dims[1:]])

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "DenseModel":
        """Glorot-uniform weights, zero biases."""
        dims = tuple(layer_dims)
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        return cls(dims, weights, [np.zeros(b) for b in dims[1:]])

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order W1, b1, W2, b2, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DenseModel":
        return DenseModel(self.layer_dims, list(params[0::2]), list(params[1::2]))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    @classmethod
    def from_flat(cls, layer_dims: Sequence[int], flat: np.ndarray) -> "DenseModel":
        template = cls.zeros(layer_dims)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != template.num_parameters():
            raise ValueError(f"expected {template.num_parameters()} parameters, got {flat.size}")
        params, pos = [], 0
        for p in template.parameters():
            params.append(flat[pos : pos + p.size].reshape(p.shape).copy())
            pos += p.size
        return template.with_parameters(params)

    def copy(self) -> "DenseModel":
        return self.with_parameters([p.copy() for p in self.parameters()])


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    initial_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 1
    lr_drop_points: tuple[float, ...] = (0.5, 0.75)
    lr_drop_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_points", tuple(float(q) for q in self.lr_drop_points))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        q = self.lr_drop_points
        if any(not 0 < x < 1 for x in q) or any(a >= b for a, b in zip(q, q[1:])):
            raise ValueError("lr_drop_points must be strictly increasing within (0, 1)")


@dataclass
class Checkpoint:
    model: DenseModel
    stage: int
    epoch: int
    rng_state: dict

    def rng(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.PCG64())
        gen.bit_generator.state = self.rng_state
        return gen

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_dims": list(self.model.layer_dims),
            "parameters": self.model.flat().tolist(),
            "stage": self.stage,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r} v{d.get('version')}")
        model = DenseModel.from_flat(d["layer_dims"], np.array(d["parameters"], dtype=np.float64))
        return cls(model, int(d["stage"]), int(d["epoch"]), d["rng_state"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fresh_checkpoint(layer_dims: Sequence[int], seed: int) -> Checkpoint:
    """Seeded random initialization; the stage-0 starting point."""
    rng = np.random.default_rng(seed)
    model = DenseModel.initialize(layer_dims, rng)
    return Checkpoint(model, stage=0, epoch=0, rng_state=rng.bit_generator.state)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: Optional[float]
    val_loss: float
    accuracy: float
    per_class_error: list[Optional[float]] = field(default_factory=list)

    @property
    def error(self) -> float:
        return 1.0 - self.accuracy

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "accuracy": self.accuracy,
            "per_class_error": list(self.per_class_error),
        }


# -- forward / loss / backward ------------------------------------------------


def _forward_cache(model: DenseModel, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    acts, pre = [X], []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts, pre


def _as_batch(model: DenseModel, features) -> tuple[np.ndarray, bool]:
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.layer_dims[0]:
        raise ValueError(f"feature dimension {X.shape[1]} != model input {model.layer_dims[0]}")
    return X, single


def forward(model: DenseModel, features) -> np.ndarray:
    """Logits for one sample (1-D input) or a batch (2-D input)."""
    X, single = _as_batch(model, features)
    logits = _forward_cache(model, X)[0][-1]
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite activation in forward pass")
    return logits[0] if single else logits


def hidden_features(model: DenseModel, features) -> np.ndarray:
    """Penultimate-layer activations (the input itself for a single-layer model)."""
    X, single = _as_batch(model, features)
    acts, _ = _forward_cache(model, X)
    h = acts[-2]
    return h[0] if single else h


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def loss(logits, label: int) -> float:
    """Softmax cross-entropy of a single logit vector."""
    return float(-log_softmax(np.asarray(logits, dtype=np.float64))[label])


def batch_losses(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -log_softmax(logits)[np.arange(labels.shape[0]), labels]


def mean_loss(model: DenseModel, X: np.ndarray, y: np.ndarray) -> float:
    return float(batch_losses(forward(model, X), y).mean())


def _losses_and_gradients(model: DenseModel, X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    acts, pre = _forward_cache(model, X)
    losses = batch_losses(acts[-1], y)
    delta = softmax(acts[-1])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads += [delta.sum(axis=0), acts[i].T @ delta]
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    grads.reverse()
    return losses, grads


def gradients(model: DenseModel, X: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Gradient of the mean batch cross-entropy, ordered like ``model.parameters()``."""
    X, _ = _as_batch(model, X)
    _, grads = _losses_and_gradients(model, X, np.asarray(y, dtype=np.int64))
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("non-finite gradient")
    return grads


def sgd_step(
    model: DenseModel,
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> tuple[DenseModel, list[np.ndarray]]:
    """v <- momentum*v - lr*(g + wd*theta); theta <- theta + v."""
    params = model.parameters()
    if not (len(grads) == len(velocity) == len(params)):
        raise ValueError("gradient/velocity structure does not match the model")
    new_v, new_p = [], []
    for p, g, v in zip(params, grads, velocity):
        v = momentum * v - lr * (g + weight_decay * p)
        new_v.append(v)
        new_p.append(p + v)
    return model.with_parameters(new_p), new_v


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Step schedule: a drop at fraction q takes effect from epoch ceil(q * epochs)."""
    passed = sum(1 for q in config.lr_drop_points if epoch >= math.ceil(round(q * config.epochs, 9)))
    return config.initial_lr * config.lr_drop_factor**passed


# -- training / evaluation ----------------------------------------------------


def evaluate(model: DenseModel, test_ds: LabeledDataset, epoch: int = -1, train_loss: Optional[float] = None) -> EpochMetrics:
    if len(test_ds) == 0:
        raise ValueError("empty test set")
    logits = forward(model, test_ds.features)
    pred = logits.argmax(axis=1)
    wrong = pred != test_ds.labels
    counts = np.bincount(test_ds.labels, minlength=test_ds.num_classes)
    errs = np.bincount(test_ds.labels, weights=wrong, minlength=test_ds.num_classes)
    per_class = [float(e / c) if c else None for e, c in zip(errs, counts)]
    return EpochMetrics(
        epoch=epoch,
        train_loss=train_loss,
        val_loss=float(batch_losses(logits, test_ds.labels).mean()),
        accuracy=float(1.0 - wrong.mean()),
        per_class_error=per_class,
    )


def epoch_batches(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    """One shuffled pass over ``range(n)``; the final short batch is kept."""
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_stage(
    init: Checkpoint,
    pool,
    ds: LabeledDataset,
    config: TrainConfig,
    eval_ds: Optional[LabeledDataset] = None,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> tuple[Checkpoint, list[EpochMetrics]]:
    """Run ``config.epochs`` of shuffled mini-batch SGD over ``ds[pool]`` only.

    Parameters and the RNG stream are taken from ``init``; momentum starts at
    zero and the learning-rate schedule restarts. Metrics are measured on
    ``eval_ds`` (the pool itself if omitted) after each epoch.
    """
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        raise ValueError("empty training pool")
    model = init.model.copy()
    if model.layer_dims[0] != ds.feature_dim or model.num_classes != ds.num_classes:
        raise ValueError(f"model {model.layer_dims} incompatible with data (d={ds.feature_dim}, M={ds.num_classes})")
    stage = init.stage + 1
    rng = init.rng()
    X, y = ds.features[pool], ds.labels[pool]
    monitor = eval_ds if eval_ds is not None else ds.subset(pool)
    velocity = [np.zeros_like(p) for p in model.parameters()]
    history: list[EpochMetrics] = []
    n = pool.size
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        total = 0.0
        for b in epoch_batches(rng, n, config.batch_size):
            batch_loss, grads = _losses_and_gradients(model, X[b], y[b])
            if not (np.all(np.isfinite(batch_loss)) and all(np.all(np.isfinite(g)) for g in grads)):
                raise DivergenceError(f"non-finite loss in stage {stage}, epoch {epoch}", stage, epoch)
            total += float(batch_loss.sum())
            model, velocity = sgd_step(model, grads, velocity, lr, config.momentum, config.weight_decay)
        try:
            m = evaluate(model, monitor, epoch=init.epoch + epoch, train_loss=total / n)
        except DivergenceError:
            raise DivergenceError(f"non-finite activation in stage {stage}, epoch {epoch}", stage, epoch) from None
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return Checkpoint(model, stage, init.epoch + config.epochs, rng.bit_generator.state), history


def grad_check(
    model: DenseModel,
    X: np.ndarray,
    y: np.ndarray,
    step: float = 1e-5,
    grad_fn: Callable[[DenseModel, np.ndarray, np.ndarray], list[np.ndarray]] = gradients,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between ``grad_fn`` and central finite differences.

    Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps entries
    that are zero on both sides from dividing by zero.
    """
    analytic = grad_fn(model, X, y)
    params = [p.copy() for p in model.parameters()]
    worst = 0.0
    for pi, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = mean_loss(model.with_parameters(params), X, y)
            p[idx] = orig - step
            down = mean_loss(model.with_parameters(params), X, y)
            p[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[pi][idx]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
