"""
Quantization-Aware MLP - binary and multi-level weight training
Sigmoid hidden layers, straight-through estimator on real-valued shadow weights
"""
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from crossbar import append_bias
from device_model import SUPPORTED_LEVELS

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (784, 200, 10)
EVAL_BATCH = 1000
DEAD_WEIGHT = 1e-3


class NetworkError(ValueError):
    """Invalid network construction or input"""


class EmptyDatasetError(NetworkError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


class LossKind(Enum):
    CROSS_ENTROPY = "cross-entropy-softmax"
    MSE = "mse-sigmoid"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, LossKind):
            return value
        for kind in cls:
            if kind.value == str(value).strip().lower():
                return kind
        raise NetworkError(f"Unknown loss '{value}' (expected {', '.join(k.value for k in cls)})")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    seed: int = 1
    levels: int = 2
    fraction_set: Optional[np.ndarray] = None
    loss: LossKind = LossKind.CROSS_ENTROPY
    quantized: bool = True
    workers: int = 1

    def __post_init__(self):
        self.loss = LossKind.parse(self.loss)
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise NetworkError("epochs, batch_size and workers must be positive")
        if not self.learning_rate > 0:
            raise NetworkError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.levels not in SUPPORTED_LEVELS:
            raise NetworkError(f"levels must be one of {SUPPORTED_LEVELS}, got {self.levels}")
        if self.fraction_set is None and self.levels == 2:
            self.fraction_set = np.array([0.0, 1.0])
        if self.fraction_set is not None:
            self.fraction_set = validate_fraction_set(self.fraction_set, self.levels)


@dataclass(eq=False)
class MLPModel:
    dims: List[int]
    shadow_weights: List[np.ndarray]
    seed: int = 1
    epoch: int = 0

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        if len(self.dims) < 2:
            raise NetworkError(f"An MLP needs at least two layer sizes, got {self.dims}")
        if len(self.shadow_weights) != len(self.dims) - 1:
            raise NetworkError("One weight matrix per layer transition is required")
        for (fan_in, fan_out), w in zip(zip(self.dims[:-1], self.dims[1:]), self.shadow_weights):
            if w.shape != (fan_in + 1, fan_out):
                raise NetworkError(f"Weight shape {w.shape} does not match ({fan_in + 1}, {fan_out})")

    @classmethod
    def initialize(cls, dims=DEFAULT_DIMS, seed: int = 1, levels: int = 2) -> "MLPModel":
        """
        Binary nets start close to zero. Multi-level nets draw from [-1, 1] so that
        every level is populated from the first step; a small start would quantize
        to the lowest fraction and stall the hidden-layer gradients.
        """
        if levels not in SUPPORTED_LEVELS:
            raise NetworkError(f"levels must be one of {SUPPORTED_LEVELS}, got {levels}")
        rng = np.random.default_rng(seed)
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            shape = (fan_in + 1, fan_out)
            if levels == 2:
                weights.append(rng.uniform(-0.5, 0.5, shape) / math.sqrt(fan_in))
            else:
                weights.append(rng.uniform(-1.0, 1.0, shape))
        return cls(list(dims), weights, seed=seed)

    @property
    def scales(self) -> List[float]:
        return [layer_scale(fan_in) for fan_in in self.dims[:-1]]

    def copy(self) -> "MLPModel":
        return MLPModel(list(self.dims), [w.copy() for w in self.shadow_weights], self.seed, self.epoch)


@dataclass(eq=False)
class QuantizedNetwork:
    """Quantized matrices (bias row last) ready to be programmed into crossbars."""
    dims: List[int]
    weights: List[np.ndarray]
    fraction_set: np.ndarray
    levels: int
    scales: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.scales:
            self.scales = [layer_scale(fan_in) for fan_in in self.dims[:-1]]


def layer_scale(fan_in: int) -> float:
    return 1.0 / math.sqrt(fan_in + 1)


def validate_fraction_set(fractions, levels: int) -> np.ndarray:
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.ndim != 1 or len(fractions) != levels:
        raise NetworkError(f"fraction_set must hold {levels} values, got {fractions.tolist()}")
    if np.any(np.diff(fractions) <= 0) or fractions[-1] != 1.0 or fractions[0] < 0:
        raise NetworkError(f"fraction_set must be strictly increasing in [0, 1] ending at 1: {fractions.tolist()}")
    return fractions


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def quantize_weights(shadow: np.ndarray, fraction_set) -> np.ndarray:
    """
    Binary: sign(w) with sign(0) = +1.
    Multi-level: nearest of +-f_l, ties resolved toward the larger magnitude.
    """
    fractions = np.asarray(fraction_set, dtype=np.float64)
    w = np.asarray(shadow, dtype=np.float64)
    sign = np.where(w >= 0, 1.0, -1.0)
    if len(fractions) == 2:
        return sign
    distance = np.abs(np.abs(w)[..., None] - fractions)
    # argmin over the reversed axis returns the largest index among ties
    level = len(fractions) - 1 - np.argmin(distance[..., ::-1], axis=-1)
    return sign * fractions[level]


def effective_weights(model: MLPModel, quantized: bool, fraction_set=None) -> List[np.ndarray]:
    if not quantized:
        return model.shadow_weights
    if fraction_set is None:
        raise NetworkError("A fraction set is required for the quantized forward pass")
    return [quantize_weights(w, fraction_set) for w in model.shadow_weights]


def _forward_pass(weights: List[np.ndarray], scales: List[float], x: np.ndarray):
    inputs = []
    a = append_bias(np.asarray(x, dtype=np.float64))
    z = None
    for i, (w, scale) in enumerate(zip(weights, scales)):
        inputs.append(a)
        z = scale * (a @ w)
        if i < len(weights) - 1:
            a = append_bias(sigmoid(z))
    return inputs, z


def forward_software(model: MLPModel, x: np.ndarray, quantized: bool = False, fraction_set=None,
                     loss: LossKind = LossKind.CROSS_ENTROPY) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dims[0]:
        raise NetworkError(f"Input has {x.shape[-1]} features, model expects {model.dims[0]}")
    _, logits = _forward_pass(effective_weights(model, quantized, fraction_set), model.scales, x)
    return logits if LossKind.parse(loss) is LossKind.CROSS_ENTROPY else sigmoid(logits)


def forward_quantized(qnet: QuantizedNetwork, x: np.ndarray) -> np.ndarray:
    _, logits = _forward_pass(qnet.weights, qnet.scales, np.asarray(x, dtype=np.float64))
    return logits


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    y = np.zeros((len(labels), classes))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def _backprop(weights: List[np.ndarray], scales: List[float], x: np.ndarray, y: np.ndarray,
              loss: LossKind, denom: int) -> Tuple[float, List[np.ndarray]]:
    """Summed loss / denom and gradients w.r.t. the weights used in the forward pass."""
    inputs, z = _forward_pass(weights, scales, x)
    if loss is LossKind.CROSS_ENTROPY:
        shifted = z - z.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        value = -float(np.sum(y * log_probs)) / denom
        delta = (softmax(z) - y) / denom
    else:
        out = sigmoid(z)
        value = 0.5 * float(np.sum((out - y) ** 2)) / denom
        delta = (out - y) * out * (1.0 - out) / denom

    grads = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grads[i] = scales[i] * (inputs[i].T @ delta)
        if i > 0:
            h = inputs[i][:, :-1]
            delta = scales[i] * (delta @ weights[i][:-1].T) * h * (1.0 - h)
    return value, grads


def loss_and_gradients(model: MLPModel, x: np.ndarray, labels: np.ndarray, quantized: bool = False,
                       fraction_set=None, loss: LossKind = LossKind.CROSS_ENTROPY):
    y = _one_hot(np.asarray(labels), model.dims[-1])
    weights = effective_weights(model, quantized, fraction_set)
    return _backprop(weights, model.scales, np.asarray(x, dtype=np.float64), y, LossKind.parse(loss), len(y))


def _batch_gradients(weights, scales, x, y, loss, pool: Optional[ThreadPoolExecutor], workers: int):
    if pool is None or workers == 1 or len(x) < workers:
        return _backprop(weights, scales, x, y, loss, len(x))
    shards = np.array_split(np.arange(len(x)), workers)
    futures = [pool.submit(_backprop, weights, scales, x[idx], y[idx], loss, len(x)) for idx in shards]
    # reduce in shard order so the sum does not depend on completion order
    total, grads = futures[0].result()
    for fut in futures[1:]:
        value, part = fut.result()
        total += value
        grads = [g + p for g, p in zip(grads, part)]
    return total, grads


def sgd_step(model: MLPModel, x: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
             pool: Optional[ThreadPoolExecutor] = None) -> float:
    """One straight-through update of the shadow weights; returns the batch loss."""
    y = _one_hot(np.asarray(labels), model.dims[-1])
    weights = effective_weights(model, cfg.quantized, cfg.fraction_set)
    value, grads = _batch_gradients(weights, model.scales, np.asarray(x, dtype=np.float64), y,
                                    cfg.loss, pool, cfg.workers)
    if not math.isfinite(value):
        return value
    for w, g in zip(model.shadow_weights, grads):
        if cfg.quantized:
            g = np.where(np.abs(w) > 1.0, 0.0, g)
        w -= cfg.learning_rate * g
        np.clip(w, -1.0, 1.0, out=w)
    return value


def train(model: MLPModel, train_set, cfg: TrainConfig, test_set=None,
          progress_callback: Optional[Callable[[Dict], None]] = None) -> Tuple[MLPModel, List[Dict]]:
    """Mini-batch SGD; returns a trained copy of the model and the per-epoch history."""
    if len(train_set.labels) == 0:
        raise EmptyDatasetError("Training set is empty")
    if train_set.images.shape[1] != model.dims[0]:
        raise NetworkError(f"Training images have {train_set.images.shape[1]} features, model expects {model.dims[0]}")
    trained = model.copy()
    trained.seed = cfg.seed
    rng = np.random.default_rng(cfg.seed)
    n = len(train_set.labels)
    history = []
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    logger.info(f"Training {trained.dims} for {cfg.epochs} epochs (levels={cfg.levels}, "
                f"lr={cfg.learning_rate}, batch={cfg.batch_size}, seed={cfg.seed})")
    if cfg.quantized and cfg.fraction_set is not None:
        for i, q in enumerate(effective_weights(trained, True, cfg.fraction_set)):
            if np.max(np.abs(q)) < DEAD_WEIGHT:
                logger.warning(f"Layer {i} quantizes to near-zero weights at the start; "
                               f"gradients through it will vanish (levels={cfg.levels})")
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            losses = []
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                value = sgd_step(trained, train_set.images[idx], train_set.labels[idx], cfg, pool)
                if not math.isfinite(value):
                    raise TrainingDivergedError(
                        f"Loss became non-finite at epoch {epoch}, batch {b} "
                        f"(lr={cfg.learning_rate}, batch_size={cfg.batch_size})"
                    )
                losses.append(value)
            trained.epoch = epoch
            entry = {'epoch': epoch, 'train_loss': float(np.mean(losses)), 'test_accuracy': None}
            if test_set is not None:
                entry['test_accuracy'] = evaluate(
                    lambda xb: forward_software(trained, xb, cfg.quantized, cfg.fraction_set, cfg.loss), test_set)
            history.append(entry)
            logger.info(f"Epoch {epoch}/{cfg.epochs}: loss={entry['train_loss']:.4f} "
                        f"test_accuracy={entry['test_accuracy']}")
            if progress_callback:
                progress_callback({
                    'type': 'progress',
                    'message': f"Epoch {epoch}/{cfg.epochs} complete",
                    'data': dict(entry),
                })
    finally:
        if pool is not None:
            pool.shutdown()
    return trained, history


def evaluate(forward_fn: Callable[[np.ndarray], np.ndarray], dataset, batch_size: int = EVAL_BATCH) -> float:
    """Fraction of samples whose argmax score (first index on ties) matches the label."""
    total = len(dataset.labels)
    if total == 0:
        raise EmptyDatasetError("Cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, total, batch_size):
        scores = forward_fn(dataset.images[start:start + batch_size])
        correct += int(np.sum(np.argmax(scores, axis=1) == dataset.labels[start:start + batch_size]))
    return correct / total


def export_quantized(model: MLPModel, fraction_set, levels: int) -> QuantizedNetwork:
    fractions = validate_fraction_set(fraction_set, levels)
    weights = [quantize_weights(w, fractions) for w in model.shadow_weights]
    return QuantizedNetwork(list(model.dims), weights, fractions, levels, model.scales)


def weights_fingerprint(weights: List[np.ndarray]) -> str:
    digest = hashlib.sha256()
    for w in weights:
        digest.update(np.ascontiguousarray(w, dtype='<f8').tobytes())
    return digest.hexdigest()
