"""Segment-level emotion classifier.

Maps a log-Mel segment to a K-class probability distribution. Training
minimizes soft-target cross-entropy with an adaptive-moment optimizer,
a staircase-exponential learning-rate decay, and early stopping on a
held-out validation split made at the utterance level.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError
from .features import Segment
from .network import Adam, Architecture, ConvNet, batch_cross_entropy, resolve_architecture, softmax

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


@dataclass
class EmotionDistribution:
    """K-vector of class probabilities."""

    probs: np.ndarray
    class_names: tuple

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.class_names = tuple(self.class_names)
        k = self.probs.shape[0] if self.probs.ndim == 1 else 0
        if k < 2:
            raise DataError("distribution needs at least 2 classes")
        if len(self.class_names) != k:
            raise DataError(f"{k} probabilities but {len(self.class_names)} class names")
        if np.any(self.probs < 0) or not np.all(np.isfinite(self.probs)):
            raise DataError("probabilities must be finite and non-negative")
        if abs(self.probs.sum() - 1.0) > 1e-6:
            raise DataError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    def argmax(self) -> int:
        """Most likely class; ties break to the lowest index."""
        return int(np.argmax(self.probs))


def one_hot(class_index: int, class_names) -> EmotionDistribution:
    names = tuple(class_names)
    if not 0 <= class_index < len(names):
        raise DataError(f"class index {class_index} out of range for {len(names)} classes")
    p = np.zeros(len(names))
    p[class_index] = 1.0
    return EmotionDistribution(probs=p, class_names=names)


def uniform_distribution(class_names) -> EmotionDistribution:
    names = tuple(class_names)
    return EmotionDistribution(probs=np.full(len(names), 1.0 / len(names)), class_names=names)


def entropy(dist: EmotionDistribution) -> float:
    """Shannon entropy in nats; 0*ln(0) counts as 0."""
    p = dist.probs
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def cross_entropy(pred: EmotionDistribution, target: EmotionDistribution) -> float:
    """-sum_k target_k * ln(pred_k), with pred clamped at 1e-12."""
    p = np.maximum(pred.probs, PROB_EPS)
    return float(-np.sum(target.probs * np.log(p)))


def kl_divergence(pred: EmotionDistribution, target: EmotionDistribution) -> float:
    """sum_k target_k * ln(target_k / pred_k); zero target terms contribute 0."""
    t = target.probs
    p = np.maximum(pred.probs, PROB_EPS)
    nz = t > 0
    return float(np.sum(t[nz] * np.log(t[nz] / p[nz])))


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.001
    lr_decay: float = 0.8
    lr_decay_every: int = 2
    batch_size: int = 128
    early_stop_patience: int = 3
    max_epochs: int = 20
    seed: int = 0
    validation_fraction: float = 0.1
    architecture: object = "compact"  # name or Architecture

    def __post_init__(self):
        if min(self.initial_lr, self.lr_decay, self.batch_size, self.max_epochs) <= 0:
            raise ConfigError("training hyperparameters must be positive")
        if self.lr_decay_every < 1 or self.early_stop_patience < 1:
            raise ConfigError("lr_decay_every and early_stop_patience must be >= 1")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ConfigError("validation_fraction must be in (0, 0.5]")

    def resolved_architecture(self) -> Architecture:
        return resolve_architecture(self.architecture)


@dataclass
class Model:
    """Trained segment classifier: architecture plus parameter arrays."""

    architecture: Architecture
    input_shape: tuple
    class_names: tuple
    generation: int
    seed: int
    net: ConvNet = field(repr=False)
    history: dict = field(default_factory=dict, repr=False)

    @property
    def k(self) -> int:
        return len(self.class_names)


def _validation_split(utterance_ids, fraction: float, rng: np.random.Generator):
    """Seeded utterance-level split; returns boolean mask of validation rows.

    If the dataset has too few utterances for a non-empty validation set,
    everything stays in training and the mask is all-False.
    """
    order = []
    seen = set()
    for uid in utterance_ids:
        if uid not in seen:
            seen.add(uid)
            order.append(uid)
    n_val = int(np.floor(fraction * len(order)))
    if n_val == 0:
        return np.zeros(len(utterance_ids), dtype=bool)
    shuffled = [order[i] for i in rng.permutation(len(order))]
    val_utts = set(shuffled[:n_val])
    return np.array([uid in val_utts for uid in utterance_ids], dtype=bool)


def _forward_in_batches(net: ConvNet, x: np.ndarray, batch_size: int) -> np.ndarray:
    outs = [net.forward(x[i : i + batch_size]) for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def _mean_ce(net: ConvNet, x: np.ndarray, t: np.ndarray, batch_size: int) -> float:
    logits = _forward_in_batches(net, x, batch_size)
    p = np.maximum(softmax(logits).astype(np.float64), PROB_EPS)
    return float(-np.sum(t * np.log(p)) / x.shape[0])


def train_segment_classifier(
    segments: list, targets: list, cfg: TrainConfig, generation: int = 1
) -> Model:
    """Train a classifier on (segment, soft target) pairs.

    Returns the parameter snapshot with the best monitored loss: validation
    cross-entropy when an utterance-level validation split is possible,
    otherwise the running training loss. Deterministic given cfg.seed and
    the input order.
    """
    if len(segments) == 0:
        raise DataError("empty training set")
    if len(segments) != len(targets):
        raise DataError(f"{len(segments)} segments but {len(targets)} targets")
    class_names = targets[0].class_names
    for t in targets:
        if t.class_names != class_names:
            raise DataError("targets disagree on class names")
    input_shape = segments[0].values.shape
    for s in segments:
        if s.values.shape != input_shape:
            raise DataError(f"segment shape {s.values.shape} != {input_shape}")

    arch = cfg.resolved_architecture()
    x = np.stack([s.values for s in segments]).astype(arch.np_dtype)
    t = np.stack([tg.probs for tg in targets]).astype(arch.np_dtype)
    k = len(class_names)

    rng = np.random.default_rng(cfg.seed)
    val_mask = _validation_split([s.utterance_id for s in segments], cfg.validation_fraction, rng)
    x_train, t_train = x[~val_mask], t[~val_mask]
    x_val, t_val = x[val_mask], t[val_mask]
    if x_train.shape[0] == 0:
        raise DataError("validation split left no training data")
    t64 = t.astype(np.float64)

    net = ConvNet(arch, input_shape, k, rng)
    opt = Adam(net.params())
    best_loss = np.inf
    best_params = net.snapshot()
    epochs_since_best = 0
    n_train = x_train.shape[0]
    history = {
        "initial_train_ce": _mean_ce(net, x_train, t64[~val_mask], cfg.batch_size),
        "train_ce": [],
        "monitor": [],
        "n_train_segments": int(n_train),
        "n_val_segments": int(x_val.shape[0]),
    }

    for epoch in range(cfg.max_epochs):
        lr = cfg.initial_lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits = net.forward(x_train[idx], train=True)
            loss, dlogits = batch_cross_entropy(logits, t_train[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start} (lr={lr:g})"
                )
            net.backward(dlogits)
            opt.step(net.params(), net.grads(), lr)
            epoch_loss += loss * idx.size
        epoch_loss /= n_train

        if x_val.shape[0] > 0:
            monitor = _mean_ce(net, x_val, t64[val_mask], cfg.batch_size)
        else:
            monitor = epoch_loss
        if not np.isfinite(monitor):
            raise TrainingDivergedError(f"non-finite monitored loss at epoch {epoch}")
        logger.debug("epoch %d lr=%.2g train=%.4f monitor=%.4f", epoch, lr, epoch_loss, monitor)
        history["train_ce"].append(epoch_loss)
        history["monitor"].append(monitor)

        if monitor < best_loss:
            best_loss = monitor
            best_params = net.snapshot()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.early_stop_patience:
                break

    net.restore(best_params)
    history["best_monitor"] = float(best_loss)
    history["epochs_run"] = len(history["train_ce"])
    return Model(
        architecture=arch,
        input_shape=input_shape,
        class_names=class_names,
        generation=generation,
        seed=cfg.seed,
        net=net,
        history=history,
    )


def predict_batch(m: Model, segments: list, batch_size: int = 256) -> np.ndarray:
    """Class probabilities for many segments, shape (n, K), rows normalized."""
    for s in segments:
        if s.values.shape != m.input_shape:
            raise DataError(f"segment shape {s.values.shape} != model input {m.input_shape}")
    x = np.stack([s.values for s in segments]).astype(m.architecture.np_dtype)
    logits = _forward_in_batches(m.net, x, batch_size)
    p = softmax(logits).astype(np.float64)
    return p / p.sum(axis=1, keepdims=True)


def predict(m: Model, s: Segment) -> EmotionDistribution:
    """Softmax output distribution for one segment."""
    probs = predict_batch(m, [s])[0]
    return EmotionDistribution(probs=probs, class_names=m.class_names)


def save_model(m: Model, path) -> None:
    """Write a self-describing checkpoint; load_model round-trips bit-exactly."""
    meta = {
        "format": "emorefinery-model",
        "version": 1,
        "architecture": {
            "name": m.architecture.name,
            "conv_stages": [list(stage) for stage in m.architecture.conv_stages],
            "dense": list(m.architecture.dense),
            "dtype": m.architecture.dtype,
        },
        "input_shape": list(m.input_shape),
        "class_names": list(m.class_names),
        "generation": m.generation,
        "seed": m.seed,
    }
    arrays = {f"param_{i:03d}": p for i, p in enumerate(m.net.params())}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_model(path) -> Model:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != "emorefinery-model":
            raise DataError(f"{path}: not a model checkpoint")
        arch = Architecture(
            name=meta["architecture"]["name"],
            conv_stages=tuple(tuple(s) for s in meta["architecture"]["conv_stages"]),
            dense=tuple(meta["architecture"]["dense"]),
            dtype=meta["architecture"]["dtype"],
        )
        input_shape = tuple(meta["input_shape"])
        class_names = tuple(meta["class_names"])
        net = ConvNet(arch, input_shape, len(class_names), np.random.default_rng(0))
        params = [data[f"param_{i:03d}"] for i in range(len(net.params()))]
        net.restore(params)
    return Model(
        architecture=arch,
        input_shape=input_shape,
        class_names=class_names,
        generation=int(meta["generation"]),
        seed=int(meta["seed"]),
        net=net,
    )
