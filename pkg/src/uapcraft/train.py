"""Mini-batch Adam training for the desk-scale victim networks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import NumericError
from .nn import (Model, NetworkSpec, cross_entropy_and_param_gradient,
                 expected_weight_shapes, forward)
from .tensorops import AdamState, Rng, adam_step

__all__ = ["TrainConfig", "EpochStats", "train", "accuracy", "init_weights"]


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    shuffle: bool = True
    eval_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    eval_accuracy: float | None


def init_weights(spec: NetworkSpec, rng: Rng) -> dict[str, dict[str, np.ndarray]]:
    """He-scaled normal kernels/weights, zero biases, drawn in layer order."""
    weights: dict[str, dict[str, np.ndarray]] = {}
    for lid, roles in expected_weight_shapes(spec).items():
        weights[lid] = {}
        for role in sorted(roles):
            shape = roles[role]
            if role == "bias":
                weights[lid][role] = np.zeros(shape, dtype=np.float64)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                std = math.sqrt(2.0 / fan_in)
                weights[lid][role] = rng.normal(0.0, std, shape)
    return weights


def train(spec: NetworkSpec, data: Dataset, cfg: TrainConfig):
    """Train a fresh model; returns ``(model, history)``.

    The run is a pure function of (spec, data, cfg): weight init, the
    train/eval split and per-epoch shuffles all come from one seeded
    stream.  A non-finite batch loss aborts with the offending epoch.
    """
    if tuple(data.images.shape[1:]) != spec.input_shape:
        raise ValueError(f"dataset images {data.images.shape[1:]} do not match "
                         f"spec input {spec.input_shape}")
    if data.class_count != spec.class_count:
        raise ValueError("dataset/spec class counts differ")
    rng = Rng(cfg.seed)
    weights = init_weights(spec, rng)
    model = Model(spec=spec, weights=weights)

    n = len(data)
    order = rng.permutation(n)
    n_eval = int(round(cfg.eval_fraction * n))
    eval_idx, train_idx = order[:n_eval], order[n_eval:]
    if train_idx.size == 0:
        raise ValueError("eval_fraction leaves no training samples")
    train_images = data.images[train_idx]
    train_labels = data.labels[train_idx]
    eval_set = data.subset(eval_idx) if n_eval else None

    states = {
        lid: {role: AdamState.fresh(arr.shape, cfg.lr)
              for role, arr in roles.items()}
        for lid, roles in weights.items()
    }

    history: list[EpochStats] = []
    n_train = train_images.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        idx = rng.permutation(n_train) if cfg.shuffle else np.arange(n_train)
        losses = []
        for start in range(0, n_train, cfg.batch_size):
            sel = idx[start:start + cfg.batch_size]
            loss, grads = cross_entropy_and_param_gradient(
                model, train_images[sel], train_labels[sel])
            if not math.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}: "
                                   f"loss {loss}")
            losses.append(loss)
            for lid, roles in grads.items():
                for role, g in roles.items():
                    weights[lid][role] = adam_step(weights[lid][role], g,
                                                   states[lid][role])
        # weights were replaced, not mutated: rebuild so shape checks and
        # the digest cache stay honest
        model = Model(spec=spec, weights=weights)
        eval_acc = accuracy(model, eval_set) if eval_set is not None else None
        history.append(EpochStats(epoch, float(np.mean(losses)), eval_acc))
    return model, history


def accuracy(model: Model, data: Dataset, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    if len(data) == 0:
        raise ValueError("accuracy over an empty dataset is undefined")
    hits = 0
    for start in range(0, len(data), batch_size):
        stop = start + batch_size
        trace = forward(model, data.images[start:stop])
        hits += int(np.sum(trace.predicted_labels == data.labels[start:stop]))
    return hits / len(data)
