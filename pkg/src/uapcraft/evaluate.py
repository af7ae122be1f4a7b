"""Fooling-rate evaluation, transfer matrices and timing summaries.

Fooling is always measured against the model's own clean prediction:
a sample counts as flipped when predict(x + delta) != predict(x),
independent of the ground-truth label.  Accuracies against the labels are
reported alongside for context.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .fff import CraftTrace
from .modelio import Perturbation
from .nn import Model, forward

__all__ = ["FoolingReport", "TransferMatrix", "fooling_rate",
           "transfer_matrix", "cross_data_delta", "timing_report"]

EVAL_BATCH = 256


@dataclass
class FoolingReport:
    n_images: int
    n_flipped: int
    fooling_rate: float
    clean_accuracy: float
    perturbed_accuracy: float
    per_class_flips: dict[int, int]
    elapsed_seconds: float
    model_digest: str
    perturbation_metadata: dict
    clamped: bool

    def to_json(self) -> dict:
        return {
            "n_images": self.n_images,
            "n_flipped": self.n_flipped,
            "fooling_rate": self.fooling_rate,
            "clean_accuracy": self.clean_accuracy,
            "perturbed_accuracy": self.perturbed_accuracy,
            "per_class_flips": {str(k): v for k, v in
                                sorted(self.per_class_flips.items())},
            "elapsed_seconds": self.elapsed_seconds,
            "model_digest": self.model_digest,
            "perturbation_metadata": self.perturbation_metadata,
            "clamped": self.clamped,
        }


@dataclass
class TransferMatrix:
    """Fooling rates of each crafted perturbation on each model.

    Entry (i, j) is the rate of the perturbation crafted on model i when
    evaluated on model j, so rows share a perturbation and columns share a
    target model.  The diagonal reproduces the dedicated per-model reports.
    """

    model_ids: list[str]
    matrix: list[list[float]]
    reports: list[list[FoolingReport]] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {
            "model_ids": self.model_ids,
            "fooling_rates": self.matrix,
            "reports": [[r.to_json() for r in row] for row in self.reports],
        }


def _batch_ranges(n: int, batch: int) -> list[tuple[int, int]]:
    return [(s, min(s + batch, n)) for s in range(0, n, batch)]


def fooling_rate(model: Model, delta: Perturbation, data: Dataset,
                 clamp_pixels: bool = False, threads: int = 1) -> FoolingReport:
    """Count prediction flips caused by adding the perturbation.

    With ``clamp_pixels`` the perturbed images are clipped to [0, 255]
    before inference (off by default: the perturbation is added as-is).
    Per-class flip counts are keyed by ground-truth label.  Work fans out
    over fixed-size batches; the per-batch counts are combined in batch
    order, so results do not depend on ``threads``.
    """
    if tuple(delta.data.shape) != model.spec.input_shape:
        raise ValueError(f"perturbation shape {delta.data.shape} does not "
                         f"match model input {model.spec.input_shape}")
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    t0 = time.perf_counter()
    d = delta.data[None]

    def eval_batch(rng: tuple[int, int]):
        start, stop = rng
        images = data.images[start:stop]
        labels = data.labels[start:stop]
        clean = forward(model, images).predicted_labels
        perturbed_images = images + d
        if clamp_pixels:
            perturbed_images = np.clip(perturbed_images, 0.0, 255.0)
        pert = forward(model, perturbed_images).predicted_labels
        flips = clean != pert
        per_class = np.bincount(labels[flips], minlength=data.class_count)
        return (int(flips.sum()), int(np.sum(clean == labels)),
                int(np.sum(pert == labels)), per_class)

    ranges = _batch_ranges(len(data), EVAL_BATCH)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(eval_batch, ranges))
    else:
        results = [eval_batch(r) for r in ranges]

    n_flipped = sum(r[0] for r in results)
    clean_hits = sum(r[1] for r in results)
    pert_hits = sum(r[2] for r in results)
    per_class = np.sum([r[3] for r in results], axis=0)
    n = len(data)
    return FoolingReport(
        n_images=n,
        n_flipped=n_flipped,
        fooling_rate=n_flipped / n,
        clean_accuracy=clean_hits / n,
        perturbed_accuracy=pert_hits / n,
        per_class_flips={int(k): int(v) for k, v in enumerate(per_class)},
        elapsed_seconds=time.perf_counter() - t0,
        model_digest=f"{model.digest:016x}",
        perturbation_metadata=dict(delta.metadata, xi=delta.xi),
        clamped=clamp_pixels,
    )


def transfer_matrix(models: list[Model], deltas: list[Perturbation],
                    data: Dataset, model_ids: list[str] | None = None,
                    clamp_pixels: bool = False, threads: int = 1) -> TransferMatrix:
    """Cross-evaluate perturbations crafted per model on every model."""
    if len(models) != len(deltas):
        raise ValueError(f"{len(models)} models but {len(deltas)} perturbations")
    if len(models) < 2:
        raise ValueError("transfer analysis requires at least two models")
    if model_ids is None:
        model_ids = [f"{m.digest:016x}" for m in models]
    reports = [[fooling_rate(m, d, data, clamp_pixels, threads)
                for m in models] for d in deltas]
    return TransferMatrix(
        model_ids=list(model_ids),
        matrix=[[r.fooling_rate for r in row] for row in reports],
        reports=reports,
    )


def cross_data_delta(report_a: FoolingReport, report_b: FoolingReport) -> float:
    """Absolute fooling-rate change of one perturbation across two settings."""
    if report_a.perturbation_metadata != report_b.perturbation_metadata:
        raise ValueError("reports describe different perturbations "
                         "(metadata mismatch)")
    return abs(report_a.fooling_rate - report_b.fooling_rate)


def timing_report(trace: CraftTrace) -> dict:
    """Wall-clock summary of a crafting run."""
    if trace.iterations < 1:
        raise ValueError("trace is empty")
    return {
        "seconds": trace.seconds,
        "iterations": trace.iterations,
        "seconds_per_iteration": trace.seconds / trace.iterations,
    }
