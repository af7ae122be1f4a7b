"""Comparison attacks: uniform random noise and a data-dependent universal
perturbation ("uap-desk").

The data-dependent method walks a sample set repeatedly: whenever the
running perturbation fails to flip a sample, a per-image minimal
adversarial step is computed by iterative linearization and folded into
the running perturbation, which is then projected back onto the
l-infinity ball.  Because the universal budget is l-infinity, the inner
step uses the matching geometry: distance |f| / ||w||_1 along sign(w).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import NumericError
from .fff import CraftTrace
from .modelio import Perturbation
from .nn import Model, backward, forward
from .tensorops import Rng, clip_inplace, linf_norm, uniform_init

__all__ = ["UapConfig", "random_perturbation", "minimal_flip", "uap_craft"]


@dataclass
class UapConfig:
    xi: float = 10.0
    sample_count: int = 1000
    max_epochs: int = 5
    inner_max_iter: int = 50
    overshoot: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")


def random_perturbation(shape, xi: float, rng: Rng) -> Perturbation:
    """Elementwise uniform noise in [-xi, +xi]; the null-hypothesis baseline."""
    if not xi > 0:
        raise ValueError("xi must be positive")
    data = uniform_init(shape, -xi, xi, rng)
    return Perturbation(data=data, xi=xi,
                        metadata={"method": "random", "seed": rng.seed,
                                  "iterations": 0, "loss": None,
                                  "target_digest": None, "seconds": None})


def _class_gradients(model: Model, x: np.ndarray, current: int):
    """Logit values and gradients of (logit_k - logit_current) for k != current.

    One batched reverse sweep: the image is tiled once per rival class and
    each row is seeded with the cotangent e_k - e_current on the logits.
    """
    k_total = model.spec.class_count
    rivals = [k for k in range(k_total) if k != current]
    tiled = np.broadcast_to(x, (len(rivals),) + x.shape).copy()
    trace = forward(model, tiled)
    logits = trace.logits[0]
    seed = np.zeros((len(rivals), k_total))
    seed[np.arange(len(rivals)), rivals] = 1.0
    seed[:, current] -= 1.0
    gx, _ = backward(model, tiled, trace,
                     {model.spec.logits_layer_id: seed}, need_input=True)
    return rivals, logits, gx


def minimal_flip(model: Model, x: np.ndarray, max_iter: int = 50,
                 overshoot: float = 0.02) -> np.ndarray:
    """Smallest-effort perturbation flipping the model's own prediction of x.

    Iterative linearization: at each step pick the rival class k minimizing
    |logit_k - logit_c| / ||grad(logit_k - logit_c)||_1 and step that far
    along the gradient's sign pattern.  The current prediction plays the
    role of the label, so an input the model already misclassifies is
    flipped away from that prediction all the same.  The accumulated step
    is scaled by (1 + overshoot) at the end.
    """
    if tuple(x.shape) != model.spec.input_shape:
        raise ValueError(f"image shape {x.shape} does not match model input "
                         f"{model.spec.input_shape}")
    start = forward(model, x[None])
    current = int(start.predicted_labels[0])
    r = np.zeros_like(x)
    for _ in range(max_iter):
        probe = x + r
        if int(forward(model, probe[None]).predicted_labels[0]) != current:
            break
        rivals, logits, grads = _class_gradients(model, probe, current)
        if not np.isfinite(grads).all():
            raise NumericError("non-finite gradient during linearization step")
        f = logits[rivals] - logits[current]
        norms = np.abs(grads.reshape(len(rivals), -1)).sum(axis=1)
        live = norms > 0
        if not live.any():
            break
        dist = np.where(live, np.abs(f) / np.where(live, norms, 1.0), np.inf)
        j = int(np.argmin(dist))
        r = r + dist[j] * np.sign(grads[j])
    return r * (1.0 + overshoot)


def uap_craft(model: Model, data: Dataset, cfg: UapConfig):
    """Data-dependent universal perturbation; returns ``(Perturbation, CraftTrace)``.

    Draws ``sample_count`` images (seeded), then sweeps them up to
    ``max_epochs`` times: every sample the running perturbation does not yet
    flip contributes a minimal-flip step, after which the perturbation is
    clipped back into the budget.  Sweeping stops early once the sample-set
    fooling rate fails to improve for two consecutive epochs; the best
    checkpoint by sample-set fooling rate is returned.
    """
    if cfg.sample_count > len(data):
        raise ValueError(f"sample_count {cfg.sample_count} exceeds dataset "
                         f"size {len(data)}")
    if len(data) == 0:
        raise ValueError("empty sample set")
    rng = Rng(cfg.seed)
    idx = np.sort(rng.choice(len(data), cfg.sample_count, replace=False))
    samples = data.images[idx]
    clean = forward(model, samples).predicted_labels

    v = np.zeros(model.spec.input_shape)
    best_v = v.copy()
    best_rate = 0.0
    stale = 0
    trace = CraftTrace()
    inner_steps = 0
    t0 = time.perf_counter()
    for _ in range(cfg.max_epochs):
        for i in range(samples.shape[0]):
            x = samples[i]
            pred = int(forward(model, (x + v)[None]).predicted_labels[0])
            if pred != clean[i]:
                continue
            dv = minimal_flip(model, x + v, cfg.inner_max_iter, cfg.overshoot)
            v = clip_inplace(v + dv, -cfg.xi, cfg.xi)
            inner_steps += 1
        pert_preds = forward(model, samples + v[None]).predicted_labels
        rate = float(np.mean(pert_preds != clean))
        trace.epoch_rates.append(rate)
        if rate > best_rate:
            best_rate = rate
            best_v = v.copy()
            stale = 0
        else:
            stale += 1
            if stale >= 2:
                break
    trace.iterations = inner_steps
    trace.seconds = time.perf_counter() - t0
    pert = Perturbation(
        data=best_v, xi=cfg.xi,
        metadata={"method": "uap-desk", "seed": cfg.seed,
                  "iterations": inner_steps, "loss": None,
                  "target_digest": f"{model.digest:016x}", "seconds": None,
                  "sample_count": cfg.sample_count})
    return pert, trace
