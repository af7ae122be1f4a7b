"""Finite-difference validation of the reverse-mode input gradients.

Builds small random networks covering every layer kind, picks probe inputs
that sit safely away from ReLU and max-pool kinks, and compares the
analytic gradient of the activation-maximization loss against central
finite differences computed from forward passes alone.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .fff import fff_loss, select_layers
from .nn import (Model, NetworkSpec, concat, conv2d, flatten, forward,
                 fully_connected, input_norm, max_pool, avg_pool, relu,
                 softmax, _pool_windows)
from .tensorops import Rng
from .train import init_weights

__all__ = ["GradCheckResult", "activation_loss_value", "run_suite",
           "random_probe_model", "pick_probe_input"]

EPS_FLOOR = 1e-12


@dataclass
class GradCheckResult:
    trials: int
    max_rel_error: float
    kinds_covered: tuple[str, ...]
    per_trial: list[dict]
    seconds: float


def activation_loss_value(model: Model, delta: np.ndarray, selected_ids,
                          eps_floor: float = EPS_FLOOR) -> float:
    """Loss recomputed from a forward pass only; the oracle side of the check."""
    trace = forward(model, delta[None])
    total = 0.0
    for lid in selected_ids:
        total -= math.log(float(trace.activations[lid].mean()) + eps_floor)
    return total


def _template(i: int, rng: Rng) -> NetworkSpec:
    """Small graphs cycling through the layer vocabulary.

    Indices rotate so any run of >= 5 trials exercises every layer kind,
    Concat included.
    """
    classes = int(rng.integers(2, 5))
    h = int(rng.integers(5, 8))
    c_in = int(rng.integers(1, 3))
    shape = (c_in, h, h)
    oc1 = int(rng.integers(2, 5))
    oc2 = int(rng.integers(2, 5))
    i = i % 5
    if i == 0:
        layers = [
            input_norm("norm", mean=list(rng.uniform(-0.2, 0.2, (c_in,))),
                       scale=float(rng.uniform(0.7, 1.3, ()))),
            conv2d("c1", "norm", oc1, 3, 3, pad=1),
            relu("r1", "c1"),
            max_pool("p1", "r1", window=2, stride=2),
            flatten("fl", "p1"),
            fully_connected("fc", "fl", classes),
            softmax("sm", "fc"),
        ]
    elif i == 1:
        layers = [
            conv2d("c1", (), oc1, 3, 3, pad=1),
            relu("r1", "c1"),
            avg_pool("p1", "r1", window=2, stride=1),
            conv2d("c2", "p1", oc2, 2, 2),
            relu("r2", "c2"),
            flatten("fl", "r2"),
            fully_connected("fc", "fl", classes),
            softmax("sm", "fc"),
        ]
    elif i == 2:
        layers = [
            input_norm("norm", mean=[0.0] * c_in, scale=1.0),
            conv2d("stem", "norm", oc1, 3, 3, pad=1),
            relu("stem_r", "stem"),
            conv2d("b1", "stem_r", oc2, 3, 3, pad=1),
            relu("b1_r", "b1"),
            conv2d("b2", "stem_r", oc2, 1, 1),
            relu("b2_r", "b2"),
            concat("cat", ["b1_r", "b2_r"]),
            flatten("fl", "cat"),
            fully_connected("fc", "fl", classes),
            softmax("sm", "fc"),
        ]
    elif i == 3:
        layers = [
            conv2d("c1", (), oc1, 2, 2, stride=2),
            relu("r1", "c1"),
            conv2d("c2", "r1", oc2, 1, 1),
            relu("r2", "c2"),
            flatten("fl", "r2"),
            fully_connected("fc", "fl", classes),
            softmax("sm", "fc"),
        ]
    else:
        layers = [
            conv2d("c1", (), oc1, 3, 3, pad=1, stride=1),
            relu("r1", "c1"),
            max_pool("p1", "r1", window=3, stride=2),
            avg_pool("p2", "p1", window=2, stride=1),
            flatten("fl", "p2"),
            fully_connected("fc", "fl", classes),
            softmax("sm", "fc"),
        ]
    return NetworkSpec(layers, shape, classes)


def random_probe_model(rng: Rng, template_index: int) -> Model:
    spec = _template(template_index, rng)
    weights = init_weights(spec, rng)
    # nonzero biases keep conv outputs over dead-ReLU patches away from
    # exact zero, otherwise no probe input can clear the kink margin
    for roles in weights.values():
        if "bias" in roles:
            roles["bias"] = rng.uniform(-0.3, 0.3, roles["bias"].shape)
    return Model(spec=spec, weights=weights)


def _kink_margin(model: Model, x: np.ndarray) -> float:
    """Distance of the realized path from ReLU zeros and max-pool ties."""
    trace = forward(model, x[None])
    spec = model.spec
    margin = math.inf
    for l in spec.layers:
        if l.kind == "ReLU":
            pre = trace.activations[l.inputs[0]] if l.inputs else x[None]
            margin = min(margin, float(np.abs(pre).min()))
        elif l.kind == "MaxPool":
            pre = trace.activations[l.inputs[0]]
            windows, _, _ = _pool_windows(pre, l.params["window"],
                                          l.params["stride"])
            top2 = np.sort(windows, axis=-1)[..., -2:]
            margin = min(margin, float((top2[..., 1] - top2[..., 0]).min()))
    return margin


def pick_probe_input(model: Model, rng: Rng, min_margin: float = 1e-3,
                     attempts: int = 200) -> np.ndarray | None:
    """A random input whose ReLU preactivations all clear ``min_margin``
    (max-pool window gaps included, so finite differences stay one-sided)."""
    for _ in range(attempts):
        x = rng.uniform(-1.5, 1.5, model.spec.input_shape)
        if _kink_margin(model, x) > min_margin:
            return x
    return None


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        up = f(x)
        flat[j] = orig - h
        down = f(x)
        flat[j] = orig
        gflat[j] = (up - down) / (2.0 * h)
    return g


def run_suite(seed: int = 0, trials: int = 20, h: float = 1e-5,
              min_margin: float = 1e-3) -> GradCheckResult:
    """Compare analytic and finite-difference gradients over random nets.

    Reports the worst relative error, measured against the infinity norm of
    the finite-difference gradient (per-coordinate denominators would blow
    up on coordinates where the true derivative is ~0).
    """
    rng = Rng(seed)
    worst = 0.0
    kinds: set[str] = set()
    per_trial = []
    t0 = time.perf_counter()
    done = 0
    attempts = 0
    while done < trials:
        attempts += 1
        if attempts > trials * 10:
            raise RuntimeError("could not generate enough probe points")
        model = random_probe_model(rng, done)
        x = pick_probe_input(model, rng, min_margin)
        if x is None:
            continue
        sel = select_layers(model.spec, "auto")
        _, g_analytic = fff_loss(model, x, sel, EPS_FLOOR)
        g_fd = finite_difference_gradient(
            lambda d: activation_loss_value(model, d, sel.selected_ids), x, h)
        scale = max(float(np.abs(g_fd).max()), 1e-12)
        rel = float(np.abs(g_analytic - g_fd).max()) / scale
        worst = max(worst, rel)
        kinds |= {l.kind for l in model.spec.layers}
        per_trial.append({"trial": done, "rel_error": rel,
                          "k_selected": sel.k,
                          "layers": len(model.spec.layers)})
        done += 1
    return GradCheckResult(trials=trials, max_rel_error=worst,
                           kinds_covered=tuple(sorted(kinds)),
                           per_trial=per_trial,
                           seconds=time.perf_counter() - t0)
