"""Data-free universal perturbation crafting ("fff" method).

The attack never looks at data.  It feeds the perturbation itself through
the target network and maximizes the mean post-nonlinearity activation of
the selected feature layers jointly, by minimizing

    loss(delta) = - sum_i log(mean(layer_i(delta)) + eps_floor)

under an l-infinity budget ``xi``.  The sum of logs is the log of the
product of the layer means, so all selected layers must rise together for
the loss to fall; the epsilon floor keeps the loss finite when a layer is
completely silent.  After every Adam step the perturbation is clipped back
into the budget, and periodically rescaled toward zero so that clipping
saturation does not freeze later updates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import NumericError
from .modelio import Perturbation
from .nn import Model, NetworkSpec, backward, forward
from .tensorops import AdamState, Rng, adam_step, clip_inplace, uniform_init

__all__ = [
    "POLICY_PLAIN",
    "POLICY_CONCAT",
    "LayerSelection",
    "CraftConfig",
    "CraftTrace",
    "select_layers",
    "fff_loss",
    "rescale",
    "craft",
]

POLICY_PLAIN = "all_post_relu_convs"
POLICY_CONCAT = "concat_plus_outer_convs"


@dataclass(frozen=True)
class LayerSelection:
    """Feature layers whose mean activations enter the loss."""

    selected_ids: tuple[str, ...]
    policy: str

    @property
    def k(self) -> int:
        return len(self.selected_ids)


def _strict_ancestors(spec: NetworkSpec) -> dict[str, set[str]]:
    anc: dict[str, set[str]] = {}
    by_id = {l.id: l for l in spec.layers}
    for l in spec.layers:
        s: set[str] = set()
        for pid in l.inputs:
            s.add(pid)
            s |= anc[pid]
        anc[l.id] = s
    return anc


def _concat_block_members(spec: NetworkSpec) -> set[str]:
    """Layers that sit inside some Concat-terminated block.

    For each Concat, the block spans everything strictly between the
    branches' closest common ancestor (the fork the block hangs off) and
    the Concat itself.  A stem layer feeding the fork is outside the block
    even though its output reaches the Concat through the branches.
    """
    anc = _strict_ancestors(spec)
    topo_index = {l.id: i for i, l in enumerate(spec.layers)}
    members: set[str] = set()
    for l in spec.layers:
        if l.kind != "Concat":
            continue
        per_input = [anc[pid] | {pid} for pid in l.inputs]
        common = set.intersection(*per_input) if per_input else set()
        if common:
            fork = max(common, key=topo_index.__getitem__)
            # strictly between fork and the Concat
            inside = {lid for lid in anc[l.id] if fork in anc[lid]}
        else:
            # branches hang straight off the network input
            inside = set(anc[l.id])
        members |= inside
    return members


def _eligible_feature_layers(spec: NetworkSpec) -> tuple[set[str], dict[str, list[str]]]:
    """Conv layers not downstream of Flatten/FullyConnected, plus consumers."""
    anc = _strict_ancestors(spec)
    post_feature = {l.id for l in spec.layers
                    if l.kind in ("Flatten", "FullyConnected")}
    eligible = {
        l.id for l in spec.layers
        if l.kind == "Conv2D" and not (anc[l.id] & post_feature)
    }
    return eligible, spec.consumers()


def select_layers(spec: NetworkSpec, policy="auto") -> LayerSelection:
    """Pick the layers whose mean activations the attack maximizes.

    ``all_post_relu_convs`` takes the ReLU output directly following every
    conv layer ahead of the first Flatten/FullyConnected.  For branchy
    graphs, ``concat_plus_outer_convs`` takes every Concat output plus the
    post-ReLU outputs of convs that are not inside any Concat block
    (maximizing at a Concat already covers the convs feeding it).  "auto"
    picks the concat policy when the graph has a Concat, else the plain
    one.  An explicit list of layer ids is also accepted.
    """
    if not isinstance(policy, str):
        ids = tuple(str(p) for p in policy)
        by_id = {l.id: l for l in spec.layers}
        anc = _strict_ancestors(spec)
        post_feature = {l.id for l in spec.layers
                        if l.kind in ("Flatten", "FullyConnected")}
        for lid in ids:
            if lid not in by_id:
                raise ValueError(f"selected layer {lid!r} does not exist")
            if anc[lid] & post_feature or by_id[lid].kind in ("Flatten",
                                                              "FullyConnected",
                                                              "Softmax"):
                raise ValueError(f"selected layer {lid!r} is not a feature-"
                                 "extraction layer")
        if not ids:
            raise ValueError("explicit layer selection is empty")
        return LayerSelection(ids, "explicit")

    if policy == "auto":
        has_concat = any(l.kind == "Concat" for l in spec.layers)
        policy = POLICY_CONCAT if has_concat else POLICY_PLAIN
    if policy not in (POLICY_PLAIN, POLICY_CONCAT):
        raise ValueError(f"unknown layer selection policy {policy!r}")

    eligible_convs, consumers = _eligible_feature_layers(spec)
    excluded = _concat_block_members(spec) if policy == POLICY_CONCAT else set()

    post_relu: list[str] = []
    for l in spec.layers:
        if l.id in eligible_convs and l.id not in excluded:
            for cid in consumers[l.id]:
                if spec.layer(cid).kind == "ReLU":
                    post_relu.append(cid)
    selected = list(post_relu)
    if policy == POLICY_CONCAT:
        selected += [l.id for l in spec.layers if l.kind == "Concat"]
    order = {l.id: i for i, l in enumerate(spec.layers)}
    selected = tuple(sorted(set(selected), key=order.__getitem__))
    if not selected:
        raise ValueError(f"no eligible feature layer under policy {policy!r} "
                         "(does the network have convolutions?)")
    return LayerSelection(selected, policy)


def fff_loss(model: Model, delta: np.ndarray, sel: LayerSelection,
             eps_floor: float = 1e-12):
    """Loss value and its gradient w.r.t. the perturbation.

    The perturbation alone is the network input.  Each selected layer
    contributes ``-log(mean + eps_floor)``; the matching seed cotangent is
    the constant ``-1 / ((mean + eps_floor) * numel)`` spread over the
    layer's output, and one reverse sweep accumulates the total gradient.
    """
    if tuple(delta.shape) != model.spec.input_shape:
        raise ValueError(f"delta shape {delta.shape} does not match model "
                         f"input {model.spec.input_shape}")
    x = delta[None]
    trace = forward(model, x)
    value = 0.0
    seeds: dict[str, np.ndarray] = {}
    for lid in sel.selected_ids:
        act = trace.activations[lid]
        if not np.isfinite(act).all():
            raise NumericError(f"non-finite activation at layer {lid!r}")
        mean = float(act.mean())
        if mean + eps_floor <= 0.0:
            raise NumericError(f"layer {lid!r} mean activation {mean} is "
                               "negative; select post-ReLU outputs")
        value -= math.log(mean + eps_floor)
        seeds[lid] = np.full(act.shape, -1.0 / ((mean + eps_floor) * act.size))
    gx, _ = backward(model, x, trace, seeds, need_input=True)
    return value, gx[0]


def rescale(delta: np.ndarray, factor: float) -> np.ndarray:
    """Shrink the perturbation toward zero (e.g. budget 10 -> range 5)."""
    if not 0.0 < factor < 1.0:
        raise ValueError(f"rescale factor must lie in (0, 1), got {factor}")
    return delta * factor


@dataclass
class CraftConfig:
    """All optimization knobs for one crafting run.

    ``init_delta`` warm-starts from another perturbation image instead of a
    uniform random draw.  ``val_data`` turns on held-out best-checkpoint
    selection (off by default: the default path touches no data at all).
    """

    xi: float = 10.0
    lr: float = 0.1
    rescale_every: int = 300
    rescale_factor: float = 0.5
    max_iters: int = 5000
    eps_floor: float = 1e-12
    seed: int = 0
    init_delta: np.ndarray | None = None
    window: int = 500
    rel_tol: float = 1e-3
    val_data: Dataset | None = None
    val_count: int = 1000
    layer_policy: object = "auto"

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not 0.0 < self.rescale_factor < 1.0:
            raise ValueError("rescale_factor must lie in (0, 1)")
        if not self.eps_floor > 0:
            raise ValueError("eps_floor must be positive")
        if self.max_iters < 1 or self.rescale_every < 1 or self.window < 1:
            raise ValueError("max_iters, rescale_every and window must be >= 1")


@dataclass
class CraftTrace:
    """Per-iteration record of one crafting run."""

    losses: list[float] = field(default_factory=list)
    rescale_iters: list[int] = field(default_factory=list)
    iterations: int = 0
    seconds: float = 0.0
    best_checkpoint: int | None = None
    holdout_rates: list[tuple[int, float]] = field(default_factory=list)
    epoch_rates: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "losses": self.losses,
            "rescale_iters": self.rescale_iters,
            "iterations": self.iterations,
            "seconds": self.seconds,
            "best_checkpoint": self.best_checkpoint,
            "holdout_rates": [[i, r] for i, r in self.holdout_rates],
            "epoch_rates": self.epoch_rates,
        }


def _fool_fraction(model: Model, delta: np.ndarray, images: np.ndarray,
                   clean_preds: np.ndarray, batch: int = 256) -> float:
    flipped = 0
    for start in range(0, images.shape[0], batch):
        stop = start + batch
        pert = forward(model, images[start:stop] + delta[None])
        flipped += int(np.sum(pert.predicted_labels != clean_preds[start:stop]))
    return flipped / images.shape[0]


def craft(model: Model, cfg: CraftConfig, iteration_hook=None):
    """Craft a universal perturbation; returns ``(Perturbation, CraftTrace)``.

    Loop: gradient of the activation loss, Adam step, clip into the budget,
    rescale by ``rescale_factor`` every ``rescale_every`` iterations (only
    when continuing).  Stops at ``max_iters`` or when the ``window``-sized
    moving average of the loss changes by less than ``rel_tol`` relative
    over the last window.  With ``val_data``, the perturbation is
    checkpointed at every rescale boundary (before shrinking, when it is at
    full strength) plus at termination, and the snapshot with the highest
    held-out fooling rate wins; otherwise the final iterate is returned.

    ``iteration_hook(t, delta)``, when given, observes the clipped iterate
    each iteration (used by invariant tests).
    """
    shape = model.spec.input_shape
    rng = Rng(cfg.seed)
    val_rng = rng.spawn()  # never disturbs the optimization stream
    if cfg.init_delta is not None:
        if tuple(cfg.init_delta.shape) != shape:
            raise ValueError(f"warm-start shape {cfg.init_delta.shape} does "
                             f"not match model input {shape}")
        delta = np.array(cfg.init_delta, dtype=np.float64)
        clip_inplace(delta, -cfg.xi, cfg.xi)
        init_kind = "warm"
    else:
        delta = uniform_init(shape, -cfg.xi, cfg.xi, rng)
        init_kind = "random"
    sel = select_layers(model.spec, cfg.layer_policy)
    state = AdamState.fresh(shape, cfg.lr)
    trace = CraftTrace()

    val_images = None
    val_clean = None
    if cfg.val_data is not None:
        take = min(cfg.val_count, len(cfg.val_data))
        idx = np.sort(val_rng.choice(len(cfg.val_data), take, replace=False))
        val_images = cfg.val_data.images[idx]
        preds = []
        for start in range(0, take, 256):
            preds.append(forward(model, val_images[start:start + 256])
                         .predicted_labels)
        val_clean = np.concatenate(preds)

    best_rate = -1.0
    best_delta = None
    best_iter = None
    best_loss = None
    t0 = time.perf_counter()
    t = 0
    while t < cfg.max_iters:
        t += 1
        try:
            value, grad = fff_loss(model, delta, sel, cfg.eps_floor)
        except NumericError as exc:
            trace.iterations = t
            trace.seconds = time.perf_counter() - t0
            exc.trace = trace
            raise
        if not math.isfinite(value):
            trace.iterations = t
            trace.seconds = time.perf_counter() - t0
            raise NumericError(f"loss became non-finite at iteration {t}",
                               trace)
        trace.losses.append(value)
        delta = adam_step(delta, grad, state)
        clip_inplace(delta, -cfg.xi, cfg.xi)
        if iteration_hook is not None:
            iteration_hook(t, delta)

        converged = False
        if t >= 2 * cfg.window:
            now = float(np.mean(trace.losses[-cfg.window:]))
            prev = float(np.mean(trace.losses[-2 * cfg.window:-cfg.window]))
            if abs(now - prev) < cfg.rel_tol * max(abs(prev), 1e-12):
                converged = True
        stopping = converged or t == cfg.max_iters

        if val_images is not None and (stopping or t % cfg.rescale_every == 0):
            rate = _fool_fraction(model, delta, val_images, val_clean)
            trace.holdout_rates.append((t, rate))
            if rate > best_rate:
                best_rate = rate
                best_delta = delta.copy()
                best_iter = t
                best_loss = value
        if stopping:
            break
        if t % cfg.rescale_every == 0:
            delta = rescale(delta, cfg.rescale_factor)
            trace.rescale_iters.append(t)

    trace.iterations = t
    trace.seconds = time.perf_counter() - t0
    if best_delta is not None:
        final = best_delta
        final_loss = best_loss
        trace.best_checkpoint = best_iter
    else:
        final = delta
        final_loss = trace.losses[-1]
    pert = Perturbation(
        data=final,
        xi=cfg.xi,
        metadata={
            "method": "fff",
            "seed": cfg.seed,
            "iterations": t,
            "loss": final_loss,
            "target_digest": f"{model.digest:016x}",
            # wall-clock time lives in the trace JSON: embedding it here
            # would make otherwise-identical runs produce different files
            "seconds": None,
            "init": init_kind,
        },
    )
    return pert, trace
