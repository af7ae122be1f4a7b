"""Layer-graph inference engine with reverse-mode gradients.

A network is a topologically ordered DAG of :class:`LayerSpec` nodes.  A
layer with an empty ``inputs`` tuple reads the network input; ``Concat`` is
the only kind allowed more than one predecessor.  ``forward`` records every
layer's post-nonlinearity output in a :class:`ForwardTrace`; the backward
pass replays the trace, so gradients w.r.t. the input image (for attacks)
and w.r.t. the weights (for training) come out of one engine.

Conventions fixed for reproducibility:

* ``Conv2D`` computes cross-correlation (no kernel flip) with symmetric
  zero padding.
* Argmax ties (prediction and max-pool) break toward the lowest index.
* The ReLU derivative at exactly 0 is 0.
* All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "Model",
    "ForwardTrace",
    "KINDS",
    "input_norm",
    "conv2d",
    "relu",
    "max_pool",
    "avg_pool",
    "flatten",
    "fully_connected",
    "concat",
    "softmax",
    "infer_shapes",
    "expected_weight_shapes",
    "forward",
    "input_gradient",
    "param_gradient",
    "cross_entropy_and_param_gradient",
]

KINDS = (
    "InputNorm",
    "Conv2D",
    "ReLU",
    "MaxPool",
    "AvgPool",
    "Flatten",
    "FullyConnected",
    "Concat",
    "Softmax",
)

CE_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    """One node of the network graph.

    ``inputs`` lists predecessor layer ids; an empty tuple means the layer
    reads the network input directly.  ``params`` holds the kind-specific
    settings (kernel extents, pool window, output dim, ...).
    """

    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)


def input_norm(id: str, mean, scale: float, inputs=()) -> LayerSpec:
    return LayerSpec(id, "InputNorm", tuple(inputs),
                     {"mean": [float(m) for m in mean], "scale": float(scale)})


def conv2d(id: str, inputs, out_channels: int, kernel_h: int, kernel_w: int,
           stride: int = 1, pad: int = 0) -> LayerSpec:
    return LayerSpec(id, "Conv2D", _as_inputs(inputs), {
        "out_channels": int(out_channels),
        "kernel_h": int(kernel_h),
        "kernel_w": int(kernel_w),
        "stride": int(stride),
        "pad": int(pad),
    })


def relu(id: str, inputs) -> LayerSpec:
    return LayerSpec(id, "ReLU", _as_inputs(inputs))


def max_pool(id: str, inputs, window: int, stride: int) -> LayerSpec:
    return LayerSpec(id, "MaxPool", _as_inputs(inputs),
                     {"window": int(window), "stride": int(stride)})


def avg_pool(id: str, inputs, window: int, stride: int) -> LayerSpec:
    return LayerSpec(id, "AvgPool", _as_inputs(inputs),
                     {"window": int(window), "stride": int(stride)})


def flatten(id: str, inputs) -> LayerSpec:
    return LayerSpec(id, "Flatten", _as_inputs(inputs))


def fully_connected(id: str, inputs, out_dim: int) -> LayerSpec:
    return LayerSpec(id, "FullyConnected", _as_inputs(inputs),
                     {"out_dim": int(out_dim)})


def concat(id: str, inputs) -> LayerSpec:
    return LayerSpec(id, "Concat", _as_inputs(inputs))


def softmax(id: str, inputs) -> LayerSpec:
    return LayerSpec(id, "Softmax", _as_inputs(inputs))


def _as_inputs(inputs) -> tuple[str, ...]:
    if isinstance(inputs, str):
        return (inputs,)
    return tuple(inputs)


@dataclass(frozen=True)
class NetworkSpec:
    """Topologically ordered layer list plus the input/output contract."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    class_count: int

    def __init__(self, layers, input_shape, class_count):
        object.__setattr__(self, "layers", tuple(layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in input_shape))
        object.__setattr__(self, "class_count", int(class_count))
        self._validate()

    def layer(self, layer_id: str) -> LayerSpec:
        return self._by_id[layer_id]

    @property
    def _by_id(self) -> dict[str, LayerSpec]:
        return {l.id: l for l in self.layers}

    def consumers(self) -> dict[str, list[str]]:
        """Map layer id -> ids of layers that read its output."""
        out: dict[str, list[str]] = {l.id: [] for l in self.layers}
        for l in self.layers:
            for pid in l.inputs:
                out[pid].append(l.id)
        return out

    def _validate(self) -> None:
        if len(self.input_shape) != 3 or any(s <= 0 for s in self.input_shape):
            raise ValueError(f"input_shape must be 3 positive extents, got {self.input_shape}")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        if not self.layers:
            raise ValueError("network has no layers")
        seen: set[str] = set()
        for l in self.layers:
            if not l.id:
                raise ValueError("layer id must be non-empty")
            if l.id in seen:
                raise ValueError(f"duplicate layer id {l.id!r}")
            if l.kind not in KINDS:
                raise ValueError(f"unknown layer kind {l.kind!r}")
            for pid in l.inputs:
                if pid not in seen:
                    raise ValueError(
                        f"layer {l.id!r} references {pid!r} which is missing or "
                        "appears later (layers must be topologically ordered)"
                    )
            if len(l.inputs) > 1 and l.kind != "Concat":
                raise ValueError(f"layer {l.id!r}: only Concat may have multiple inputs")
            seen.add(l.id)
        softmaxes = [l for l in self.layers if l.kind == "Softmax"]
        if len(softmaxes) != 1:
            raise ValueError(f"network needs exactly one Softmax layer, found {len(softmaxes)}")
        if self.layers[-1].kind != "Softmax":
            raise ValueError("the Softmax layer must be the terminal layer")
        cons = self.consumers()
        for l in self.layers[:-1]:
            if not cons[l.id]:
                raise ValueError(f"layer {l.id!r} output is never consumed")
        # end-to-end shape inference doubles as parameter validation
        infer_shapes(self)

    @property
    def output_layer_id(self) -> str:
        return self.layers[-1].id

    @property
    def logits_layer_id(self) -> str:
        return self.layers[-1].inputs[0]


def infer_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Per-layer output extents (batch axis excluded).

    Feature-map stages are (C, H, W) triples; Flatten and everything after
    it produce 1-D (F,) stages.  Raises ValueError when a parameter makes
    any inferred extent non-positive or a stage has the wrong rank.
    """
    shapes: dict[str, tuple[int, ...]] = {}

    def in_shapes(l: LayerSpec) -> list[tuple[int, ...]]:
        if not l.inputs:
            return [spec.input_shape]
        return [shapes[pid] for pid in l.inputs]

    for l in spec.layers:
        ins = in_shapes(l)
        if l.kind == "Concat":
            if len(ins) < 2:
                raise ValueError(f"Concat {l.id!r} needs at least two inputs")
            c, h, w = ins[0]
            for s in ins:
                if len(s) != 3 or s[1:] != (h, w):
                    raise ValueError(
                        f"Concat {l.id!r}: inputs must agree on H,W; got {ins}")
            shapes[l.id] = (sum(s[0] for s in ins), h, w)
            continue
        (s_in,) = ins
        if l.kind == "InputNorm":
            if len(s_in) != 3:
                raise ValueError(f"InputNorm {l.id!r} needs a (C,H,W) input")
            if len(l.params["mean"]) != s_in[0]:
                raise ValueError(
                    f"InputNorm {l.id!r}: {len(l.params['mean'])} channel means "
                    f"for {s_in[0]} channels")
            shapes[l.id] = s_in
        elif l.kind == "Conv2D":
            if len(s_in) != 3:
                raise ValueError(f"Conv2D {l.id!r} needs a (C,H,W) input")
            c, h, w = s_in
            p = l.params
            if p["stride"] < 1 or p["kernel_h"] < 1 or p["kernel_w"] < 1 or p["pad"] < 0:
                raise ValueError(f"Conv2D {l.id!r}: bad kernel/stride/pad {p}")
            oh = (h + 2 * p["pad"] - p["kernel_h"]) // p["stride"] + 1
            ow = (w + 2 * p["pad"] - p["kernel_w"]) // p["stride"] + 1
            if oh <= 0 or ow <= 0 or p["out_channels"] < 1:
                raise ValueError(
                    f"Conv2D {l.id!r}: inferred output {p['out_channels']}x{oh}x{ow} "
                    "has a non-positive extent")
            shapes[l.id] = (p["out_channels"], oh, ow)
        elif l.kind in ("MaxPool", "AvgPool"):
            if len(s_in) != 3:
                raise ValueError(f"{l.kind} {l.id!r} needs a (C,H,W) input")
            c, h, w = s_in
            win, st = l.params["window"], l.params["stride"]
            if win < 1 or st < 1:
                raise ValueError(f"{l.kind} {l.id!r}: bad window/stride")
            oh = (h - win) // st + 1
            ow = (w - win) // st + 1
            if oh <= 0 or ow <= 0:
                raise ValueError(f"{l.kind} {l.id!r}: window {win} too large for {h}x{w}")
            shapes[l.id] = (c, oh, ow)
        elif l.kind == "ReLU":
            shapes[l.id] = s_in
        elif l.kind == "Flatten":
            if len(s_in) != 3:
                raise ValueError(f"Flatten {l.id!r} needs a (C,H,W) input")
            shapes[l.id] = (s_in[0] * s_in[1] * s_in[2],)
        elif l.kind == "FullyConnected":
            if len(s_in) != 1:
                raise ValueError(
                    f"FullyConnected {l.id!r} needs a flat input (insert Flatten)")
            od = l.params["out_dim"]
            if od < 1:
                raise ValueError(f"FullyConnected {l.id!r}: out_dim must be positive")
            shapes[l.id] = (od,)
        elif l.kind == "Softmax":
            if len(s_in) != 1:
                raise ValueError(f"Softmax {l.id!r} needs a flat input")
            if s_in[0] != spec.class_count:
                raise ValueError(
                    f"Softmax {l.id!r} input dim {s_in[0]} != class_count "
                    f"{spec.class_count}")
            shapes[l.id] = s_in
        else:  # pragma: no cover - kinds are closed above
            raise ValueError(f"unhandled kind {l.kind}")
    return shapes


def expected_weight_shapes(spec: NetworkSpec) -> dict[str, dict[str, tuple[int, ...]]]:
    """Weight tensor shapes implied by the graph, keyed id -> role -> shape."""
    shapes = infer_shapes(spec)
    out: dict[str, dict[str, tuple[int, ...]]] = {}
    for l in spec.layers:
        s_in = shapes[l.inputs[0]] if l.inputs else spec.input_shape
        if l.kind == "Conv2D":
            p = l.params
            out[l.id] = {
                "kernel": (p["out_channels"], s_in[0], p["kernel_h"], p["kernel_w"]),
                "bias": (p["out_channels"],),
            }
        elif l.kind == "FullyConnected":
            out[l.id] = {
                "weight": (s_in[0], l.params["out_dim"]),
                "bias": (l.params["out_dim"],),
            }
    return out


@dataclass
class Model:
    """An immutable network: spec plus weight tensors.

    ``weights`` maps layer id -> role -> float64 array.  The content digest
    is computed lazily from the canonical serialized form (see modelio) so
    two models with identical spec and identical 32-bit stored weights share
    a digest.
    """

    spec: NetworkSpec
    weights: dict[str, dict[str, np.ndarray]]

    def __post_init__(self):
        expected = expected_weight_shapes(self.spec)
        got = {lid: {r: tuple(a.shape) for r, a in roles.items()}
               for lid, roles in self.weights.items()}
        want = {lid: {r: tuple(s) for r, s in roles.items()}
                for lid, roles in expected.items()}
        if got != want:
            raise ValueError(f"weight shapes {got} do not match spec-implied {want}")
        for roles in self.weights.values():
            for r, a in roles.items():
                if not np.isfinite(a).all():
                    raise ValueError("model weights contain non-finite values")
        self._digest: int | None = None

    @property
    def digest(self) -> int:
        if self._digest is None:
            from .modelio import model_digest  # avoids a module cycle
            self._digest = model_digest(self)
        return self._digest


@dataclass
class ForwardTrace:
    """Every layer's output for one batch, plus the classification readout."""

    activations: dict[str, np.ndarray]
    logits: np.ndarray
    predicted_labels: np.ndarray
    # im2col matrices kept from the forward pass so the backward sweep does
    # not pay for the patch extraction twice; content, not contract
    conv_cols: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _layer_inputs(l: LayerSpec, acts: dict[str, np.ndarray], x: np.ndarray):
    if not l.inputs:
        return [x]
    return [acts[pid] for pid in l.inputs]


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    _, _, oh, ow, _, _ = windows.shape
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def _conv_forward(x, kernel, bias, stride, pad):
    oc = kernel.shape[0]
    cols, oh, ow = _im2col(x, kernel.shape[2], kernel.shape[3], stride, pad)
    out = cols @ kernel.reshape(oc, -1).T + bias
    return out.reshape(x.shape[0], oh, ow, oc).transpose(0, 3, 1, 2), cols


def _conv_backward(x, kernel, stride, pad, g, need_input, need_params,
                   cols=None):
    n, c, h, w = x.shape
    oc, _, kh, kw = kernel.shape
    _, _, oh, ow = g.shape
    gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
    gx = gk = gb = None
    if need_params:
        if cols is None:
            cols, _, _ = _im2col(x, kh, kw, stride, pad)
        gk = (gmat.T @ cols).reshape(oc, c, kh, kw)
        gb = gmat.sum(axis=0)
    if need_input:
        gcols = (gmat @ kernel.reshape(oc, -1)).reshape(n, oh, ow, c, kh, kw)
        # reorder once so each (u, v) slice below is contiguous
        gcols = np.ascontiguousarray(gcols.transpose(0, 3, 4, 5, 1, 2))
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u:u + stride * oh:stride, v:v + stride * ow:stride] += \
                    gcols[:, :, u, v]
        gx = gxp[:, :, pad:pad + h, pad:pad + w]
    return gx, gk, gb


def _pool_windows(x, window, stride):
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = win.shape
    return win.reshape(n, c, oh, ow, window * window), oh, ow


def _maxpool_forward(x, window, stride):
    flat, _, _ = _pool_windows(x, window, stride)
    idx = flat.argmax(axis=-1)  # first occurrence wins: lowest-index tie-break
    return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]


def _maxpool_backward(x, window, stride, g):
    n, c, h, w = x.shape
    _, _, oh, ow = g.shape
    if stride == window and h == oh * window and w == ow * window:
        # non-overlapping tiling: scatter without the slow add.at path
        tiles = x.reshape(n, c, oh, window, ow, window) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, window * window)
        idx = tiles.argmax(axis=-1)
        gx = np.zeros_like(tiles)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return gx.reshape(n, c, oh, ow, window, window) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    flat, _, _ = _pool_windows(x, window, stride)
    idx = flat.argmax(axis=-1)
    rows = (np.arange(oh) * stride)[None, None, :, None] + idx // window
    cols = (np.arange(ow) * stride)[None, None, None, :] + idx % window
    gx = np.zeros_like(x)
    np.add.at(gx, (np.arange(n)[:, None, None, None],
                   np.arange(c)[None, :, None, None], rows, cols), g)
    return gx


def _avgpool_backward(x, window, stride, g):
    n, c, h, w = x.shape
    _, _, oh, ow = g.shape
    share = g / (window * window)
    gx = np.zeros_like(x)
    for u in range(window):
        for v in range(window):
            gx[:, :, u:u + stride * oh:stride, v:v + stride * ow:stride] += share
    return gx


def _softmax_forward(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward(model: Model, x: np.ndarray) -> ForwardTrace:
    """Run the network on a batch, recording every layer's output.

    ``x`` must be (N, C, H, W) with (C, H, W) equal to the spec input shape
    and contain only finite values.
    """
    spec = model.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or tuple(x.shape[1:]) != spec.input_shape:
        raise ValueError(
            f"input shape {x.shape} does not match (N,)+{spec.input_shape}")
    if not np.isfinite(x).all():
        raise ValueError("input contains NaN or Inf")
    acts: dict[str, np.ndarray] = {}
    conv_cols: dict[str, np.ndarray] = {}
    for l in spec.layers:
        ins = _layer_inputs(l, acts, x)
        if l.kind == "InputNorm":
            mean = np.asarray(l.params["mean"])[None, :, None, None]
            acts[l.id] = (ins[0] - mean) * l.params["scale"]
        elif l.kind == "Conv2D":
            wts = model.weights[l.id]
            acts[l.id], cols = _conv_forward(ins[0], wts["kernel"], wts["bias"],
                                             l.params["stride"], l.params["pad"])
            conv_cols[l.id] = cols
        elif l.kind == "ReLU":
            acts[l.id] = np.maximum(ins[0], 0.0)
        elif l.kind == "MaxPool":
            acts[l.id] = _maxpool_forward(ins[0], l.params["window"], l.params["stride"])
        elif l.kind == "AvgPool":
            flat, _, _ = _pool_windows(ins[0], l.params["window"], l.params["stride"])
            acts[l.id] = flat.mean(axis=-1)
        elif l.kind == "Flatten":
            acts[l.id] = ins[0].reshape(ins[0].shape[0], -1)
        elif l.kind == "FullyConnected":
            wts = model.weights[l.id]
            acts[l.id] = ins[0] @ wts["weight"] + wts["bias"]
        elif l.kind == "Concat":
            acts[l.id] = np.concatenate(ins, axis=1)
        elif l.kind == "Softmax":
            acts[l.id] = _softmax_forward(ins[0])
    logits = acts[spec.logits_layer_id]
    predicted = np.argmax(logits, axis=1)
    return ForwardTrace(activations=acts, logits=logits,
                        predicted_labels=predicted, conv_cols=conv_cols)


def backward(model: Model, x: np.ndarray, trace: ForwardTrace,
             seeds: dict[str, np.ndarray], *, need_input: bool = True,
             need_params: bool = False):
    """Reverse-mode sweep from output cotangents ("seeds") to gradients.

    ``seeds`` maps layer id -> d(objective)/d(that layer's output), shaped
    like the recorded activation.  Returns ``(grad_x, param_grads)`` where
    either element is None when not requested.
    """
    spec = model.spec
    grad: dict[str, np.ndarray] = {}
    for lid, s in seeds.items():
        if lid not in trace.activations:
            raise ValueError(f"seed references unknown layer {lid!r}")
        if s.shape != trace.activations[lid].shape:
            raise ValueError(f"seed for {lid!r} has shape {s.shape}, "
                             f"expected {trace.activations[lid].shape}")
        grad[lid] = s.copy()
    gx = np.zeros_like(x) if need_input else None
    pgrads: dict[str, dict[str, np.ndarray]] = {} if need_params else None

    def send(target: str | None, value: np.ndarray) -> None:
        if target is None:
            if need_input:
                np.add(gx, value, out=gx)
        elif target in grad:
            grad[target] += value
        else:
            grad[target] = value.copy()

    for l in reversed(spec.layers):
        g = grad.pop(l.id, None)
        if g is None:
            continue
        targets = list(l.inputs) if l.inputs else [None]
        ins = _layer_inputs(l, trace.activations, x)
        if l.kind == "InputNorm":
            send(targets[0], g * l.params["scale"])
        elif l.kind == "Conv2D":
            wts = model.weights[l.id]
            want_in = need_input or targets[0] is not None
            gin, gk, gb = _conv_backward(ins[0], wts["kernel"], l.params["stride"],
                                         l.params["pad"], g, want_in, need_params,
                                         cols=trace.conv_cols.get(l.id))
            if need_params:
                pgrads[l.id] = {"kernel": gk, "bias": gb}
            if gin is not None:
                send(targets[0], gin)
        elif l.kind == "ReLU":
            send(targets[0], g * (ins[0] > 0))
        elif l.kind == "MaxPool":
            send(targets[0], _maxpool_backward(ins[0], l.params["window"],
                                               l.params["stride"], g))
        elif l.kind == "AvgPool":
            send(targets[0], _avgpool_backward(ins[0], l.params["window"],
                                               l.params["stride"], g))
        elif l.kind == "Flatten":
            send(targets[0], g.reshape(ins[0].shape))
        elif l.kind == "FullyConnected":
            wts = model.weights[l.id]
            if need_params:
                pgrads[l.id] = {"weight": ins[0].T @ g, "bias": g.sum(axis=0)}
            send(targets[0], g @ wts["weight"].T)
        elif l.kind == "Concat":
            offset = 0
            for tgt, a in zip(targets, ins):
                c = a.shape[1]
                send(tgt, g[:, offset:offset + c])
                offset += c
        elif l.kind == "Softmax":
            s = trace.activations[l.id]
            send(targets[0], s * (g - (g * s).sum(axis=1, keepdims=True)))
    return gx, pgrads


def input_gradient(model: Model, x: np.ndarray,
                   objective: Callable[[ForwardTrace], tuple[float, dict[str, np.ndarray]]]
                   ) -> np.ndarray:
    """Gradient of a trace objective w.r.t. the input batch.

    ``objective(trace)`` must return ``(value, seeds)`` with ``seeds`` the
    cotangents of the layer outputs it read.  Max-pool uses the argmax
    subgradient and ReLU uses 0 at negative/zero preactivations, so the
    result is the exact derivative along the realized forward path.
    """
    trace = forward(model, x)
    value, seeds = objective(trace)
    if not np.isfinite(value):
        raise ValueError(f"objective returned non-finite value {value!r}")
    gx, _ = backward(model, x, trace, seeds, need_input=True)
    return gx


def cross_entropy_and_param_gradient(model: Model, batch: np.ndarray,
                                     labels: np.ndarray):
    """Mean cross-entropy over the batch and its weight gradients, one pass.

    The reported loss floors each picked probability at CE_LOG_FLOOR inside
    the log; the gradient is the fused softmax+cross-entropy form
    (probs - onehot)/N seeded directly on the logits, so a saturated wrong
    prediction keeps its full learning signal instead of dying with the
    floored log.
    """
    labels = np.asarray(labels)
    if batch.shape[0] != labels.shape[0]:
        raise ValueError(f"batch of {batch.shape[0]} images with "
                         f"{labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= model.spec.class_count):
        raise ValueError(f"label out of [0, {model.spec.class_count})")
    trace = forward(model, batch)
    probs = trace.activations[model.spec.output_layer_id]
    n = probs.shape[0]
    picked = np.maximum(probs[np.arange(n), labels], CE_LOG_FLOOR)
    loss = float(-np.log(picked).mean())
    logit_seed = probs.copy()
    logit_seed[np.arange(n), labels] -= 1.0
    logit_seed /= n
    _, pgrads = backward(model, batch, trace,
                         {model.spec.logits_layer_id: logit_seed},
                         need_input=False, need_params=True)
    return loss, pgrads


def param_gradient(model: Model, batch: np.ndarray,
                   labels: np.ndarray) -> dict[str, dict[str, np.ndarray]]:
    """Gradients of mean cross-entropy w.r.t. every weight tensor."""
    _, pgrads = cross_entropy_and_param_gradient(model, batch, labels)
    return pgrads
